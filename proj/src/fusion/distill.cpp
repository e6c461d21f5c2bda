#include "afl/fusion/distill.hpp"

#include <cmath>
#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::fusion {

std::vector<Matrix> teacher_targets(const lm::Predictor& teacher, const Dataset& data)
{
    std::vector<Matrix> out;
    out.reserve(data.size());
    for (const auto& seq : data) {
        const auto probs = teacher.predict(seq);
        Matrix rows(seq.masked_count(), probs.cols());
        std::size_t r = 0;
        for (std::size_t t = 0; t < seq.length(); ++t) {
            if (seq.mask[t]) {
                std::copy(probs.row(t).begin(), probs.row(t).end(), rows.row(r++).begin());
            }
        }
        out.push_back(std::move(rows));
    }
    return out;
}

DistillObjective::DistillObjective(const BaseLM& base, experts::LoraAdapter student_template, const Dataset& train,
                                   std::vector<Matrix> train_targets, const Dataset& val, std::vector<Matrix> val_targets,
                                   double dropout)
    : base_(base),
      template_(std::move(student_template)),
      train_(train),
      train_targets_(std::move(train_targets)),
      val_(val),
      val_targets_(std::move(val_targets)),
      dropout_(dropout)
{
    require(train_.size() == train_targets_.size() && val_.size() == val_targets_.size(), ErrorKind::shape_mismatch,
            "teacher targets do not match data");
    template_.check_compatible(base_);
}

double DistillObjective::run(const Dataset& data, const std::vector<Matrix>& targets, std::span<const double> params,
                             std::span<const std::size_t> items, std::span<double> grad, num::Rng* rng) const
{
    const auto student = experts::unflatten(experts::ParamVector(params.begin(), params.end()), template_);
    auto dstudent = experts::LoraAdapter::zeros(base_, student.rank, student.alpha);
    const bool backward = !grad.empty();
    experts::LoraHook hook(student, backward ? &dstudent : nullptr, rng ? dropout_ : 0.0, rng);

    const std::size_t count = lm::masked_count(data, items);
    require(count > 0, ErrorKind::invalid_argument, "no masked positions in batch");
    const double scale = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (auto idx : items) {
        const auto& seq = data[idx];
        const auto& q = targets[idx];
        const auto tr = lm::run_forward(base_, seq.inputs, &hook);
        Matrix dlogits(seq.length(), tr.probs.cols());
        std::size_t r = 0;
        for (std::size_t t = 0; t < seq.length(); ++t) {
            if (!seq.mask[t]) {
                continue;
            }
            const auto logp = num::log_softmax(tr.logits.row(t));
            const auto qr = q.row(r++);
            for (std::size_t v = 0; v < qr.size(); ++v) {
                total -= qr[v] * logp[v];
                dlogits(t, v) = scale * (tr.probs(t, v) - qr[v]);
            }
        }
        if (backward) {
            lm::run_backward(base_, tr, dlogits, &hook);
        }
    }
    if (backward) {
        const auto flat = experts::flatten(dstudent);
        std::copy(flat.begin(), flat.end(), grad.begin());
    }
    return total * scale;
}

double DistillObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                                   num::Rng& rng)
{
    return run(train_, train_targets_, params, items, grad, dropout_ > 0.0 ? &rng : nullptr);
}

double DistillObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    return run(train_, train_targets_, params, items, {}, nullptr);
}

double DistillObjective::validation_loss(std::span<const double> params)
{
    const bool has_val = !val_.empty();
    const Dataset& set = has_val ? val_ : train_;
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    return run(set, has_val ? val_targets_ : train_targets_, params, all, {}, nullptr);
}

double DistillObjective::mean_kl(std::span<const double> params) const
{
    std::vector<std::size_t> all(train_.size());
    std::iota(all.begin(), all.end(), 0);
    const double cross = run(train_, train_targets_, params, all, {}, nullptr);
    double entropy = 0.0;
    std::size_t count = 0;
    for (const auto& q : train_targets_) {
        for (double v : q.flat()) {
            if (v > 0.0) {
                entropy -= v * std::log(v);
            }
        }
        count += q.rows();
    }
    return cross - entropy / static_cast<double>(count);
}

DistillResult distill(const EnsembleSpec& teacher, const BaseLM& base, const Dataset& train, const Dataset& val,
                      const TrainHyper& hyper, experts::LoraAdapter student_init, double dropout)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    teacher.validate();
    EnsemblePredictor predictor(base, teacher);
    DistillObjective obj(base, student_init, train, teacher_targets(predictor, train), val, teacher_targets(predictor, val),
                         dropout);
    DistillResult res;
    const auto init = experts::flatten(student_init);
    res.initial_kl = obj.mean_kl(init);
    const auto params = fit(obj, init, hyper, &res.fit);
    res.final_kl = obj.mean_kl(params);
    res.student = experts::unflatten(params, student_init);
    return res;
}

}  // namespace afl::fusion
