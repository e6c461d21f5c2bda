#include "afl/fusion/ensemble.hpp"

#include <cmath>
#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::fusion {

std::string to_string(EnsembleLevel level) { return level == EnsembleLevel::probability ? "probability" : "logit"; }

EnsembleLevel parse_ensemble_level(const std::string& name)
{
    if (name == "probability" || name == "prob") {
        return EnsembleLevel::probability;
    }
    if (name == "logit") {
        return EnsembleLevel::logit;
    }
    fail(ErrorKind::invalid_argument, "unknown ensemble level '" + name + "'");
}

void EnsembleSpec::validate() const
{
    require(library != nullptr && !library->empty(), ErrorKind::invalid_argument, "ensemble over an empty library");
    require(weights.mode() == WeightMode::global, ErrorKind::invalid_argument, "ensembling weights must be global, not per-layer");
    require(weights.experts() == library->size(), ErrorKind::shape_mismatch, "ensemble weights do not match library size");
}

Matrix combine_outputs(std::span<const Matrix> outputs, std::span<const double> lambda, EnsembleLevel level)
{
    require(!outputs.empty(), ErrorKind::invalid_argument, "ensemble of zero experts");
    require(outputs.size() == lambda.size(), ErrorKind::shape_mismatch, "ensemble weights do not match expert count");
    Matrix out(outputs[0].rows(), outputs[0].cols());
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        require(outputs[i].rows() == out.rows() && outputs[i].cols() == out.cols(), ErrorKind::shape_mismatch,
                "expert outputs differ in shape");
        if (lambda[i] == 0.0) {
            continue;
        }
        for (std::size_t k = 0; k < out.size(); ++k) {
            out.data()[k] += lambda[i] * outputs[i].data()[k];
        }
    }
    if (level == EnsembleLevel::logit) {
        for (std::size_t t = 0; t < out.rows(); ++t) {
            num::softmax_inplace(out.row(t));
        }
    }
    return out;
}

Matrix ensemble_predict(const EnsembleSpec& spec, const BaseLM& base, const Sequence& seq)
{
    spec.validate();
    std::vector<Matrix> outs;
    outs.reserve(spec.library->size());
    for (const auto& expert : spec.library->experts()) {
        auto tr = experts::forward(base, &expert, seq);
        outs.push_back(spec.level == EnsembleLevel::probability ? std::move(tr.probs) : std::move(tr.logits));
    }
    return combine_outputs(outs, spec.weights.for_layer(0), spec.level);
}

EnsemblePredictor::EnsemblePredictor(const BaseLM& base, EnsembleSpec spec) : base_(base), spec_(std::move(spec))
{
    spec_.validate();
    spec_.library->check_compatible(base_);
}

std::vector<Matrix> expert_target_probs(const BaseLM& base, const ExpertLibrary& lib, const Dataset& data)
{
    std::vector<Matrix> out;
    out.reserve(data.size());
    for (const auto& seq : data) {
        out.emplace_back(seq.masked_count(), lib.size());
    }
    for (std::size_t i = 0; i < lib.size(); ++i) {
        experts::LoraHook hook(lib[i]);
        for (std::size_t e = 0; e < data.size(); ++e) {
            const auto& seq = data[e];
            const auto tr = lm::run_forward(base, seq.inputs, &hook);
            std::size_t row = 0;
            for (std::size_t t = 0; t < seq.length(); ++t) {
                if (seq.mask[t]) {
                    out[e](row++, i) = tr.probs(t, seq.targets[t]);
                }
            }
        }
    }
    return out;
}

EnsembleObjective::EnsembleObjective(std::vector<Matrix> train_probs, std::vector<Matrix> val_probs, double sparsity)
    : train_(std::move(train_probs)), val_(std::move(val_probs)), experts_(0), sparsity_(sparsity)
{
    require(!train_.empty(), ErrorKind::invalid_argument, "empty training data");
    experts_ = train_[0].cols();
}

double EnsembleObjective::evaluate(const std::vector<Matrix>& set, std::span<const double> params,
                                   std::span<const std::size_t> items, std::span<double> grad, bool penalize)
{
    const auto lambda = num::softmax(params);
    std::vector<double> dlambda(experts_, 0.0);
    double total = 0.0;
    std::size_t count = 0;
    for (auto idx : items) {
        count += set[idx].rows();
    }
    require(count > 0, ErrorKind::invalid_argument, "no masked positions in batch");
    const double inv = 1.0 / static_cast<double>(count);
    for (auto idx : items) {
        const auto& probs = set[idx];
        for (std::size_t r = 0; r < probs.rows(); ++r) {
            const auto p = probs.row(r);
            const double mix = num::dot(lambda, p) + num::kProbClamp;
            total -= std::log(mix);
            if (!grad.empty()) {
                for (std::size_t i = 0; i < experts_; ++i) {
                    dlambda[i] -= inv * p[i] / mix;
                }
            }
        }
    }
    double loss = total * inv;
    if (penalize && sparsity_ > 0.0) {
        for (std::size_t i = 0; i < experts_; ++i) {
            const double root = std::sqrt(lambda[i] + num::kProbClamp);
            loss += sparsity_ * root;
            dlambda[i] += sparsity_ * 0.5 / root;
        }
    }
    if (!grad.empty()) {
        num::softmax_backward(lambda, dlambda, grad);
    }
    return loss;
}

double EnsembleObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                                    num::Rng&)
{
    return evaluate(train_, params, items, grad, true);
}

double EnsembleObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    return evaluate(train_, params, items, {}, true);
}

double EnsembleObjective::validation_loss(std::span<const double> params)
{
    std::vector<std::size_t> all(val_.size());
    std::iota(all.begin(), all.end(), 0);
    return evaluate(val_, params, all, {}, false);
}

SimplexWeights fit_ensemble_weights(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val,
                                    const TrainHyper& hyper, double sparsity, FitReport* report)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    require(!lib.empty(), ErrorKind::invalid_argument, "ensemble over an empty library");
    lib.check_compatible(base);
    EnsembleObjective obj(expert_target_probs(base, lib, train), expert_target_probs(base, lib, val.empty() ? train : val), sparsity);
    auto logits = fit(obj, std::vector<double>(lib.size(), 0.0), hyper, report);
    return SimplexWeights::from_logits(WeightMode::global, Matrix(1, lib.size(), std::move(logits)));
}

}  // namespace afl::fusion
