#include "afl/fusion/merge.hpp"

#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::fusion {
namespace {

void check_weights(const ExpertLibrary& lib, const SimplexWeights& weights, const BaseLM& base)
{
    require(!lib.empty(), ErrorKind::invalid_argument, "merge over an empty library");
    require(weights.experts() == lib.size(), ErrorKind::shape_mismatch, "merge weights do not match library size");
    if (weights.mode() == WeightMode::per_layer) {
        require(weights.rows() == base.config().layers, ErrorKind::shape_mismatch, "per-layer weights need one row per layer");
    }
    require(lib[0].site_count() == base.site_count(), ErrorKind::mismatch, "adapter/base mismatch: site count differs");
}

}  // namespace

LoraAdapter merge_lowrank(const ExpertLibrary& lib, const SimplexWeights& weights, const BaseLM& base)
{
    check_weights(lib, weights, base);
    LoraAdapter out = lib[0];
    out.task.clear();
    for (std::size_t s = 0; s < out.site_count(); ++s) {
        const auto lambda = weights.for_layer(base.sites()[s].layer);
        out.a[s].fill(0.0);
        out.b[s].fill(0.0);
        for (std::size_t i = 0; i < lib.size(); ++i) {
            if (lambda[i] == 0.0) {
                continue;
            }
            for (std::size_t k = 0; k < out.a[s].size(); ++k) {
                out.a[s].data()[k] += lambda[i] * lib[i].a[s].data()[k];
            }
            for (std::size_t k = 0; k < out.b[s].size(); ++k) {
                out.b[s].data()[k] += lambda[i] * lib[i].b[s].data()[k];
            }
        }
    }
    return out;
}

experts::DenseDelta merge_fullrank(const ExpertLibrary& lib, const SimplexWeights& weights, const BaseLM& base)
{
    check_weights(lib, weights, base);
    experts::DenseDelta out;
    out.fingerprint = lib.fingerprint();
    for (std::size_t s = 0; s < lib[0].site_count(); ++s) {
        const auto lambda = weights.for_layer(base.sites()[s].layer);
        Matrix acc(lib[0].a[s].rows(), lib[0].b[s].cols());
        for (std::size_t i = 0; i < lib.size(); ++i) {
            if (lambda[i] == 0.0) {
                continue;
            }
            acc += lib[i].delta(s) * (lambda[i] * lib[i].scale());
        }
        out.delta.push_back(std::move(acc));
    }
    return out;
}

MergeObjective::MergeObjective(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val,
                               WeightMode mode)
    : base_(base), lib_(lib), train_(train), val_(val), mode_(mode), rows_(mode == WeightMode::global ? 1 : base.config().layers)
{
    require(!lib.empty(), ErrorKind::invalid_argument, "merge over an empty library");
    lib.check_compatible(base);
}

SimplexWeights MergeObjective::weights(std::span<const double> params) const
{
    return SimplexWeights::from_logits(mode_, Matrix(rows_, lib_.size(), std::vector<double>(params.begin(), params.end())));
}

double MergeObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                                 num::Rng&)
{
    const auto w = weights(params);
    const auto merged = merge_lowrank(lib_, w, base_);
    auto dmerged = LoraAdapter::zeros(base_, merged.rank, merged.alpha);
    experts::LoraHook hook(merged, &dmerged);
    const double loss = lm::batch_cross_entropy(base_, train_, items, &hook, true);

    // dL/dλ_i^(row) = Σ_sites ⟨dA*, A_i⟩ + ⟨dB*, B_i⟩
    Matrix dlambda(rows_, lib_.size());
    for (std::size_t s = 0; s < merged.site_count(); ++s) {
        const std::size_t row = mode_ == WeightMode::global ? 0 : base_.sites()[s].layer;
        for (std::size_t i = 0; i < lib_.size(); ++i) {
            dlambda(row, i) += num::dot(dmerged.a[s].flat(), lib_[i].a[s].flat()) + num::dot(dmerged.b[s].flat(), lib_[i].b[s].flat());
        }
    }
    for (std::size_t r = 0; r < rows_; ++r) {
        num::softmax_backward(w.lambda().row(r), dlambda.row(r), grad.subspan(r * lib_.size(), lib_.size()));
    }
    return loss;
}

double MergeObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    const auto merged = merge_lowrank(lib_, weights(params), base_);
    experts::LoraHook hook(merged);
    return lm::batch_cross_entropy(base_, train_, items, &hook, false);
}

double MergeObjective::validation_loss(std::span<const double> params)
{
    const Dataset& set = val_.empty() ? train_ : val_;
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    const auto merged = merge_lowrank(lib_, weights(params), base_);
    experts::LoraHook hook(merged);
    return lm::batch_cross_entropy(base_, set, all, &hook, false);
}

SimplexWeights fit_merge_weights(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val,
                                 WeightMode mode, const TrainHyper& hyper, FitReport* report)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    MergeObjective obj(base, lib, train, val, mode);
    auto logits = fit(obj, std::vector<double>(obj.param_count(), 0.0), hyper, report);
    return obj.weights(logits);
}

}  // namespace afl::fusion
