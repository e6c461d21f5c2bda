#pragma once

#include <span>
#include <vector>

#include "afl/experts/library.hpp"
#include "afl/fusion/ensemble.hpp"
#include "afl/fusion/simplex.hpp"
#include "afl/fusion/trainer.hpp"

namespace afl::fusion {

using experts::LoraAdapter;

/// Per site at layer l: A* = Σ λ_i^(l) A_i, B* = Σ λ_i^(l) B_i.
LoraAdapter merge_lowrank(const ExpertLibrary& lib, const SimplexWeights& weights, const BaseLM& base);

/// Per site: ΔW* = Σ λ_i (α/r) A_i B_i.
experts::DenseDelta merge_fullrank(const ExpertLibrary& lib, const SimplexWeights& weights, const BaseLM& base);

/// Gradient-trained merging coefficients (global or one row per layer) over
/// the low-rank merge. Parameters are the row-major logits.
class MergeObjective final : public Objective {
public:
    MergeObjective(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val, WeightMode mode);

    std::size_t param_count() const override { return rows_ * lib_.size(); }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

    SimplexWeights weights(std::span<const double> params) const;

private:
    const BaseLM& base_;
    const ExpertLibrary& lib_;
    const Dataset& train_;
    const Dataset& val_;
    WeightMode mode_;
    std::size_t rows_;
};

SimplexWeights fit_merge_weights(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val,
                                 WeightMode mode, const TrainHyper& hyper, FitReport* report = nullptr);

}  // namespace afl::fusion
