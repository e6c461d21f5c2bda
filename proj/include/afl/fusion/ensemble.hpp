#pragma once

#include <span>
#include <string>
#include <vector>

#include "afl/experts/library.hpp"
#include "afl/fusion/simplex.hpp"
#include "afl/fusion/trainer.hpp"
#include "afl/lm/forward.hpp"

namespace afl::fusion {

using Dataset = std::vector<lm::Sequence>;
using experts::ExpertLibrary;
using lm::BaseLM;
using lm::Sequence;

enum class EnsembleLevel { probability, logit };

std::string to_string(EnsembleLevel level);
EnsembleLevel parse_ensemble_level(const std::string& name);

/// Output-level combination of every expert in a library.
struct EnsembleSpec {
    const ExpertLibrary* library = nullptr;
    SimplexWeights weights;
    EnsembleLevel level = EnsembleLevel::probability;

    void validate() const;
};

/// probability level: Σ λ_i p_i; logit level: softmax(Σ λ_i z_i).
Matrix combine_outputs(std::span<const Matrix> outputs, std::span<const double> lambda, EnsembleLevel level);

Matrix ensemble_predict(const EnsembleSpec& spec, const BaseLM& base, const Sequence& seq);

class EnsemblePredictor final : public lm::Predictor {
public:
    EnsemblePredictor(const BaseLM& base, EnsembleSpec spec);
    Matrix predict(const Sequence& seq) const override { return ensemble_predict(spec_, base_, seq); }

private:
    const BaseLM& base_;
    EnsembleSpec spec_;
};

/// Per example, a (masked positions × N) matrix of each expert's probability of the target token.
std::vector<Matrix> expert_target_probs(const BaseLM& base, const ExpertLibrary& lib, const Dataset& data);

/// Learns global probability-level ensembling logits by gradient descent on
/// the mean token cross-entropy. `sparsity` adds ρ·Σ√λ_i to the training loss.
class EnsembleObjective final : public Objective {
public:
    EnsembleObjective(std::vector<Matrix> train_probs, std::vector<Matrix> val_probs, double sparsity = 0.0);

    std::size_t param_count() const override { return experts_; }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

private:
    double evaluate(const std::vector<Matrix>& set, std::span<const double> params, std::span<const std::size_t> items,
                    std::span<double> grad, bool penalize);

    std::vector<Matrix> train_;
    std::vector<Matrix> val_;
    std::size_t experts_;
    double sparsity_;
};

SimplexWeights fit_ensemble_weights(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val,
                                    const TrainHyper& hyper, double sparsity = 0.0, FitReport* report = nullptr);

}  // namespace afl::fusion
