#pragma once

#include <span>
#include <vector>

#include "afl/experts/library.hpp"
#include "afl/fusion/ensemble.hpp"
#include "afl/fusion/trainer.hpp"

namespace afl::fusion {

/// Teacher distributions restricted to masked positions, one matrix per example.
std::vector<Matrix> teacher_targets(const lm::Predictor& teacher, const Dataset& data);

/// Soft-target cross-entropy −Σ_v q_v log p_v of a student adapter against
/// fixed teacher distributions. Parameters are flatten(student).
class DistillObjective final : public Objective {
public:
    DistillObjective(const BaseLM& base, experts::LoraAdapter student_template, const Dataset& train,
                     std::vector<Matrix> train_targets, const Dataset& val, std::vector<Matrix> val_targets, double dropout);

    std::size_t param_count() const override { return template_.param_count(); }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

    /// Mean KL(teacher ‖ student) per masked token over the training set.
    double mean_kl(std::span<const double> params) const;

private:
    double run(const Dataset& data, const std::vector<Matrix>& targets, std::span<const double> params,
               std::span<const std::size_t> items, std::span<double> grad, num::Rng* rng) const;

    const BaseLM& base_;
    experts::LoraAdapter template_;
    const Dataset& train_;
    std::vector<Matrix> train_targets_;
    const Dataset& val_;
    std::vector<Matrix> val_targets_;
    double dropout_;
};

struct DistillResult {
    experts::LoraAdapter student;
    double initial_kl = 0.0;
    double final_kl = 0.0;
    FitReport fit;
};

/// Trains `student_init` to match the teacher ensemble's distributions.
DistillResult distill(const EnsembleSpec& teacher, const BaseLM& base, const Dataset& train, const Dataset& val,
                      const TrainHyper& hyper, experts::LoraAdapter student_init, double dropout = 0.0);

}  // namespace afl::fusion
