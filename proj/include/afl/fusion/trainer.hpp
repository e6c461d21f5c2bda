#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "afl/numerics/optimizer.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::fusion {

struct TrainHyper {
    std::size_t epochs = 5;
    std::vector<double> lr_grid{1e-3, 1e-4, 1e-5};
    std::size_t batch_size = 16;
    num::OptimizerKind optimizer = num::OptimizerKind::adaptive_moment;
    std::uint64_t seed = 0;
    /// Evaluate the full training loss before and after; fall back to the
    /// initial parameters if training made it worse.
    bool guard_train_loss = true;
};

/// A differentiable training objective over indexable training items.
class Objective {
public:
    virtual ~Objective() = default;

    virtual std::size_t param_count() const = 0;
    virtual std::size_t train_size() const = 0;

    /// Mean loss over `items` (training mode); writes its gradient into `grad`.
    virtual double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                             num::Rng& rng) = 0;
    /// Mean loss over `items` in evaluation mode (no dropout).
    virtual double loss(std::span<const double> params, std::span<const std::size_t> items) = 0;
    virtual double validation_loss(std::span<const double> params) = 0;

    double train_loss(std::span<const double> params);
};

struct FitReport {
    double learning_rate = 0.0;
    std::vector<double> validation_by_lr;
    double validation_loss = 0.0;
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
    std::size_t steps = 0;
    bool reverted = false;
};

/// Runs `epochs` of minibatch training for every learning rate in the grid
/// from the same initialization and keeps the run with the lowest
/// validation loss (ties go to the earlier grid entry).
std::vector<double> fit(Objective& objective, std::vector<double> init, const TrainHyper& hyper, FitReport* report = nullptr);

/// One training run at a fixed learning rate; returns the final parameters.
std::vector<double> train_once(Objective& objective, std::vector<double> params, const TrainHyper& hyper, double lr,
                               std::size_t* steps = nullptr);

}  // namespace afl::fusion
