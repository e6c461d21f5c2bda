#include "afl/fusion/trainer.hpp"

#include <cmath>
#include <numeric>

#include "afl/error.hpp"
#include "afl/numerics/matrix.hpp"

namespace afl::fusion {

double Objective::train_loss(std::span<const double> params)
{
    std::vector<std::size_t> all(train_size());
    std::iota(all.begin(), all.end(), 0);
    return loss(params, all);
}

std::vector<double> train_once(Objective& objective, std::vector<double> params, const TrainHyper& hyper, double lr,
                               std::size_t* steps)
{
    require(objective.train_size() > 0, ErrorKind::invalid_argument, "empty training data");
    require(params.size() == objective.param_count(), ErrorKind::shape_mismatch, "initial parameters have the wrong size");
    require(hyper.batch_size >= 1, ErrorKind::invalid_argument, "batch size must be >= 1");

    num::Optimizer opt(hyper.optimizer, lr);
    num::Rng order_rng = num::Rng::derive(hyper.seed, "batch-order");
    num::Rng noise_rng = num::Rng::derive(hyper.seed, "dropout");
    std::vector<std::size_t> order(objective.train_size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(params.size());
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = objective.loss_grad(params, std::span(order).subspan(start, end - start), grad, noise_rng);
            require(std::isfinite(loss) && num::all_finite(grad), ErrorKind::numerical,
                    "training diverged (non-finite loss) at step " + std::to_string(step));
            opt.step(params, grad);
            ++step;
        }
    }
    if (steps) {
        *steps = step;
    }
    return params;
}

std::vector<double> fit(Objective& objective, std::vector<double> init, const TrainHyper& hyper, FitReport* report)
{
    require(!hyper.lr_grid.empty(), ErrorKind::invalid_argument, "learning-rate grid is empty");
    FitReport rep;
    std::vector<double> best;
    double best_val = 0.0;
    for (double lr : hyper.lr_grid) {
        std::size_t steps = 0;
        auto params = train_once(objective, init, hyper, lr, &steps);
        const double val = objective.validation_loss(params);
        rep.validation_by_lr.push_back(val);
        if (best.empty() || val < best_val) {
            best = std::move(params);
            best_val = val;
            rep.learning_rate = lr;
            rep.steps = steps;
        }
    }
    rep.validation_loss = best_val;
    if (hyper.guard_train_loss) {
        rep.initial_train_loss = objective.train_loss(init);
        rep.final_train_loss = objective.train_loss(best);
        if (rep.final_train_loss > rep.initial_train_loss) {
            best = std::move(init);
            rep.final_train_loss = rep.initial_train_loss;
            rep.validation_loss = objective.validation_loss(best);
            rep.reverted = true;
        }
    }
    if (report) {
        *report = rep;
    }
    return best;
}

}  // namespace afl::fusion
