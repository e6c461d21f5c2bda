#pragma once

#include <cstdint>

#include "afl/experts/library.hpp"
#include "afl/fusion/trainer.hpp"
#include "afl/harness/tasks.hpp"

namespace afl::harness {

using experts::LoraAdapter;
using lm::BaseLM;

struct PretrainHyper {
    std::size_t examples = 4000;   // example passes over the shuffled mixture
    double lr = 3e-3;
    std::size_t batch_size = 16;
};

/// Builds the base model and trains all of its parameters briefly on `mixture`.
BaseLM train_base(const lm::BaseConfig& config, const Dataset& mixture, const PretrainHyper& hyper, std::uint64_t seed);

struct ExpertHyper {
    std::size_t rank = 4;
    double alpha = 16.0;
    double dropout = 0.05;
    double init_std = 0.1;
    fusion::TrainHyper train;
};

/// Next-token cross-entropy of one adapter over a dataset; parameters are flatten(adapter).
class AdapterObjective final : public fusion::Objective {
public:
    AdapterObjective(const BaseLM& base, LoraAdapter shape, const Dataset& train, const Dataset& val, double dropout);

    std::size_t param_count() const override { return shape_.param_count(); }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

    LoraAdapter adapter(std::span<const double> params) const;

private:
    const BaseLM& base_;
    LoraAdapter shape_;
    const Dataset& train_;
    const Dataset& val_;
    double dropout_;
};

/// A random, B zero; only the adapter factors are trained.
LoraAdapter train_expert(const BaseLM& base, const Dataset& train, const Dataset& val, const ExpertHyper& hyper,
                         std::uint64_t seed, fusion::FitReport* report = nullptr);

/// One adapter on the concatenation of every task's training data.
LoraAdapter train_shared_expert(const BaseLM& base, std::span<const TaskData> tasks, const ExpertHyper& hyper,
                                std::uint64_t seed, fusion::FitReport* report = nullptr);

}  // namespace afl::harness
