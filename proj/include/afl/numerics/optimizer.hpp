#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace afl::num {

enum class OptimizerKind { plain_gradient, adaptive_moment };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

/// First-order optimizer over one flat parameter block.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind = OptimizerKind::adaptive_moment, double learning_rate = 1e-3)
        : kind_(kind), lr_(learning_rate)
    {
    }

    void step(std::span<double> params, std::span<const double> grads);

    OptimizerKind kind() const noexcept { return kind_; }
    double learning_rate() const noexcept { return lr_; }
    std::size_t steps() const noexcept { return t_; }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

private:
    OptimizerKind kind_;
    double lr_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace afl::num
