#include "afl/numerics/optimizer.hpp"

#include <cmath>

#include "afl/error.hpp"

namespace afl::num {

OptimizerKind parse_optimizer_kind(const std::string& name)
{
    if (name == "adam" || name == "adaptive-moment") {
        return OptimizerKind::adaptive_moment;
    }
    if (name == "sgd" || name == "plain-gradient") {
        return OptimizerKind::plain_gradient;
    }
    fail(ErrorKind::invalid_argument, "unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adaptive_moment ? "adam" : "sgd"; }

void Optimizer::step(std::span<double> params, std::span<const double> grads)
{
    require(params.size() == grads.size(), ErrorKind::shape_mismatch, "optimizer: parameter/gradient size mismatch");
    if (t_ == 0) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    }
    require(m_.size() == params.size(), ErrorKind::shape_mismatch, "optimizer: parameter block changed size");
    ++t_;

    if (kind_ == OptimizerKind::plain_gradient) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i] -= lr_ * grads[i];
        }
        return;
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
        v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon);
    }
}

}  // namespace afl::num
