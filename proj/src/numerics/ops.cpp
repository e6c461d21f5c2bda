#include "afl/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

#include "afl/error.hpp"

namespace afl::num {

void softmax_inplace(std::span<double> values)
{
    require(!values.empty(), ErrorKind::invalid_argument, "empty logits");
    const double mx = *std::max_element(values.begin(), values.end());
    double sum = 0.0;
    for (auto& v : values) {
        v = std::exp(v - mx);
        sum += v;
    }
    const double inv = 1.0 / sum;
    for (auto& v : values) {
        v *= inv;
    }
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.begin(), logits.end());
    softmax_inplace(out);
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits)
{
    require(!logits.empty(), ErrorKind::invalid_argument, "empty logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) {
        sum += std::exp(v - mx);
    }
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - lse;
    }
    return out;
}

double cross_entropy(std::span<const double> pred, std::size_t target)
{
    require(target < pred.size(), ErrorKind::invalid_argument, "cross_entropy target out of range");
    return -std::log(pred[target] + kProbClamp);
}

void softmax_ce_grad(std::span<const double> probs, std::size_t target, std::span<double> grad)
{
    const double pt = probs[target];
    const double factor = pt / (pt + kProbClamp);
    for (std::size_t v = 0; v < probs.size(); ++v) {
        grad[v] = factor * (probs[v] - (v == target ? 1.0 : 0.0));
    }
}

void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs, std::span<double> grad_logits)
{
    double inner = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inner += probs[i] * grad_probs[i];
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
        grad_logits[i] = probs[i] * (grad_probs[i] - inner);
    }
}

double kl_divergence(std::span<const double> q, std::span<const double> p)
{
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) {
            kl += q[i] * (std::log(q[i]) - std::log(std::max(p[i], kProbClamp)));
        }
    }
    return kl;
}

}  // namespace afl::num
