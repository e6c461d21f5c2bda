#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace afl::num {

inline constexpr double kProbClamp = 1e-12;

/// Numerically stable softmax (max-subtracted). Throws on empty input.
std::vector<double> softmax(std::span<const double> logits);
void softmax_inplace(std::span<double> values);
std::vector<double> log_softmax(std::span<const double> logits);

/// -log(pred[target] + 1e-12), in nats.
double cross_entropy(std::span<const double> pred, std::size_t target);

/// d/dz of cross_entropy(softmax(z), target) given p = softmax(z); honours the clamp.
void softmax_ce_grad(std::span<const double> probs, std::size_t target, std::span<double> grad);

/// Pull a gradient w.r.t. softmax outputs back to its logits: g_z = p ⊙ (g_p − ⟨p, g_p⟩).
void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs, std::span<double> grad_logits);

/// Σ q log(q / p) with 0·log 0 = 0.
double kl_divergence(std::span<const double> q, std::span<const double> p);

}  // namespace afl::num
