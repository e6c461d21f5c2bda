#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afl/lm/batch.hpp"
#include "afl/lm/model.hpp"

namespace afl::lm {

/// Per-site extension point. `forward` adds the adapter update for every row of
/// `in` (the hidden state entering the site) into `out`; `backward` receives
/// dL/d(out), accumulates whatever parameter gradients it owns and adds
/// dL/d(in) into `grad_in`. Calls arrive in site order on forward and reverse
/// site order on backward, one sequence at a time.
class AdapterHook {
public:
    virtual ~AdapterHook() = default;
    virtual void forward(std::size_t site, const Matrix& in, Matrix& out) = 0;
    virtual void backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in) = 0;
};

struct LayerTrace {
    Matrix x_in, a, q, k, p, c, x_mid, f, u, g;
    std::vector<double> a_rstd, f_rstd;
};

struct Trace {
    std::vector<Token> tokens;
    std::vector<LayerTrace> layers;
    Matrix x_out, z;
    std::vector<double> z_rstd;
    Matrix logits;
    Matrix probs;

    /// Hidden states entering `site`, one row per position.
    const Matrix& site_input(std::size_t site) const;
};

Trace run_forward(const BaseLM& base, std::span<const Token> tokens, AdapterHook* hook = nullptr);

/// Back-propagate dL/dlogits. `base_grad` (same layout as base.params()) is
/// filled only when non-empty.
void run_backward(const BaseLM& base, const Trace& trace, const Matrix& grad_logits, AdapterHook* hook,
                  std::span<double> base_grad = {});

/// Mean masked cross-entropy over `items`. With `backward` set, gradients of
/// that mean flow into the hook (and into `base_grad` when non-empty).
double batch_cross_entropy(const BaseLM& base, const Dataset& data, std::span<const std::size_t> items, AdapterHook* hook,
                           bool backward, std::span<double> base_grad = {});

/// Interface for anything that maps a sequence to per-position next-token distributions.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Matrix predict(const Sequence& seq) const = 0;
};

class BasePredictor final : public Predictor {
public:
    explicit BasePredictor(const BaseLM& base) : base_(base) {}
    Matrix predict(const Sequence& seq) const override { return run_forward(base_, seq.inputs).probs; }

private:
    const BaseLM& base_;
};

}  // namespace afl::lm
