#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afl/lm/forward.hpp"
#include "afl/lm/model.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::experts {

using lm::BaseLM;
using lm::Sequence;
using num::Matrix;

/// Low-rank update per site: ΔW = A·B with A (out × r) and B (r × in),
/// applied as (alpha / r) · A·(B·h).
struct LoraAdapter {
    std::vector<Matrix> a;
    std::vector<Matrix> b;
    std::size_t rank = 4;
    double alpha = 16.0;
    std::uint64_t fingerprint = 0;
    std::string task;

    double scale() const { return alpha / static_cast<double>(rank); }
    std::size_t site_count() const { return a.size(); }
    std::size_t param_count() const;

    static LoraAdapter zeros(const BaseLM& base, std::size_t rank, double alpha);
    /// A ~ N(0, init_std²), B = 0, so the initial update is exactly zero.
    static LoraAdapter for_training(const BaseLM& base, std::size_t rank, double alpha, num::Rng& rng, double init_std = 0.1);

    /// Throws ErrorKind::mismatch ("adapter/base mismatch") on fingerprint or layout disagreement.
    void check_compatible(const BaseLM& base) const;
    /// Unscaled A·B at one site.
    Matrix delta(std::size_t site) const;

    void save(const std::filesystem::path& path) const;
    static LoraAdapter load(const std::filesystem::path& path);

    bool operator==(const LoraAdapter&) const = default;
};

/// Dense per-site update applied as out += ΔW·h (scaling already folded in).
struct DenseDelta {
    std::vector<Matrix> delta;
    std::uint64_t fingerprint = 0;
};

/// Applies one adapter; optionally accumulates dL/dA, dL/dB into `grads`
/// (same shapes) and applies inverted dropout to the adapter branch input.
class LoraHook final : public lm::AdapterHook {
public:
    explicit LoraHook(const LoraAdapter& adapter, LoraAdapter* grads = nullptr, double dropout = 0.0, num::Rng* rng = nullptr);

    void forward(std::size_t site, const Matrix& in, Matrix& out) override;
    void backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in) override;

private:
    const LoraAdapter& adapter_;
    LoraAdapter* grads_;
    double dropout_;
    num::Rng* rng_;
    std::vector<Matrix> at_;      // Aᵀ per site (r × out)
    std::vector<Matrix> bt_;      // Bᵀ per site (in × r)
    std::vector<Matrix> masks_;   // dropout keep factors per site
    std::vector<Matrix> dropped_; // masked input per site
    std::vector<Matrix> mid_;     // B·h per site (T × r)
};

class DenseDeltaHook final : public lm::AdapterHook {
public:
    explicit DenseDeltaHook(const DenseDelta& delta);
    void forward(std::size_t site, const Matrix& in, Matrix& out) override;
    void backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in) override;

private:
    const DenseDelta& delta_;
    std::vector<Matrix> transposed_;
};

/// Forward under an optional adapter (no adapter means the frozen base).
lm::Trace forward(const BaseLM& base, const LoraAdapter* adapter, const Sequence& seq);

class AdapterPredictor final : public lm::Predictor {
public:
    AdapterPredictor(const BaseLM& base, const LoraAdapter& adapter);
    Matrix predict(const Sequence& seq) const override;

private:
    const BaseLM& base_;
    const LoraAdapter& adapter_;
};

class DenseDeltaPredictor final : public lm::Predictor {
public:
    DenseDeltaPredictor(const BaseLM& base, DenseDelta delta);
    Matrix predict(const Sequence& seq) const override;

private:
    const BaseLM& base_;
    DenseDelta delta_;
};

}  // namespace afl::experts
