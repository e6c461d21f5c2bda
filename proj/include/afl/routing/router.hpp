#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afl/experts/library.hpp"
#include "afl/fusion/trainer.hpp"
#include "afl/lm/forward.hpp"

namespace afl::routing {

using experts::ExpertLibrary;
using experts::LoraAdapter;
using lm::BaseLM;
using lm::Dataset;
using lm::Sequence;
using num::Matrix;

enum class ScoreMode { absolute, plain };
enum class RouterInit { zero, arrow };

std::string to_string(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);
std::string to_string(RouterInit init);
RouterInit parse_router_init(const std::string& name);

/// Linear per-site router: scores = W·h (plain) or |W·h| (absolute), λ = softmax(scores),
/// optionally restricted to the top k. One N × in_dim matrix per adapter site.
struct Router {
    std::vector<Matrix> weights;
    ScoreMode mode = ScoreMode::plain;
    std::size_t top_k = 0;   // 0 means all experts
    std::string init = "zero";
    std::uint64_t fingerprint = 0;

    std::size_t experts() const { return weights.empty() ? 0 : weights[0].rows(); }
    std::size_t site_count() const { return weights.size(); }
    std::size_t param_count() const;

    static Router zeros(const BaseLM& base, std::size_t experts, ScoreMode mode = ScoreMode::plain);

    /// Throws unless the router fits `base` and a library of `experts` adapters.
    void check(const BaseLM& base, std::size_t experts) const;

    std::vector<double> flatten() const;
    void assign(std::span<const double> params);

    /// Binary matrices at `path` plus a JSON sidecar at `path` + ".json".
    void save(const std::filesystem::path& path) const;
    static Router load(const std::filesystem::path& path);
};

/// λ for one hidden state at one site.
std::vector<double> route_coeffs(const Router& router, std::size_t site, std::span<const double> h);

/// Keeps the k largest entries (ties to the lower index) and renormalizes them in place.
void apply_topk_inplace(std::span<double> lambda, std::size_t k);
std::vector<double> apply_topk(std::span<const double> lambda, std::size_t k);

/// Each row is the first right singular vector of the expert's ΔW = A·B at that site.
Router arrow_router(std::span<const LoraAdapter> experts, std::span<const std::string> names);
Router arrow_init(const ExpertLibrary& lib);

/// Per-token input-dependent fusion: A* = Σ λ_i(h) A_i, B* = Σ λ_i(h) B_i at every site.
/// Optionally accumulates router gradients (per-site N × in) and expert factor gradients.
class RoutingHook final : public lm::AdapterHook {
public:
    RoutingHook(std::span<const LoraAdapter> experts, const Router& router, std::vector<Matrix>* router_grad = nullptr,
                std::vector<LoraAdapter>* expert_grads = nullptr);

    void forward(std::size_t site, const Matrix& in, Matrix& out) override;
    void backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in) override;

    /// Coefficients (T × N) used at `site` on the last forward pass.
    const Matrix& coefficients(std::size_t site) const { return cache_[site].lambda; }

private:
    struct SiteStack {
        Matrix b_t;      // in × N·r, column k·r+c is row c of B_k
        Matrix b;        // N·r × in
        Matrix a;        // out × N·r
        Matrix a_t;      // N·r × out
        Matrix w_t;      // in × N
    };
    struct SiteCache {
        Matrix raw, lambda, y, bh, zs;
    };

    std::span<const LoraAdapter> experts_;
    const Router& router_;
    std::vector<Matrix>* router_grad_;
    std::vector<LoraAdapter>* expert_grads_;
    std::size_t n_;
    std::size_t r_;
    double scale_;
    std::vector<SiteStack> stacks_;
    std::vector<SiteCache> cache_;
};

lm::Trace routed_forward(const BaseLM& base, std::span<const LoraAdapter> experts, const Router& router, const Sequence& seq);
lm::Trace routed_forward(const BaseLM& base, const ExpertLibrary& lib, const Router& router, const Sequence& seq);

class RoutedPredictor final : public lm::Predictor {
public:
    RoutedPredictor(const BaseLM& base, std::span<const LoraAdapter> experts, Router router);
    Matrix predict(const Sequence& seq) const override;
    const Router& router() const { return router_; }

private:
    const BaseLM& base_;
    std::span<const LoraAdapter> experts_;
    Router router_;
};

/// Mean token cross-entropy of routed_forward; parameters are Router::flatten().
class RouterObjective final : public fusion::Objective {
public:
    RouterObjective(const BaseLM& base, std::span<const LoraAdapter> experts, Router shape, const Dataset& train, const Dataset& val);

    std::size_t param_count() const override { return shape_.param_count(); }
    std::size_t train_size() const override { return train_.size(); }
    double loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                     num::Rng& rng) override;
    double loss(std::span<const double> params, std::span<const std::size_t> items) override;
    double validation_loss(std::span<const double> params) override;

    Router router(std::span<const double> params) const;

private:
    const BaseLM& base_;
    std::span<const LoraAdapter> experts_;
    Router shape_;
    const Dataset& train_;
    const Dataset& val_;
};

/// Zero init trains a plain-score router; Arrow init starts from arrow_init in absolute mode.
Router fit_router(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val, RouterInit init,
                  const fusion::TrainHyper& hyper, fusion::FitReport* report = nullptr);

}  // namespace afl::routing
