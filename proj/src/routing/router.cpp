#include "afl/routing/router.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "afl/error.hpp"
#include "afl/lm/binary_io.hpp"
#include "afl/numerics/ops.hpp"
#include "afl/numerics/svd.hpp"

namespace afl::routing {

std::string to_string(ScoreMode mode) { return mode == ScoreMode::absolute ? "absolute" : "plain"; }

ScoreMode parse_score_mode(const std::string& name)
{
    if (name == "absolute") {
        return ScoreMode::absolute;
    }
    if (name == "plain") {
        return ScoreMode::plain;
    }
    fail(ErrorKind::invalid_argument, "unknown score mode '" + name + "'");
}

std::string to_string(RouterInit init) { return init == RouterInit::arrow ? "arrow" : "zero"; }

RouterInit parse_router_init(const std::string& name)
{
    if (name == "arrow") {
        return RouterInit::arrow;
    }
    if (name == "zero") {
        return RouterInit::zero;
    }
    fail(ErrorKind::invalid_argument, "unknown router init '" + name + "'");
}

std::size_t Router::param_count() const
{
    std::size_t n = 0;
    for (const auto& w : weights) {
        n += w.size();
    }
    return n;
}

Router Router::zeros(const BaseLM& base, std::size_t experts, ScoreMode mode)
{
    require(experts >= 1, ErrorKind::invalid_argument, "router needs at least one expert");
    Router r;
    r.mode = mode;
    r.fingerprint = base.fingerprint();
    for (const auto& site : base.sites()) {
        r.weights.emplace_back(experts, site.in_dim);
    }
    return r;
}

void Router::check(const BaseLM& base, std::size_t n) const
{
    require(fingerprint == base.fingerprint(), ErrorKind::mismatch, "adapter/base mismatch: router fingerprint differs");
    require(weights.size() == base.site_count(), ErrorKind::mismatch, "router site count does not match the base");
    for (std::size_t s = 0; s < weights.size(); ++s) {
        require(weights[s].rows() == n, ErrorKind::shape_mismatch, "router rows do not match the library size");
        require(weights[s].cols() == base.sites()[s].in_dim, ErrorKind::shape_mismatch, "router width does not match site input");
    }
    require(top_k <= n, ErrorKind::invalid_argument, "top-k exceeds the number of experts");
}

std::vector<double> Router::flatten() const
{
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& w : weights) {
        out.insert(out.end(), w.flat().begin(), w.flat().end());
    }
    return out;
}

void Router::assign(std::span<const double> params)
{
    require(params.size() == param_count(), ErrorKind::shape_mismatch, "router parameter count mismatch");
    std::size_t off = 0;
    for (auto& w : weights) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(off), w.size(), w.flat().begin());
        off += w.size();
    }
}

void Router::save(const std::filesystem::path& path) const
{
    lm::Blob blob;
    blob.kind = lm::BlobKind::router;
    blob.fingerprint = fingerprint;
    blob.meta = {weights.size(), experts(), mode == ScoreMode::absolute ? 1u : 0u, top_k};
    blob.tensors = weights;
    lm::write_blob(path, blob);

    nlohmann::json side = {{"mode", to_string(mode)}, {"init", init}};
    if (top_k == 0) {
        side["top_k"] = "all";
    } else {
        side["top_k"] = top_k;
    }
    std::ofstream out(path.string() + ".json");
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string() + ".json");
    out << side.dump(2) << '\n';
}

Router Router::load(const std::filesystem::path& path)
{
    auto blob = lm::read_blob(path);
    require(blob.kind == lm::BlobKind::router, ErrorKind::bad_format, "not a router file: " + path.string());
    require(blob.meta.size() == 4 && blob.tensors.size() == blob.meta[0], ErrorKind::bad_format,
            "router header is inconsistent: " + path.string());
    Router r;
    r.fingerprint = blob.fingerprint;
    r.weights = std::move(blob.tensors);
    r.mode = blob.meta[2] == 1 ? ScoreMode::absolute : ScoreMode::plain;
    r.top_k = blob.meta[3];
    for (const auto& w : r.weights) {
        require(w.rows() == blob.meta[1], ErrorKind::bad_format, "router row count differs across sites: " + path.string());
    }
    const auto side_path = path.string() + ".json";
    std::ifstream in(side_path);
    if (in) {
        try {
            const auto side = nlohmann::json::parse(in);
            r.init = side.value("init", r.init);
            require(parse_score_mode(side.at("mode").get<std::string>()) == r.mode, ErrorKind::bad_format,
                    "router sidecar disagrees on score mode: " + side_path);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::bad_format, "bad router sidecar " + side_path + ": " + e.what());
        }
    }
    return r;
}

void apply_topk_inplace(std::span<double> lambda, std::size_t k)
{
    const std::size_t n = lambda.size();
    require(k >= 1 && k <= n, ErrorKind::invalid_argument, "top-k must lie in [1, N]");
    if (k == n) {
        return;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambda[a] > lambda[b]; });
    std::vector<bool> keep(n, false);
    double mass = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        keep[order[i]] = true;
        mass += lambda[order[i]];
    }
    require(mass > 0.0, ErrorKind::numerical, "degenerate routing: selected experts carry no mass");
    const double inv = 1.0 / mass;
    for (std::size_t i = 0; i < n; ++i) {
        lambda[i] = keep[i] ? lambda[i] * inv : 0.0;
    }
}

std::vector<double> apply_topk(std::span<const double> lambda, std::size_t k)
{
    std::vector<double> out(lambda.begin(), lambda.end());
    apply_topk_inplace(out, k);
    return out;
}

std::vector<double> route_coeffs(const Router& router, std::size_t site, std::span<const double> h)
{
    require(site < router.site_count(), ErrorKind::invalid_argument, "site index out of range");
    const Matrix& w = router.weights[site];
    require(h.size() == w.cols(), ErrorKind::shape_mismatch, "hidden state width does not match the router");
    std::vector<double> scores(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double v = num::dot(w.row(i), h);
        scores[i] = router.mode == ScoreMode::absolute ? std::abs(v) : v;
    }
    num::softmax_inplace(scores);
    if (router.top_k != 0) {
        apply_topk_inplace(scores, router.top_k);
    }
    return scores;
}

Router arrow_router(std::span<const LoraAdapter> experts, std::span<const std::string> names)
{
    require(!experts.empty(), ErrorKind::invalid_argument, "Arrow needs at least one expert");
    require(names.size() == experts.size(), ErrorKind::shape_mismatch, "one name per expert");
    Router r;
    r.mode = ScoreMode::absolute;
    r.init = "arrow";
    r.fingerprint = experts[0].fingerprint;
    const std::size_t sites = experts[0].site_count();
    for (std::size_t s = 0; s < sites; ++s) {
        Matrix w(experts.size(), experts[0].b[s].cols());
        for (std::size_t i = 0; i < experts.size(); ++i) {
            const Matrix delta = experts[i].delta(s);
            require(num::frobenius_norm(delta) > 0.0, ErrorKind::numerical,
                    "Arrow: expert '" + names[i] + "' has a zero update at site " + std::to_string(s));
            const auto svd = num::svd_top(delta, 1);
            for (std::size_t j = 0; j < w.cols(); ++j) {
                w(i, j) = svd.v(j, 0);
            }
        }
        r.weights.push_back(std::move(w));
    }
    return r;
}

Router arrow_init(const ExpertLibrary& lib) { return arrow_router(lib.experts(), lib.names()); }

RoutingHook::RoutingHook(std::span<const LoraAdapter> experts, const Router& router, std::vector<Matrix>* router_grad,
                         std::vector<LoraAdapter>* expert_grads)
    : experts_(experts), router_(router), router_grad_(router_grad), expert_grads_(expert_grads)
{
    require(!experts.empty(), ErrorKind::invalid_argument, "routing over an empty library");
    n_ = experts.size();
    r_ = experts[0].rank;
    scale_ = experts[0].scale();
    require(router.experts() == n_, ErrorKind::shape_mismatch, "router rows do not match the library size");
    require(router.site_count() == experts[0].site_count(), ErrorKind::mismatch, "router site count does not match the adapters");
    for (const auto& e : experts) {
        require(e.rank == r_ && e.scale() == scale_ && e.site_count() == router.site_count(), ErrorKind::mismatch,
                "routed experts must share rank, scaling and layout");
    }
    const std::size_t nr = n_ * r_;
    for (std::size_t s = 0; s < router.site_count(); ++s) {
        const std::size_t in = experts[0].b[s].cols();
        const std::size_t out = experts[0].a[s].rows();
        SiteStack st{Matrix(in, nr), Matrix(nr, in), Matrix(out, nr), Matrix(nr, out), router.weights[s].transposed()};
        for (std::size_t k = 0; k < n_; ++k) {
            for (std::size_t c = 0; c < r_; ++c) {
                for (std::size_t j = 0; j < in; ++j) {
                    st.b_t(j, k * r_ + c) = experts[k].b[s](c, j);
                    st.b(k * r_ + c, j) = experts[k].b[s](c, j);
                }
                for (std::size_t i = 0; i < out; ++i) {
                    st.a(i, k * r_ + c) = experts[k].a[s](i, c);
                    st.a_t(k * r_ + c, i) = experts[k].a[s](i, c);
                }
            }
        }
        stacks_.push_back(std::move(st));
    }
    cache_.resize(router.site_count());
}

void RoutingHook::forward(std::size_t site, const Matrix& in, Matrix& out)
{
    const std::size_t T = in.rows();
    const std::size_t m = in.cols();
    const std::size_t nr = n_ * r_;
    const SiteStack& st = stacks_[site];
    SiteCache& c = cache_[site];

    c.raw = Matrix(T, n_);
    num::gemm_acc(in.data(), T, m, st.w_t.data(), n_, c.raw.data());
    c.lambda = c.raw;
    for (std::size_t t = 0; t < T; ++t) {
        auto row = c.lambda.row(t);
        if (router_.mode == ScoreMode::absolute) {
            for (double& v : row) {
                v = std::abs(v);
            }
        }
        num::softmax_inplace(row);
        if (router_.top_k != 0) {
            apply_topk_inplace(row, router_.top_k);
        }
    }

    c.y = Matrix(T, nr);
    num::gemm_acc(in.data(), T, m, st.b_t.data(), nr, c.y.data());
    c.bh = Matrix(T, r_);
    c.zs = Matrix(T, nr);
    for (std::size_t t = 0; t < T; ++t) {
        const double* lam = c.lambda.row(t).data();
        const double* y = c.y.row(t).data();
        double* bh = c.bh.row(t).data();
        for (std::size_t k = 0; k < n_; ++k) {
            for (std::size_t j = 0; j < r_; ++j) {
                bh[j] += lam[k] * y[k * r_ + j];
            }
        }
        double* zs = c.zs.row(t).data();
        for (std::size_t k = 0; k < n_; ++k) {
            const double w = scale_ * lam[k];
            for (std::size_t j = 0; j < r_; ++j) {
                zs[k * r_ + j] = w * bh[j];
            }
        }
    }
    num::gemm_acc(c.zs.data(), T, nr, st.a_t.data(), out.cols(), out.data());
}

void RoutingHook::backward(std::size_t site, const Matrix& in, const Matrix& grad_out, Matrix& grad_in)
{
    const std::size_t T = in.rows();
    const std::size_t m = in.cols();
    const std::size_t n_out = grad_out.cols();
    const std::size_t nr = n_ * r_;
    const SiteStack& st = stacks_[site];
    const SiteCache& c = cache_[site];

    // w_k = A_kᵀ g for every expert, side by side.
    Matrix wk(T, nr);
    num::gemm_acc(grad_out.data(), T, n_out, st.a.data(), nr, wk.data());

    Matrix u(T, nr);       // s·λ_k·A*ᵀg per expert block
    Matrix dscore(T, n_);
    std::vector<double> wstar(r_);
    std::vector<double> dlam(n_);
    for (std::size_t t = 0; t < T; ++t) {
        const double* lam = c.lambda.row(t).data();
        const double* w = wk.row(t).data();
        const double* y = c.y.row(t).data();
        const double* bh = c.bh.row(t).data();
        std::fill(wstar.begin(), wstar.end(), 0.0);
        for (std::size_t k = 0; k < n_; ++k) {
            for (std::size_t j = 0; j < r_; ++j) {
                wstar[j] += lam[k] * w[k * r_ + j];
            }
        }
        for (std::size_t k = 0; k < n_; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < r_; ++j) {
                acc += w[k * r_ + j] * bh[j] + wstar[j] * y[k * r_ + j];
            }
            dlam[k] = scale_ * acc;
            const double f = scale_ * lam[k];
            for (std::size_t j = 0; j < r_; ++j) {
                u(t, k * r_ + j) = f * wstar[j];
            }
        }
        // With the top-k mask fixed, λ is a softmax over the kept scores, so
        // the plain softmax pullback applies (dropped entries have λ = 0).
        auto ds = dscore.row(t);
        num::softmax_backward(c.lambda.row(t), dlam, ds);
        if (router_.mode == ScoreMode::absolute) {
            for (std::size_t k = 0; k < n_; ++k) {
                const double raw = c.raw(t, k);
                ds[k] *= raw > 0.0 ? 1.0 : (raw < 0.0 ? -1.0 : 0.0);
            }
        }
    }

    num::gemm_acc(u.data(), T, nr, st.b.data(), m, grad_in.data());
    num::gemm_acc(dscore.data(), T, n_, router_.weights[site].data(), m, grad_in.data());

    if (router_grad_) {
        num::gemm_tn_acc(dscore.data(), T, n_, in.data(), m, (*router_grad_)[site].data());
    }
    if (expert_grads_) {
        Matrix da(n_out, nr);
        num::gemm_tn_acc(grad_out.data(), T, n_out, c.zs.data(), nr, da.data());
        Matrix db(nr, m);
        num::gemm_tn_acc(u.data(), T, nr, in.data(), m, db.data());
        for (std::size_t k = 0; k < n_; ++k) {
            auto& ga = (*expert_grads_)[k].a[site];
            auto& gb = (*expert_grads_)[k].b[site];
            for (std::size_t j = 0; j < r_; ++j) {
                for (std::size_t i = 0; i < n_out; ++i) {
                    ga(i, j) += da(i, k * r_ + j);
                }
                for (std::size_t i = 0; i < m; ++i) {
                    gb(j, i) += db(k * r_ + j, i);
                }
            }
        }
    }
}

lm::Trace routed_forward(const BaseLM& base, std::span<const LoraAdapter> experts, const Router& router, const Sequence& seq)
{
    router.check(base, experts.size());
    for (const auto& e : experts) {
        e.check_compatible(base);
    }
    RoutingHook hook(experts, router);
    return lm::run_forward(base, seq.inputs, &hook);
}

lm::Trace routed_forward(const BaseLM& base, const ExpertLibrary& lib, const Router& router, const Sequence& seq)
{
    return routed_forward(base, std::span<const LoraAdapter>(lib.experts()), router, seq);
}

RoutedPredictor::RoutedPredictor(const BaseLM& base, std::span<const LoraAdapter> experts, Router router)
    : base_(base), experts_(experts), router_(std::move(router))
{
    router_.check(base_, experts_.size());
    for (const auto& e : experts_) {
        e.check_compatible(base_);
    }
}

Matrix RoutedPredictor::predict(const Sequence& seq) const
{
    RoutingHook hook(experts_, router_);
    return lm::run_forward(base_, seq.inputs, &hook).probs;
}

RouterObjective::RouterObjective(const BaseLM& base, std::span<const LoraAdapter> experts, Router shape, const Dataset& train,
                                 const Dataset& val)
    : base_(base), experts_(experts), shape_(std::move(shape)), train_(train), val_(val)
{
    shape_.check(base, experts.size());
}

Router RouterObjective::router(std::span<const double> params) const
{
    Router r = shape_;
    r.assign(params);
    return r;
}

double RouterObjective::loss_grad(std::span<const double> params, std::span<const std::size_t> items, std::span<double> grad,
                                  num::Rng&)
{
    const Router r = router(params);
    std::vector<Matrix> dw;
    for (const auto& w : r.weights) {
        dw.emplace_back(w.rows(), w.cols());
    }
    RoutingHook hook(experts_, r, &dw);
    const double loss = lm::batch_cross_entropy(base_, train_, items, &hook, true);
    std::size_t off = 0;
    for (const auto& g : dw) {
        std::copy(g.flat().begin(), g.flat().end(), grad.begin() + static_cast<std::ptrdiff_t>(off));
        off += g.size();
    }
    return loss;
}

double RouterObjective::loss(std::span<const double> params, std::span<const std::size_t> items)
{
    const Router r = router(params);
    RoutingHook hook(experts_, r);
    return lm::batch_cross_entropy(base_, train_, items, &hook, false);
}

double RouterObjective::validation_loss(std::span<const double> params)
{
    const Dataset& set = val_.empty() ? train_ : val_;
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    const Router r = router(params);
    RoutingHook hook(experts_, r);
    return lm::batch_cross_entropy(base_, set, all, &hook, false);
}

Router fit_router(const BaseLM& base, const ExpertLibrary& lib, const Dataset& train, const Dataset& val, RouterInit init,
                  const fusion::TrainHyper& hyper, fusion::FitReport* report)
{
    require(!train.empty(), ErrorKind::invalid_argument, "empty training data");
    lib.check_compatible(base);
    Router start = init == RouterInit::arrow ? arrow_init(lib) : Router::zeros(base, lib.size(), ScoreMode::plain);
    start.init = to_string(init);
    start.top_k = 0;
    RouterObjective obj(base, lib.experts(), start, train, val);
    const auto params = fit(obj, start.flatten(), hyper, report);
    return obj.router(params);
}

}  // namespace afl::routing
