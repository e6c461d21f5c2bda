#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "support.hpp"
#include "afl/error.hpp"
#include "afl/fusion/merge.hpp"
#include "afl/numerics/gradcheck.hpp"
#include "afl/numerics/ops.hpp"
#include "afl/routing/hc.hpp"
#include "afl/routing/router.hpp"

using namespace afl;
using namespace afl::routing;
using num::Matrix;

namespace {

std::vector<std::size_t> all_items(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

double objective_gradcheck(fusion::Objective& obj, const std::vector<double>& params)
{
    const auto items = all_items(obj.train_size());
    std::vector<double> grad(params.size(), 0.0);
    num::Rng rng(0);
    obj.loss_grad(params, items, grad, rng);
    const auto fd = num::finite_diff_grad([&](std::span<const double> x) { return obj.loss(x, items); }, params);
    return num::relative_error(fd, grad);
}

Router random_router(const BaseLM& base, std::size_t n, num::Rng& rng, ScoreMode mode, double scale = 1.0)
{
    auto r = Router::zeros(base, n, mode);
    for (auto& w : r.weights) w = test::random_matrix(w.rows(), w.cols(), rng, scale);
    return r;
}

// Absolute scores with every row but `k` zero, restricted to top-1: λ is exactly one-hot.
Router one_hot_router(const BaseLM& base, std::size_t n, std::size_t k, num::Rng& rng)
{
    auto r = Router::zeros(base, n, ScoreMode::absolute);
    for (auto& w : r.weights) {
        for (std::size_t j = 0; j < w.cols(); ++j) w(k, j) = rng.normal();
    }
    r.top_k = 1;
    return r;
}

}  // namespace

TEST_CASE("route_coeffs")
{
    Router r;
    r.weights = {Matrix(3, 2)};
    const auto u = route_coeffs(r, 0, std::vector<double>{0.3, -2.0});
    for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Router two;
    two.weights = {Matrix(2, 1, std::vector<double>{1.0, 0.0})};
    const auto l = route_coeffs(two, 0, std::vector<double>{1.0});
    const double e = std::exp(1.0);
    CHECK(l[0] == doctest::Approx(e / (e + 1)).epsilon(1e-15));
    CHECK(l[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-15));

    two.mode = ScoreMode::absolute;
    const auto la = route_coeffs(two, 0, std::vector<double>{-1.0});
    CHECK(la[0] == doctest::Approx(e / (e + 1)).epsilon(1e-15));
}

TEST_CASE("apply_topk")
{
    const std::vector<double> l{0.5, 0.3, 0.2};
    CHECK(apply_topk(l, 3) == l);
    const auto t = apply_topk(l, 2);
    CHECK(t[0] == 0.625);
    CHECK(t[1] == 0.375);
    CHECK(t[2] == 0.0);
    const std::vector<double> oh{0.0, 1.0, 0.0};
    for (std::size_t k = 1; k <= 3; ++k) CHECK(apply_topk(oh, k) == oh);
    // ties keep the lower index
    const auto tie = apply_topk(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2);
    CHECK(tie == std::vector<double>{0.5, 0.5, 0.0, 0.0});
    try {
        apply_topk(std::vector<double>{0.0, 0.0, 1.0}, 2);
        apply_topk(std::vector<double>{0.0, 0.0}, 1);
        FAIL("expected degenerate routing");
    } catch (const Error& err) {
        CHECK(std::string(err.what()).find("degenerate routing") != std::string::npos);
    }
}

TEST_CASE("arrow rows")
{
    const auto base = test::small_base();
    num::Rng rng(1);

    // ΔW = u vᵀ at every site
    auto ad = experts::LoraAdapter::zeros(base, 2, 4.0);
    std::vector<std::vector<double>> vs;
    for (std::size_t s = 0; s < ad.site_count(); ++s) {
        const auto u = test::random_vector(ad.a[s].rows(), rng);
        const auto v = test::random_vector(ad.b[s].cols(), rng);
        for (std::size_t i = 0; i < u.size(); ++i) ad.a[s](i, 0) = u[i];
        for (std::size_t j = 0; j < v.size(); ++j) ad.b[s](0, j) = v[j];
        vs.push_back(v);
    }
    const std::vector<LoraAdapter> one{ad};
    const std::vector<std::string> names{"e"};
    const auto r = arrow_router(one, names);
    for (std::size_t s = 0; s < ad.site_count(); ++s) {
        const auto row = r.weights[s].row(0);
        CHECK(std::abs(oracle::cosine({row.begin(), row.end()}, vs[s])) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(num::norm2(row) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(r.mode == ScoreMode::absolute);

    // positive rescaling leaves rows unchanged
    auto scaled = ad;
    for (auto& b : scaled.b) b *= 2.0;
    const std::vector<LoraAdapter> two{scaled};
    const auto r2 = arrow_router(two, names);
    for (std::size_t s = 0; s < ad.site_count(); ++s) {
        CHECK(test::max_abs_diff(r.weights[s], r2.weights[s]) <= 1e-12);
    }

    auto zero = ad;
    zero.a[2].fill(0.0);
    const std::vector<LoraAdapter> bad{ad, zero};
    const std::vector<std::string> bad_names{"good", "broken"};
    try {
        arrow_router(bad, bad_names);
        FAIL("expected zero update error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
}

TEST_CASE("arrow rows match the Gram oracle")
{
    const auto base = test::small_base();
    num::Rng rng(2);
    const auto lib = test::random_library(base, 4, rng, 3);
    const auto r = arrow_init(lib);
    for (std::size_t i = 0; i < lib.size(); ++i) {
        for (std::size_t s = 0; s < base.site_count(); ++s) {
            const auto ref = oracle::top_right_singular(lib[i].delta(s));
            const auto row = r.weights[s].row(i);
            CHECK(std::abs(oracle::cosine({row.begin(), row.end()}, ref)) >= 1 - 1e-8);
        }
    }
}

TEST_CASE("routed forward reductions")
{
    const auto base = test::small_base();
    num::Rng rng(3);
    const auto lib = test::random_library(base, 3, rng);
    const auto& ex = lib.experts();
    for (int trial = 0; trial < 5; ++trial) {
        const auto seq = test::random_sequence(8, base.config().vocab, rng);
        for (std::size_t k = 0; k < 3; ++k) {
            const auto r = one_hot_router(base, 3, k, rng);
            const auto routed = routed_forward(base, lib, r, seq).probs;
            CHECK(test::max_abs_diff(routed, experts::AdapterPredictor(base, lib[k]).predict(seq)) <= 1e-10);
        }
        const auto zero = Router::zeros(base, 3);
        const auto merged = fusion::merge_lowrank(lib, fusion::SimplexWeights::uniform(3), base);
        CHECK(test::max_abs_diff(routed_forward(base, lib, zero, seq).probs, experts::AdapterPredictor(base, merged).predict(seq)) <=
              1e-12);

        const std::span<const LoraAdapter> single(ex.data(), 1);
        const auto any = random_router(base, 1, rng, ScoreMode::plain, 3.0);
        CHECK(test::max_abs_diff(routed_forward(base, single, any, seq).probs, experts::AdapterPredictor(base, lib[0]).predict(seq)) <=
              1e-12);
    }
    auto bad = Router::zeros(base, 2);
    CHECK_THROWS_AS(routed_forward(base, lib, bad, test::random_sequence(4, base.config().vocab, rng)), Error);
    auto lib_bad = lib[0];
    lib_bad.fingerprint ^= 3;
    const std::vector<LoraAdapter> mism{lib_bad};
    CHECK_THROWS_AS(routed_forward(base, mism, Router::zeros(base, 1), test::random_sequence(4, base.config().vocab, rng)), Error);
}

TEST_CASE("routing coefficients stay on the simplex")
{
    const auto base = test::small_base();
    num::Rng rng(4);
    const auto lib = test::random_library(base, 4, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto r = random_router(base, 4, rng, trial % 2 ? ScoreMode::plain : ScoreMode::absolute, 2.0);
        r.top_k = trial % 5;
        const auto seq = test::random_sequence(6, base.config().vocab, rng);
        RoutingHook hook(lib.experts(), r);
        lm::run_forward(base, seq.inputs, &hook);
        for (std::size_t s = 0; s < base.site_count(); ++s) {
            const auto& lam = hook.coefficients(s);
            for (std::size_t t = 0; t < lam.rows(); ++t) {
                CHECK_NOTHROW(fusion::check_simplex(lam.row(t)));
                if (r.top_k) {
                    CHECK(std::count_if(lam.row(t).begin(), lam.row(t).end(), [](double v) { return v > 0; }) <=
                          static_cast<long>(r.top_k));
                }
            }
        }
    }
}

TEST_CASE("arrow coefficients ignore row signs")
{
    const auto base = test::small_base();
    num::Rng rng(5);
    const auto lib = test::random_library(base, 3, rng);
    auto r = arrow_init(lib);
    auto flipped = r;
    for (auto& w : flipped.weights) {
        for (std::size_t j = 0; j < w.cols(); ++j) w(1, j) = -w(1, j);
    }
    const auto seq = test::random_sequence(7, base.config().vocab, rng);
    RoutingHook h1(lib.experts(), r);
    RoutingHook h2(lib.experts(), flipped);
    lm::run_forward(base, seq.inputs, &h1);
    lm::run_forward(base, seq.inputs, &h2);
    for (std::size_t s = 0; s < base.site_count(); ++s) {
        CHECK(test::max_abs_diff(h1.coefficients(s), h2.coefficients(s)) <= 1e-12);
    }
}

TEST_CASE("router objective gradient")
{
    const auto base = test::small_base();
    num::Rng rng(6);
    const auto lib = test::random_library(base, 3, rng);
    const auto data = test::random_dataset(3, base.config().vocab, rng);
    for (auto mode : {ScoreMode::plain, ScoreMode::absolute}) {
        for (std::size_t k : {0u, 2u}) {
            auto shape = Router::zeros(base, 3, mode);
            shape.top_k = k;
            RouterObjective obj(base, lib.experts(), shape, data, data);
            const auto params = random_router(base, 3, rng, mode).flatten();
            CHECK_MESSAGE(objective_gradcheck(obj, params) <= 1e-6, to_string(mode) << " k=" << k);
        }
    }
}

TEST_CASE("identical experts make the router objective flat")
{
    const auto base = test::small_base();
    num::Rng rng(7);
    const auto e = test::random_adapter(base, rng);
    const std::vector<LoraAdapter> same{e, e, e};
    const auto data = test::random_dataset(5, base.config().vocab, rng);
    RouterObjective obj(base, same, Router::zeros(base, 3), data, data);
    const auto items = all_items(data.size());
    const double l0 = obj.loss(Router::zeros(base, 3).flatten(), items);
    for (int trial = 0; trial < 5; ++trial) {
        CHECK(obj.loss(random_router(base, 3, rng, ScoreMode::plain, 2.0).flatten(), items) == doctest::Approx(l0).epsilon(1e-12));
    }
}

TEST_CASE("router save and load")
{
    const auto base = test::small_base();
    num::Rng rng(8);
    auto r = random_router(base, 3, rng, ScoreMode::absolute);
    r.top_k = 2;
    r.init = "arrow";
    r.fingerprint = base.fingerprint();
    const auto dir = test::temp_dir("router");
    r.save(dir / "r.afl");
    CHECK(std::filesystem::exists(dir / "r.afl.json"));
    const auto back = Router::load(dir / "r.afl");
    CHECK(back.weights == r.weights);
    CHECK(back.mode == r.mode);
    CHECK(back.top_k == 2);
    CHECK(back.init == "arrow");
    CHECK_NOTHROW(back.check(base, 3));
    CHECK_THROWS_AS(back.check(base, 4), Error);
}

TEST_CASE("hierarchical routing reductions")
{
    const auto base = test::small_base();
    num::Rng rng(9);
    const auto lib = test::random_library(base, 3, rng);
    const auto data = test::random_dataset(4, base.config().vocab, rng);
    const auto items = all_items(data.size());

    SUBCASE("K = N matches the flat router")
    {
        analysis::ClusterAssignment singles{{0, 1, 2}, 3, {}};
        HcObjective hc(base, lib, singles, Router::zeros(base, 3), data, data);
        RouterObjective flat(base, lib.experts(), Router::zeros(base, 3), data, data);
        const auto rp = random_router(base, 3, rng, ScoreMode::plain).flatten();
        auto hp = rp;
        hp.insert(hp.end(), 3, 0.0);
        CHECK(hc.loss(hp, items) == doctest::Approx(flat.loss(rp, items)).epsilon(1e-12));
    }
    SUBCASE("K = 1 matches learned global merging")
    {
        analysis::ClusterAssignment one{{0, 0, 0}, 1, {}};
        HcObjective hc(base, lib, one, Router::zeros(base, 1), data, data);
        fusion::MergeObjective merge(base, lib, data, data, fusion::WeightMode::global);
        const auto logits = test::random_vector(3, rng);
        auto hp = random_router(base, 1, rng, ScoreMode::plain).flatten();
        hp.insert(hp.end(), logits.begin(), logits.end());
        CHECK(hc.loss(hp, items) == doctest::Approx(merge.loss(logits, items)).epsilon(1e-12));
    }
    SUBCASE("gradient")
    {
        analysis::ClusterAssignment two{{0, 1, 0}, 2, {}};
        HcObjective hc(base, lib, two, Router::zeros(base, 2), data, data);
        auto hp = random_router(base, 2, rng, ScoreMode::plain).flatten();
        const auto logits = test::random_vector(3, rng);
        hp.insert(hp.end(), logits.begin(), logits.end());
        CHECK(objective_gradcheck(hc, hp) <= 1e-6);
    }
}

TEST_CASE("cluster merges")
{
    const auto base = test::small_base();
    num::Rng rng(10);
    const auto lib = test::random_library(base, 3, rng);
    const std::vector<std::vector<std::size_t>> members{{0, 2}, {1}};
    const std::vector<std::vector<double>> mu{{0.25, 0.75}, {1.0}};
    const auto merged = merge_clusters(lib, members, mu);
    REQUIRE(merged.size() == 2);
    for (std::size_t s = 0; s < base.site_count(); ++s) {
        CHECK(test::max_abs_diff(merged[0].a[s], lib[0].a[s] * 0.25 + lib[2].a[s] * 0.75) <= 1e-15);
        CHECK(merged[1].b[s] == lib[1].b[s]);
    }
}

TEST_CASE("calibration delta bounds")
{
    const auto base = test::small_base();
    num::Rng rng(11);
    const auto lib = test::random_library(base, 3, rng);
    std::vector<analysis::TaskSplit> tasks{{"a", test::random_dataset(4, base.config().vocab, rng)}};
    const auto r = random_router(base, 3, rng, ScoreMode::plain);
    CHECK_THROWS_AS(calibration_delta(base, lib.experts(), r, tasks, 3, 3), Error);
    CHECK_THROWS_AS(calibration_delta(base, lib.experts(), r, tasks, 0, 2), Error);
    const double d = calibration_delta(base, lib.experts(), r, tasks, 1, 3);
    CHECK(std::isfinite(d));
}
