// One line per acceptance criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "support.hpp"
#include "afl/analysis/greedy.hpp"
#include "afl/analysis/interpolate.hpp"
#include "afl/fusion/distill.hpp"
#include "afl/fusion/ensemble.hpp"
#include "afl/fusion/lp.hpp"
#include "afl/fusion/merge.hpp"
#include "afl/harness/config.hpp"
#include "afl/harness/experiment.hpp"
#include "afl/numerics/gradcheck.hpp"
#include "afl/numerics/svd.hpp"
#include "afl/routing/router.hpp"

using namespace afl;
using num::Matrix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check)
{
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
}

template <class... Args>
std::string fmt(const char* f, Args... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Largest deviation of a row from the simplex: negativity or |Σ − 1|.
double simplex_violation(std::span<const double> lambda)
{
    double sum = 0.0;
    double worst = 0.0;
    for (double v : lambda) {
        sum += v;
        worst = std::max(worst, -v);
    }
    return std::max(worst, std::abs(sum - 1.0));
}

std::vector<std::size_t> all_items(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

double gradcheck(fusion::Objective& obj, const std::vector<double>& params)
{
    const auto items = all_items(obj.train_size());
    std::vector<double> grad(params.size(), 0.0);
    num::Rng rng(0);
    obj.loss_grad(params, items, grad, rng);
    const auto fd = num::finite_diff_grad([&](std::span<const double> x) { return obj.loss(x, items); }, params);
    return num::relative_error(fd, grad);
}

routing::Router random_router(const lm::BaseLM& base, std::size_t n, num::Rng& rng, routing::ScoreMode mode, double scale)
{
    auto r = routing::Router::zeros(base, n, mode);
    for (auto& w : r.weights) w = test::random_matrix(w.rows(), w.cols(), rng, scale);
    return r;
}

Outcome simplex_integrity()
{
    const auto t0 = Clock::now();
    const auto base = test::small_base();
    num::Rng rng(101);
    const auto lib = test::random_library(base, 4, rng);
    std::size_t inputs = 0;
    double worst = 0.0;
    auto see = [&](std::span<const double> l) {
        worst = std::max(worst, simplex_violation(l));
        ++inputs;
    };
    for (int i = 0; i < 300; ++i) {
        // ensembling and merging coefficients, including saturated logits
        const double scale = i % 3 == 0 ? 50.0 : 3.0;
        const auto w = fusion::SimplexWeights::from_logits(i % 2 ? fusion::WeightMode::global : fusion::WeightMode::per_layer,
                                                           test::random_matrix(i % 2 ? 1 : 2, 1 + i % 6, rng, scale));
        for (std::size_t r = 0; r < w.rows(); ++r) see(w.lambda().row(r));
    }
    for (int i = 0; i < 300; ++i) {
        std::vector<double> l(2 + i % 7);
        for (auto& v : l) v = rng.uniform(0.0, 1.0) * (rng.uniform(0.0, 1.0) < 0.2 ? 0.0 : 1.0);
        l[0] += 1e-3;
        const double s = std::accumulate(l.begin(), l.end(), 0.0);
        for (auto& v : l) v /= s;
        const auto k = 1 + rng.below(l.size());
        see(routing::apply_topk(l, k));
    }
    for (int i = 0; i < 40; ++i) {
        auto r = random_router(base, 4, rng, i % 2 ? routing::ScoreMode::plain : routing::ScoreMode::absolute, i % 4 ? 2.0 : 40.0);
        r.top_k = i % 5;
        const auto seq = test::random_sequence(6, base.config().vocab, rng);
        routing::RoutingHook hook(lib.experts(), r);
        lm::run_forward(base, seq.inputs, &hook);
        for (std::size_t s = 0; s < base.site_count(); ++s) {
            for (std::size_t t = 0; t < hook.coefficients(s).rows(); ++t) see(hook.coefficients(s).row(t));
        }
    }
    for (int i = 0; i < 100; ++i) {
        Matrix m(1 + rng.below(5), 1 + rng.below(6));
        for (auto& v : m.flat()) v = rng.uniform(0.0, 3.0);
        see(fusion::lp_minimax_weights(m).lambda);
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-12 && inputs >= 1000 && secs < 10.0,
            fmt("%zu inputs, max violation %.2e, %.2f s", inputs, worst, secs)};
}

Outcome topk_identity()
{
    num::Rng rng(102);
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> l(1 + rng.below(9));
        for (auto& v : l) v = rng.uniform(0.0, 1.0);
        const double s = std::accumulate(l.begin(), l.end(), 0.0);
        for (auto& v : l) v /= s;
        bad += routing::apply_topk(l, l.size()) == l ? 0 : 1;
    }
    const auto ex = routing::apply_topk(std::vector<double>{0.5, 0.3, 0.2}, 2);
    const bool exact = ex == std::vector<double>{0.625, 0.375, 0.0};
    return {bad == 0 && exact, fmt("1000 vectors, %zu changed; [0.5,0.3,0.2] k=2 -> [%.17g, %.17g, %.17g]", bad, ex[0], ex[1], ex[2])};
}

Outcome one_hot_reduction()
{
    const auto base = test::small_base();
    num::Rng rng(103);
    const auto lib = test::random_library(base, 3, rng);
    double worst = 0.0;
    for (int batch = 0; batch < 100; ++batch) {
        const auto seq = test::random_sequence(3 + rng.below(6), base.config().vocab, rng);
        const std::size_t k = batch % 3;
        const auto ref = experts::AdapterPredictor(base, lib[k]).predict(seq);
        const auto oh = fusion::SimplexWeights::one_hot(3, k);
        for (auto level : {fusion::EnsembleLevel::probability, fusion::EnsembleLevel::logit}) {
            worst = std::max(worst, test::max_abs_diff(fusion::ensemble_predict({&lib, oh, level}, base, seq), ref));
        }
        const auto low = fusion::merge_lowrank(lib, oh, base);
        worst = std::max(worst, test::max_abs_diff(experts::AdapterPredictor(base, low).predict(seq), ref));
        const auto full = fusion::merge_fullrank(lib, oh, base);
        worst = std::max(worst, test::max_abs_diff(experts::DenseDeltaPredictor(base, full).predict(seq), ref));
        // absolute scores with only row k nonzero, top-1: coefficients are exactly one-hot
        auto r = routing::Router::zeros(base, 3, routing::ScoreMode::absolute);
        for (auto& w : r.weights) {
            for (std::size_t j = 0; j < w.cols(); ++j) w(k, j) = rng.normal();
        }
        r.top_k = 1;
        worst = std::max(worst, test::max_abs_diff(routing::routed_forward(base, lib, r, seq).probs, ref));
    }
    return {worst <= 1e-10, fmt("100 batches x 5 fusion paths, max |diff| %.2e", worst)};
}

Outcome svd_arrow()
{
    num::Rng rng(104);
    double recon = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Matrix m = num::matmul(test::random_matrix(16, 4, rng), test::random_matrix(4, 12, rng));
        const auto s = num::svd_top(m, 4);
        Matrix rec(16, 12);
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t a = 0; a < 16; ++a)
                for (std::size_t b = 0; b < 12; ++b) rec(a, b) += s.u(a, c) * s.s[c] * s.v(b, c);
        recon = std::max(recon, num::frobenius_norm(rec - m) / num::frobenius_norm(m));
    }
    const auto base = test::small_base();
    const auto lib = test::random_library(base, 5, rng, 4);
    const auto r = routing::arrow_init(lib);
    double cos_min = 1.0;
    for (std::size_t i = 0; i < lib.size(); ++i) {
        for (std::size_t s = 0; s < base.site_count(); ++s) {
            const auto row = r.weights[s].row(i);
            cos_min = std::min(cos_min, std::abs(oracle::cosine({row.begin(), row.end()}, oracle::top_right_singular(lib[i].delta(s)))));
        }
    }
    // rescale expert 1 by a positive factor and flip the sign of row 2
    experts::ExpertLibrary scaled;
    for (std::size_t i = 0; i < lib.size(); ++i) {
        auto e = lib[i];
        if (i == 1) {
            for (auto& b : e.b) b *= 3.7;
        }
        scaled.add(e, lib.names()[i]);
    }
    auto r2 = routing::arrow_init(scaled);
    for (auto& w : r2.weights) {
        for (std::size_t j = 0; j < w.cols(); ++j) w(2, j) = -w(2, j);
    }
    // both routers see the same hidden states
    double coeff = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto seq = test::random_sequence(7, base.config().vocab, rng);
        const auto tr = routing::routed_forward(base, lib, r, seq);
        for (std::size_t s = 0; s < base.site_count(); ++s) {
            const auto& h = tr.site_input(s);
            for (std::size_t row = 0; row < h.rows(); ++row) {
                const auto a = routing::route_coeffs(r, s, h.row(row));
                const auto b = routing::route_coeffs(r2, s, h.row(row));
                for (std::size_t i = 0; i < a.size(); ++i) coeff = std::max(coeff, std::abs(a[i] - b[i]));
            }
        }
    }
    return {recon <= 1e-6 && cos_min >= 1 - 1e-8 && coeff <= 1e-12,
            fmt("recon rel err %.2e, min cosine 1-%.2e, coeff shift %.2e", recon, 1 - cos_min, coeff)};
}

Outcome gradient_checks()
{
    const auto t0 = Clock::now();
    const auto base = test::small_base();
    num::Rng rng(105);
    const auto lib = test::random_library(base, 3, rng);
    const auto data = test::random_dataset(4, base.config().vocab, rng);
    std::vector<std::pair<std::string, double>> errs;
    {
        fusion::EnsembleObjective obj(fusion::expert_target_probs(base, lib, data), fusion::expert_target_probs(base, lib, data), 0.0);
        errs.emplace_back("ensemble", gradcheck(obj, test::random_vector(3, rng)));
    }
    {
        fusion::MergeObjective g(base, lib, data, data, fusion::WeightMode::global);
        errs.emplace_back("merge-global", gradcheck(g, test::random_vector(3, rng)));
        fusion::MergeObjective l(base, lib, data, data, fusion::WeightMode::per_layer);
        errs.emplace_back("merge-layer", gradcheck(l, test::random_vector(l.param_count(), rng)));
    }
    for (auto mode : {routing::ScoreMode::plain, routing::ScoreMode::absolute}) {
        routing::RouterObjective obj(base, lib.experts(), routing::Router::zeros(base, 3, mode), data, data);
        errs.emplace_back("router-" + routing::to_string(mode), gradcheck(obj, random_router(base, 3, rng, mode, 1.0).flatten()));
    }
    {
        const fusion::EnsemblePredictor tp(base, {&lib, fusion::SimplexWeights::uniform(3)});
        const auto targets = fusion::teacher_targets(tp, data);
        const auto student = test::random_adapter(base, rng);
        fusion::DistillObjective obj(base, student, data, targets, data, targets, 0.0);
        errs.emplace_back("distill", gradcheck(obj, experts::flatten(student)));
    }
    double worst = 0.0;
    std::string detail;
    for (const auto& [name, e] : errs) {
        worst = std::max(worst, e);
        detail += fmt("%s %.1e, ", name.c_str(), e);
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 60.0, detail + fmt("%.1f s", secs)};
}

Outcome lp_equivalence()
{
    num::Rng rng(106);
    double gap = 0.0;
    double viol = 0.0;
    for (int i = 0; i < 20; ++i) {
        // unit-range entries: a 0.02 grid is then accurate to about 0.02
        Matrix m(3, 4);
        for (auto& v : m.flat()) v = rng.uniform(0.0, 1.0);
        const auto w = fusion::lp_minimax_weights(m);
        gap = std::max(gap, std::abs(w.worst_case - oracle::simplex_grid_minimax(m, 0.02)));
        viol = std::max(viol, simplex_violation(w.lambda));
        for (std::size_t t = 0; t < 4; ++t) {
            double s = 0.0;
            for (std::size_t e = 0; e < 3; ++e) s += w.lambda[e] * m(e, t);
            viol = std::max(viol, s - w.worst_case);
        }
    }
    return {gap <= 0.02 && viol <= 1e-9, fmt("20 matrices, max gap to grid %.4f, max constraint violation %.1e", gap, viol)};
}

Outcome greedy_consistency()
{
    num::Rng rng(107);
    std::size_t non_monotone = 0;
    std::size_t terminal = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng.below(8);
        const std::size_t t = 1 + rng.below(12);
        Matrix m(n, t);
        for (auto& v : m.flat()) v = rng.uniform(0.0, 3.0);
        const auto c = analysis::greedy_select(m, n);
        for (std::size_t k = 1; k < c.values.size(); ++k) non_monotone += c.values[k] > c.values[k - 1] ? 1 : 0;
        double sum = 0.0;
        for (std::size_t col = 0; col < t; ++col) {
            double mn = m(0, col);
            for (std::size_t r = 1; r < n; ++r) mn = std::min(mn, m(r, col));
            sum += mn;
        }
        terminal += c.values.back() == sum / static_cast<double>(t) ? 0 : 1;
    }
    return {non_monotone == 0 && terminal == 0,
            fmt("100 matrices, %zu increases, %zu terminal mismatches", non_monotone, terminal)};
}

Outcome interpolation_endpoints()
{
    const auto base = test::small_base();
    num::Rng rng(108);
    const auto lib = test::random_library(base, 2, rng);
    const auto d1 = test::random_dataset(8, base.config().vocab, rng);
    const auto d2 = test::random_dataset(8, base.config().vocab, rng);
    const auto sweep = analysis::interpolate_pair(base, lib[0], lib[1], analysis::alpha_grid(11), d1, d2);
    const experts::AdapterPredictor p1(base, lib[0]);
    const experts::AdapterPredictor p2(base, lib[1]);
    const bool ends = test::bit_equal(sweep.combined.front(), analysis::combined_loss(p1, d1, d2)) &&
                      test::bit_equal(sweep.combined.back(), analysis::combined_loss(p2, d1, d2)) &&
                      test::bit_equal(sweep.task1.front(), analysis::loss_sum(p1, d1).mean()) &&
                      test::bit_equal(sweep.task2.front(), analysis::loss_sum(p1, d2).mean()) &&
                      test::bit_equal(sweep.task1.back(), analysis::loss_sum(p2, d1).mean()) &&
                      test::bit_equal(sweep.task2.back(), analysis::loss_sum(p2, d2).mean());
    double spread = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const auto flat = analysis::interpolate_pair(base, lib[i], lib[i], analysis::alpha_grid(11), d1, d2);
        const auto [lo, hi] = std::minmax_element(flat.combined.begin(), flat.combined.end());
        spread = std::max(spread, *hi - *lo);
    }
    return {ends && spread <= 1e-12, fmt("endpoints bit-equal: %s, identical-pair spread %.1e", ends ? "yes" : "no", spread)};
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main()
{
    report("simplex integrity", simplex_integrity);
    report("top-k identity", topk_identity);
    report("one-hot reduction", one_hot_reduction);
    report("svd / arrow", svd_arrow);
    report("gradient checks", gradient_checks);
    report("lp oracle equivalence", lp_equivalence);
    report("greedy consistency", greedy_consistency);
    report("interpolation endpoints", interpolation_endpoints);

    // Two cold reference runs: the first is timed and supplies the qualitative checks.
    const auto root = test::temp_dir("acceptance");
    auto config = harness::ExperimentConfig::from_toml_file(AFL_REF_CONFIG);
    config.seed = 0;
    harness::RunOptions opts;
    opts.use_cache = false;
    opts.log = [](const std::string&) {};
    nlohmann::json results;
    double run_secs = 0.0;
    std::string first_bytes;
    std::string run_error;
    try {
        config.output_dir = (root / "run1").string();
        const auto t0 = Clock::now();
        results = harness::run_experiment(config, opts);
        run_secs = seconds_since(t0);
        first_bytes = slurp(root / "run1" / "results.json");
    } catch (const std::exception& e) {
        run_error = e.what();
    }

    report("reference run ordering", [&]() -> Outcome {
        if (!run_error.empty()) return {false, "run failed: " + run_error};
        std::map<std::string, double> mean;
        for (const auto& m : results["methods"]) mean[m["name"]] = m["mean_loss"];
        const double oracle = mean.at("oracle");
        bool oracle_best = true;
        for (const auto& [name, v] : mean) {
            if (name != "oracle" && name != "cluster_oracle") oracle_best = oracle_best && oracle < v;
        }
        const double um = mean.at("uniform_merge");
        const bool merge_worst = um > mean.at("sgd_routing") && um > mean.at("sgd_ensemble") && um > mean.at("uniform_ensemble") &&
                                 um > oracle;
        const bool routing = mean.at("sgd_routing") <= mean.at("uniform_ensemble");
        const bool fast = run_secs < 600.0;
        return {oracle_best && merge_worst && routing && fast,
                fmt("%.0f s; oracle %.4f, sgd_routing %.4f, sgd_ensemble %.4f, uniform_ensemble %.4f, uniform_merge %.4f", run_secs,
                    oracle, mean.at("sgd_routing"), mean.at("sgd_ensemble"), mean.at("uniform_ensemble"), um)};
    });

    report("interpolation vs oracle", [&]() -> Outcome {
        if (!run_error.empty()) return {false, "run failed: " + run_error};
        std::size_t pairs = 0;
        std::size_t holds = 0;
        std::string detail;
        for (const auto& s : results["sweeps"]) {
            const auto c = s["combined_loss"].get<std::vector<double>>();
            const double mn = *std::min_element(c.begin(), c.end());
            const double ref = s["oracle_ref"];
            ++pairs;
            holds += ref <= mn ? 1 : 0;
            detail += fmt("%.3f<=%.3f ", ref, mn);
        }
        return {holds >= 3, fmt("%zu/%zu pairs: ", holds, pairs) + detail};
    });

    report("calibration", [&]() -> Outcome {
        if (!run_error.empty()) return {false, "run failed: " + run_error};
        const double sgd = results["deltas"]["sgd_routing"];
        const double arrow = results["deltas"]["arrow"];
        return {sgd < arrow, fmt("top-1 minus top-all: sgd router %.4f, arrow init %.4f", sgd, arrow)};
    });

    report("determinism", [&]() -> Outcome {
        if (!run_error.empty()) return {false, "run failed: " + run_error};
        config.output_dir = (root / "run2").string();
        harness::run_experiment(config, opts);
        const auto second = slurp(root / "run2" / "results.json");
        return {!first_bytes.empty() && second == first_bytes, fmt("results.json %zu bytes, identical: %s", first_bytes.size(),
                                                                    second == first_bytes ? "yes" : "no")};
    });

    std::printf("%d failed\n", failures);
    return failures == 0 ? 0 : 1;
}
