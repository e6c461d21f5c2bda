#include "afl/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>

#include "afl/analysis/greedy.hpp"
#include "afl/analysis/interpolate.hpp"
#include "afl/error.hpp"
#include "afl/fusion/distill.hpp"
#include "afl/fusion/lp.hpp"
#include "afl/fusion/merge.hpp"
#include "afl/harness/training.hpp"
#include "afl/lm/binary_io.hpp"

namespace afl::harness {

namespace fs = std::filesystem;
using analysis::EvalReport;
using experts::ExpertLibrary;
using experts::LoraAdapter;

Log stderr_log()
{
    return [](const std::string& msg) { std::cerr << "[afl] " << msg << std::endl; };
}

ArtifactCache::ArtifactCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path ArtifactCache::default_dir(const std::string& output_dir)
{
    if (const char* env = std::getenv("AFL_CACHE_DIR"); env && *env) {
        return env;
    }
    return fs::path(output_dir) / "cache";
}

bool ArtifactCache::has(const std::string& key) const { return fs::exists(path(key)); }

void ArtifactCache::store(const std::string& key, const std::function<void(const fs::path&)>& save)
{
    const fs::path tmp = path(key + ".partial");
    fs::remove_all(tmp);
    save(tmp);
    fs::remove_all(path(key));
    fs::rename(tmp, path(key));
}

std::uint64_t job_seed(std::uint64_t seed, const std::string& job) { return num::splitmix64(seed ^ num::fnv1a64(job)); }

namespace {

template <class F>
auto step(const std::string& name, const Log& log, F&& body) -> decltype(body())
{
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if constexpr (std::is_void_v<decltype(body())>) {
            body();
            log(name + " done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s");
        } else {
            auto out = body();
            log(name + " done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s");
            return out;
        }
    } catch (const Error& e) {
        throw Error(e.kind(), "step '" + name + "' failed: " + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorKind::io, "step '" + name + "' failed: " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, "bad json in " + path.string() + ": " + e.what());
    }
}

fusion::SimplexWeights cached_weights(ArtifactCache& cache, const std::string& key, const std::function<fusion::SimplexWeights()>& f)
{
    return cache.fetch<fusion::SimplexWeights>(
        key + ".json", f, [](const fusion::SimplexWeights& w, const fs::path& p) { write_json(p, w.to_json()); },
        [](const fs::path& p) { return fusion::SimplexWeights::from_json(read_json(p)); });
}

routing::Router cached_router(ArtifactCache& cache, const std::string& key, const std::function<routing::Router()>& f)
{
    return cache.fetch<routing::Router>(
        key + ".afl", f, [](const routing::Router& r, const fs::path& p) { r.save(p); },
        [](const fs::path& p) { return routing::Router::load(p); });
}

LoraAdapter cached_adapter(ArtifactCache& cache, const std::string& key, const std::function<LoraAdapter()>& f)
{
    return cache.fetch<LoraAdapter>(
        key + ".afl", f, [](const LoraAdapter& a, const fs::path& p) { a.save(p); },
        [](const fs::path& p) { return LoraAdapter::load(p); });
}

std::string fit_summary(const fusion::FitReport& r)
{
    return "lr=" + std::to_string(r.learning_rate) + " val=" + std::to_string(r.validation_loss) +
           (r.reverted ? " (reverted to init)" : "");
}

void fill_splits(Workspace& ws)
{
    require(ws.library.size() == ws.tasks.size(), ErrorKind::shape_mismatch, "library size does not match the task suite");
    ws.library.check_compatible(ws.base);
    for (std::size_t i = 0; i < ws.tasks.size(); ++i) {
        require(ws.library[i].task == ws.tasks[i].spec.name, ErrorKind::mismatch,
                "library expert " + std::to_string(i) + " is labeled '" + ws.library[i].task + "' but task " + std::to_string(i) +
                    " is '" + ws.tasks[i].spec.name + "'");
    }
    const auto& f = ws.config.fusion;
    ws.method_train = mixture(ws.tasks, Split::train, f.train_per_task);
    ws.method_val = mixture(ws.tasks, Split::val, f.val_per_task);
    ws.val_splits = task_splits(ws.tasks, Split::val);
    ws.test_splits = task_splits(ws.tasks, Split::test);
}

}  // namespace

Workspace prepare_workspace(const ExperimentConfig& config, ArtifactCache& cache, const Log& log)
{
    config.validate();
    Workspace ws;
    ws.config = config;
    const auto cj = config.to_json();
    ws.tasks = step("gen-tasks", log, [&] { return generate_tasks(config.tasks, config.seed); });
    ws.base_key = "base-" + hex64(hash_json({cj["base"], cj["pretrain"], cj["tasks"], cj["seed"]}));
    ws.expert_key = "experts-" + hex64(hash_json({ws.base_key, cj["expert"]}));

    ws.base = step("train-base", log, [&] {
        return cache.fetch<lm::BaseLM>(
            ws.base_key + ".afl",
            [&] { return train_base(config.base, mixture(ws.tasks, Split::train), config.pretrain, job_seed(config.seed, "base")); },
            [](const lm::BaseLM& b, const fs::path& p) { b.save(p); }, [](const fs::path& p) { return lm::BaseLM::load(p); });
    });
    ws.library = step("train-experts", log, [&] {
        return cache.fetch<ExpertLibrary>(
            ws.expert_key,
            [&] {
                ExpertLibrary lib;
                lib.notes = "one expert per task, trained from the shared base";
                for (const auto& t : ws.tasks) {
                    fusion::FitReport rep;
                    auto ad = train_expert(ws.base, t.train, t.val, config.expert, job_seed(config.seed, "expert:" + t.spec.name), &rep);
                    log("  expert " + t.spec.name + ": " + fit_summary(rep));
                    ad.task = t.spec.name;
                    lib.add(std::move(ad), t.spec.name);
                }
                return lib;
            },
            [](const ExpertLibrary& lib, const fs::path& p) { experts::save_library(lib, p); },
            [](const fs::path& p) { return experts::load_library(p); });
    });
    fill_splits(ws);
    return ws;
}

Workspace make_workspace(const ExperimentConfig& config, lm::BaseLM base, ExpertLibrary library)
{
    config.validate();
    Workspace ws;
    ws.config = config;
    ws.tasks = generate_tasks(config.tasks, config.seed);
    ws.base = std::move(base);
    ws.library = std::move(library);
    ws.base_key = "base-" + lm::fingerprint_hex(ws.base.fingerprint());
    std::uint64_t h = ws.base.fingerprint();
    for (const auto& e : ws.library.experts()) {
        for (double v : experts::flatten(e)) {
            h = num::splitmix64(h ^ lm::double_bits(v));
        }
    }
    ws.expert_key = "experts-" + hex64(h);
    fill_splits(ws);
    return ws;
}

MethodRunner::MethodRunner(const Workspace& ws, ArtifactCache& cache, Log log) : ws_(ws), cache_(cache), log_(std::move(log)) {}

std::string MethodRunner::key(const std::string& what, const nlohmann::json& extra) const
{
    const auto cj = ws_.config.to_json();
    return what + "-" + hex64(hash_json({ws_.expert_key, cj["fusion"], cj["seed"], extra}));
}

fusion::TrainHyper MethodRunner::hyper(const std::string& job) const
{
    auto h = ws_.config.fusion.train;
    h.seed = job_seed(ws_.config.seed, "fit:" + job);
    return h;
}

std::map<std::string, std::size_t> MethodRunner::oracle_mapping() const
{
    std::map<std::string, std::size_t> mapping;
    for (std::size_t i = 0; i < ws_.library.size(); ++i) {
        mapping[ws_.library[i].task] = i;
    }
    return mapping;
}

const num::Matrix& MethodRunner::val_matrix()
{
    if (!val_matrix_) {
        val_matrix_ = analysis::expert_task_matrix(ws_.base, ws_.library, ws_.val_splits);
    }
    return *val_matrix_;
}

const num::Matrix& MethodRunner::test_matrix()
{
    if (!test_matrix_) {
        test_matrix_ = analysis::expert_task_matrix(ws_.base, ws_.library, ws_.test_splits);
    }
    return *test_matrix_;
}

routing::Router MethodRunner::sgd_router(const ExpertLibrary& agnostic)
{
    return cached_router(cache_, key("sgd-router"), [&] {
        fusion::FitReport rep;
        auto r = routing::fit_router(ws_.base, agnostic, ws_.method_train, ws_.method_val, routing::RouterInit::zero,
                                     hyper("sgd_routing"), &rep);
        log_("  sgd router: " + fit_summary(rep));
        return r;
    });
}

const analysis::ClusterAssignment& MethodRunner::clusters()
{
    if (!clusters_) {
        clusters_ = analysis::mbc_cluster(ws_.library.without_labels(), ws_.config.fusion.clusters, ws_.config.fusion.similarity);
    }
    return *clusters_;
}

const ExpertLibrary& MethodRunner::cluster_library()
{
    if (cluster_library_) {
        return *cluster_library_;
    }
    const auto& cl = clusters();
    const auto cj = ws_.config.to_json();
    const std::string k = "clusters-" + hex64(hash_json({ws_.expert_key, cj["fusion"]["clusters"], cj["fusion"]["similarity"], cj["seed"]}));
    cluster_library_ = cache_.fetch<ExpertLibrary>(
        k,
        [&] {
            ExpertLibrary lib;
            lib.notes = "one expert per parameter-similarity cluster, retrained on the cluster's tasks";
            const auto members = cl.members();
            for (std::size_t c = 0; c < members.size(); ++c) {
                Dataset train;
                Dataset val;
                std::string label;
                for (std::size_t i : members[c]) {
                    const auto& t = ws_.tasks.at(i);
                    train.insert(train.end(), t.train.begin(), t.train.end());
                    val.insert(val.end(), t.val.begin(), t.val.end());
                    label += (label.empty() ? "" : "+") + t.spec.name;
                }
                fusion::FitReport rep;
                auto ad = train_expert(ws_.base, train, val, ws_.config.expert, job_seed(ws_.config.seed, "cluster:" + label), &rep);
                log_("  cluster expert " + label + ": " + fit_summary(rep));
                ad.task = label;
                lib.add(std::move(ad), "cluster" + std::to_string(c));
            }
            return lib;
        },
        [](const ExpertLibrary& lib, const fs::path& p) { experts::save_library(lib, p); },
        [](const fs::path& p) { return experts::load_library(p); });
    return *cluster_library_;
}

MethodResult MethodRunner::run(const std::string& method)
{
    const auto& base = ws_.base;
    const auto& test = ws_.test_splits;
    MethodResult out;
    if (method == "base") {
        out.report = analysis::eval_method(lm::BasePredictor(base), test, method);
    } else if (method == "oracle") {
        out.report = analysis::oracle_eval(base, ws_.library, test, oracle_mapping(), method);
    } else if (method == "shared_expert") {
        const auto cj = ws_.config.to_json();
        const auto shared = cached_adapter(cache_, "shared-" + hex64(hash_json({ws_.expert_key, cj["seed"]})), [&] {
            fusion::FitReport rep;
            auto ad = train_shared_expert(base, ws_.tasks, ws_.config.expert, job_seed(ws_.config.seed, "shared"), &rep);
            log_("  shared expert: " + fit_summary(rep));
            return ad;
        });
        out.report = analysis::eval_method(experts::AdapterPredictor(base, shared), test, method);
    } else if (method == "cluster_oracle") {
        const auto& lib = cluster_library();
        std::map<std::string, std::size_t> mapping;
        for (std::size_t i = 0; i < ws_.tasks.size(); ++i) {
            mapping[ws_.tasks[i].spec.name] = clusters().cluster_of[i];
        }
        out.report = analysis::oracle_eval(base, lib, test, mapping, method);
        out.details["clusters"] = clusters().to_json();
    } else if (method == "cluster_arrow") {
        const auto lib = cluster_library().without_labels();
        auto router = routing::arrow_init(lib);
        router.top_k = std::min(ws_.config.fusion.top_k, lib.size());
        if (router.top_k == lib.size()) {
            router.top_k = 0;
        }
        out.report = analysis::eval_method(routing::RoutedPredictor(base, lib.experts(), router), test, method);
    } else {
        return run_task_agnostic(method, ws_.library);
    }
    return out;
}

MethodResult MethodRunner::run_task_agnostic(const std::string& method, const ExpertLibrary& library)
{
    const ExpertLibrary lib = library.without_labels();
    const auto& base = ws_.base;
    const auto& test = ws_.test_splits;
    const auto& cfg = ws_.config;
    const std::size_t n = lib.size();
    MethodResult out;
    auto eval = [&](const lm::Predictor& p) { return analysis::eval_method(p, test, method); };
    auto ensemble = [&](fusion::SimplexWeights w, fusion::EnsembleLevel level) {
        return fusion::EnsemblePredictor(base, fusion::EnsembleSpec{&lib, std::move(w), level});
    };

    if (method == "uniform_ensemble") {
        out.report = eval(ensemble(fusion::SimplexWeights::uniform(n), fusion::EnsembleLevel::probability));
    } else if (method == "logit_ensemble") {
        out.report = eval(ensemble(fusion::SimplexWeights::uniform(n), fusion::EnsembleLevel::logit));
    } else if (method == "sgd_ensemble") {
        const auto w = cached_weights(cache_, key("sgd-ensemble", {{"sparsity", cfg.fusion.sparsity}}), [&] {
            fusion::FitReport rep;
            auto fitted = fusion::fit_ensemble_weights(base, lib, ws_.method_train, ws_.method_val, hyper(method),
                                                       cfg.fusion.sparsity, &rep);
            log_("  sgd ensemble: " + fit_summary(rep));
            return fitted;
        });
        out.details["lambda"] = std::vector<double>(w.for_layer(0).begin(), w.for_layer(0).end());
        out.report = eval(ensemble(w, fusion::EnsembleLevel::probability));
    } else if (method == "lp_ensemble") {
        const auto mw = fusion::lp_minimax_weights(val_matrix());
        out.details = {{"lambda", mw.lambda}, {"support", mw.support}, {"worst_case", mw.worst_case}};
        out.report = eval(ensemble(fusion::SimplexWeights::from_lambda(fusion::WeightMode::global, num::Matrix(1, n, mw.lambda)),
                                   fusion::EnsembleLevel::probability));
    } else if (method == "distilled_ensemble") {
        const auto student = cached_adapter(cache_, key("distilled"), [&] {
            const auto init = fusion::merge_lowrank(lib, fusion::SimplexWeights::uniform(n), base);
            const fusion::EnsembleSpec teacher{&lib, fusion::SimplexWeights::uniform(n), fusion::EnsembleLevel::probability};
            auto res = fusion::distill(teacher, base, ws_.method_train, ws_.method_val, hyper(method), init, cfg.expert.dropout);
            log_("  distillation: KL " + std::to_string(res.initial_kl) + " -> " + std::to_string(res.final_kl) + ", " +
                 fit_summary(res.fit));
            return res.student;
        });
        out.report = eval(experts::AdapterPredictor(base, student));
    } else if (method == "uniform_merge") {
        const auto merged = fusion::merge_lowrank(lib, fusion::SimplexWeights::uniform(n), base);
        out.report = eval(experts::AdapterPredictor(base, merged));
    } else if (method == "fullrank_merge") {
        out.report = eval(experts::DenseDeltaPredictor(base, fusion::merge_fullrank(lib, fusion::SimplexWeights::uniform(n), base)));
    } else if (method == "global_sgd_merge" || method == "layer_sgd_merge") {
        const auto mode = method == "global_sgd_merge" ? fusion::WeightMode::global : fusion::WeightMode::per_layer;
        const auto w = cached_weights(cache_, key(method), [&] {
            fusion::FitReport rep;
            auto fitted = fusion::fit_merge_weights(base, lib, ws_.method_train, ws_.method_val, mode, hyper(method), &rep);
            log_("  " + method + ": " + fit_summary(rep));
            return fitted;
        });
        out.details["weights"] = w.to_json();
        out.report = eval(experts::AdapterPredictor(base, fusion::merge_lowrank(lib, w, base)));
    } else if (method == "arrow_topk") {
        auto router = routing::arrow_init(lib);
        router.top_k = cfg.fusion.top_k == n ? 0 : cfg.fusion.top_k;
        out.details["top_k"] = cfg.fusion.top_k;
        out.report = eval(routing::RoutedPredictor(base, lib.experts(), router));
    } else if (method == "sgd_routing") {
        out.report = eval(routing::RoutedPredictor(base, lib.experts(), sgd_router(lib)));
    } else if (method == "hc" || method == "arrow_hc") {
        const auto init = method == "hc" ? routing::HcInit::plain : routing::HcInit::arrow;
        const auto& cl = clusters();
        const std::string k = key(method, {{"clusters", cfg.fusion.clusters}});
        routing::ClusterRouting hc;
        if (cache_.enabled() && cache_.has(k + ".json") && cache_.has(k + ".router.afl")) {
            ++cache_.hits;
            const auto j = read_json(cache_.path(k + ".json"));
            hc.clusters = cl;
            hc.member_lambda = j.at("member_lambda").get<std::vector<std::vector<double>>>();
            hc.router = routing::Router::load(cache_.path(k + ".router.afl"));
        } else {
            ++cache_.misses;
            fusion::FitReport rep;
            hc = routing::build_hc_routing(base, lib, cl, ws_.method_train, ws_.method_val, init, hyper(method), &rep);
            log_("  " + method + ": " + fit_summary(rep));
            if (cache_.enabled()) {
                hc.router.save(cache_.path(k + ".router.afl"));
                write_json(cache_.path(k + ".json"), hc.to_json());
            }
        }
        out.details = {{"clusters", cl.to_json()}, {"member_lambda", hc.member_lambda}};
        out.report = eval(routing::HcPredictor(base, lib, hc));
    } else {
        fail(ErrorKind::invalid_argument, "unknown method '" + method + "'");
    }
    return out;
}

nlohmann::json ordering_margins(const std::map<std::string, double>& means)
{
    nlohmann::json m = nlohmann::json::object();
    auto has = [&](const std::string& k) { return means.count(k) > 0; };
    if (has("oracle")) {
        double best_other = std::numeric_limits<double>::infinity();
        for (const auto& [name, v] : means) {
            if (name != "oracle" && name != "cluster_oracle") {
                best_other = std::min(best_other, v);
            }
        }
        if (std::isfinite(best_other)) {
            m["oracle_vs_best_other"] = best_other - means.at("oracle");
        }
    }
    const std::vector<std::string> fig2{"oracle", "sgd_routing", "sgd_ensemble", "uniform_ensemble", "uniform_merge"};
    if (std::all_of(fig2.begin(), fig2.end(), has)) {
        double worst_other = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < 4; ++i) {
            worst_other = std::max(worst_other, means.at(fig2[i]));
        }
        m["uniform_merge_vs_worst_other"] = means.at("uniform_merge") - worst_other;
    }
    if (has("sgd_routing") && has("uniform_ensemble")) {
        m["uniform_ensemble_minus_sgd_routing"] = means.at("uniform_ensemble") - means.at("sgd_routing");
    }
    return m;
}

nlohmann::json run_experiment(const ExperimentConfig& config, const RunOptions& options)
{
    const Log& log = options.log;
    const fs::path out_dir = config.output_dir;
    fs::create_directories(out_dir);
    ArtifactCache cache;
    if (options.use_cache) {
        cache = ArtifactCache(options.cache_dir.value_or(ArtifactCache::default_dir(config.output_dir)));
    }
    {
        std::ofstream cfg_out(out_dir / "config.toml");
        cfg_out << config.to_toml();
    }

    const Workspace ws = prepare_workspace(config, cache, log);
    step("export-models", log, [&] {
        ws.base.save(out_dir / "base.afl");
        experts::save_library(ws.library, out_dir / "library");
    });
    MethodRunner runner(ws, cache, log);

    nlohmann::json results;
    results["schema_version"] = kSchemaVersion;
    results["config_hash"] = config.hash();
    results["seed"] = config.seed;
    results["base_fingerprint"] = lm::fingerprint_hex(ws.base.fingerprint());
    std::vector<std::string> task_names;
    for (const auto& t : ws.tasks) {
        task_names.push_back(t.spec.name);
    }
    results["tasks"] = task_names;

    nlohmann::json methods = nlohmann::json::array();
    std::map<std::string, double> means;
    for (const auto& m : config.methods) {
        auto res = step("method " + m, log, [&] { return runner.run(m); });
        auto j = res.report.to_json();
        if (!res.details.empty()) {
            j["details"] = res.details;
        }
        write_json(out_dir / "reports" / (m + ".json"), j);
        log("  " + m + ": mean " + std::to_string(res.report.mean) + " ± " + std::to_string(res.report.stderr_));
        means[m] = res.report.mean;
        methods.push_back(std::move(j));
    }
    results["methods"] = methods;
    results["margins"] = ordering_margins(means);

    auto wants = [&](const std::string& a) { return std::find(config.analyses.begin(), config.analyses.end(), a) != config.analyses.end(); };
    const auto expert_names = ws.library.names();

    results["sweeps"] = nlohmann::json::array();
    results["curves"] = nlohmann::json::object();
    results["deltas"] = nlohmann::json::object();

    if (wants("error_matrix") || wants("greedy")) {
        step("error-matrix", log, [&] {
            analysis::write_error_matrix_csv((out_dir / "error_matrix_val.csv").string(), runner.val_matrix(), expert_names, task_names);
            analysis::write_error_matrix_csv((out_dir / "error_matrix_test.csv").string(), runner.test_matrix(), expert_names, task_names);
            results["rank_check"] = {{"not_first_on_own_task", analysis::rank_check(runner.val_matrix())},
                                     {"experts", ws.library.size()}};
        });
    }
    if (wants("greedy")) {
        step("select-greedy", log, [&] {
            const std::size_t k_max = config.analysis.greedy_k_max == 0 ? ws.library.size() : config.analysis.greedy_k_max;
            const auto curve = analysis::greedy_select(runner.val_matrix(), k_max);
            std::vector<double> test_values;
            std::vector<std::size_t> prefix;
            for (std::size_t i : curve.selected) {
                prefix.push_back(i);
                test_values.push_back(analysis::subset_value(runner.test_matrix(), prefix));
            }
            auto j = curve.to_json();
            j["test_values"] = test_values;
            write_json(out_dir / "selection_curve.json", j);
            results["curves"]["greedy"] = j;
        });
    }
    if (wants("interpolation")) {
        step("interpolate", log, [&] {
            const auto grid = analysis::alpha_grid(config.analysis.interpolation_points);
            for (const auto& [a, b] : config.analysis.pairs) {
                auto sweep = analysis::interpolate_pair(ws.base, ws.library[a], ws.library[b], grid, ws.tasks[a].test, ws.tasks[b].test);
                sweep.expert1 = a;
                sweep.expert2 = b;
                fs::create_directories(out_dir / "sweeps");
                sweep.write_csv((out_dir / "sweeps" / (task_names[a] + "__" + task_names[b] + ".csv")).string());
                auto j = sweep.to_json();
                j["task1"] = task_names[a];
                j["task2"] = task_names[b];
                j["min_curve_minus_oracle"] = sweep.min_combined() - sweep.oracle_ref;
                results["sweeps"].push_back(std::move(j));
            }
        });
    }
    if (wants("calibration")) {
        step("calibrate", log, [&] {
            const auto agnostic = ws.library.without_labels();
            const std::size_t n = agnostic.size();
            auto arrow = routing::arrow_init(agnostic);
            arrow.top_k = 0;
            const auto sgd = runner.sgd_router(agnostic);
            const std::size_t k_small = 1;
            nlohmann::json d = {{"k_small", k_small}, {"k_large", n}};
            if (n > 1) {
                d["arrow"] = routing::calibration_delta(ws.base, agnostic.experts(), arrow, ws.test_splits, k_small, n);
                d["sgd_routing"] = routing::calibration_delta(ws.base, agnostic.experts(), sgd, ws.test_splits, k_small, n);
            }
            results["deltas"] = d;
        });
    }
    write_json(out_dir / "results.json", results);
    log("cache: " + std::to_string(cache.hits) + " hits, " + std::to_string(cache.misses) + " misses");
    return results;
}

}  // namespace afl::harness
