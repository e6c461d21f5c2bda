// Command-line front end: one subcommand per pipeline stage.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "afl/analysis/cluster.hpp"
#include "afl/analysis/greedy.hpp"
#include "afl/analysis/interpolate.hpp"
#include "afl/error.hpp"
#include "afl/fusion/distill.hpp"
#include "afl/fusion/lp.hpp"
#include "afl/fusion/merge.hpp"
#include "afl/harness/experiment.hpp"
#include "afl/harness/training.hpp"

namespace fs = std::filesystem;
using namespace afl;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

struct Paths {
    std::string base;
    std::string library;
};

void add_common(CLI::App* sub, Common& c, bool config_required = false, bool out_required = true)
{
    auto* cfg = sub->add_option("--config", c.config, "experiment config (TOML)");
    if (config_required) {
        cfg->required();
    }
    sub->add_option("--seed", c.seed, "seed (overrides the config)");
    auto* out = sub->add_option("--out", c.out, "output path");
    if (out_required) {
        out->required();
    }
}

harness::ExperimentConfig load_config(const Common& c)
{
    auto cfg = c.config.empty() ? harness::ExperimentConfig::reference() : harness::ExperimentConfig::from_toml_file(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    return cfg;
}

void write_json(const std::string& path, const nlohmann::json& j)
{
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, "bad json in " + path + ": " + e.what());
    }
}

void ensure_parent(const std::string& path)
{
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
}

/// Uses --base/--library when given, otherwise trains or loads them through the cache.
harness::Workspace workspace(const harness::ExperimentConfig& cfg, const Paths& p, harness::ArtifactCache& cache)
{
    if (!p.base.empty() && !p.library.empty()) {
        return harness::make_workspace(cfg, lm::BaseLM::load(p.base), experts::load_library(p.library));
    }
    require(p.base.empty() && p.library.empty(), ErrorKind::invalid_argument, "--base and --library go together");
    return harness::prepare_workspace(cfg, cache, harness::stderr_log());
}

harness::ArtifactCache make_cache(const harness::ExperimentConfig& cfg)
{
    return harness::ArtifactCache(harness::ArtifactCache::default_dir(cfg.output_dir));
}

void add_paths(CLI::App* sub, Paths& p)
{
    sub->add_option("--base", p.base, "base model file");
    sub->add_option("--library", p.library, "expert library directory");
}

std::string report_markdown(const nlohmann::json& r)
{
    std::ostringstream o;
    o.precision(4);
    o << std::fixed;
    o << "# Results (config " << r.value("config_hash", std::string("?")) << ", seed " << r.value("seed", 0) << ")\n\n";
    o << "| method | mean loss | stderr |\n|---|---|---|\n";
    for (const auto& m : r.at("methods")) {
        o << "| " << m.at("name").get<std::string>() << " | " << m.at("mean_loss").get<double>() << " | "
          << m.at("stderr").get<double>() << " |\n";
    }
    if (r.contains("margins") && !r["margins"].empty()) {
        o << "\n## Margins\n\n";
        for (const auto& [k, v] : r["margins"].items()) {
            o << "- " << k << ": " << v.get<double>() << "\n";
        }
    }
    if (r.contains("sweeps") && !r["sweeps"].empty()) {
        o << "\n## Interpolation\n\n| pair | min curve | oracle ref |\n|---|---|---|\n";
        for (const auto& s : r["sweeps"]) {
            const auto c = s.at("combined_loss").get<std::vector<double>>();
            o << "| " << s.value("task1", std::string("?")) << " / " << s.value("task2", std::string("?")) << " | "
              << *std::min_element(c.begin(), c.end()) << " | " << s.at("oracle_ref").get<double>() << " |\n";
        }
    }
    if (r.contains("deltas") && r["deltas"].contains("arrow")) {
        o << "\n## Calibration (top-1 minus top-all)\n\n- arrow: " << r["deltas"]["arrow"].get<double>()
          << "\n- sgd_routing: " << r["deltas"]["sgd_routing"].get<double>() << "\n";
    }
    return o.str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Low-rank adapter fusion experiments"};
    app.require_subcommand(1, 1);

    Common c;
    Paths paths;

    auto* gen = app.add_subcommand("gen-tasks", "write the task datasets as JSON lines");
    add_common(gen, c);

    auto* tbase = app.add_subcommand("train-base", "pre-train the base model");
    add_common(tbase, c);

    auto* texp = app.add_subcommand("train-experts", "train one expert per task");
    add_common(texp, c);
    texp->add_option("--base", paths.base, "base model file")->required();

    auto* tshared = app.add_subcommand("train-shared", "train one expert on all tasks");
    add_common(tshared, c);
    tshared->add_option("--base", paths.base, "base model file")->required();

    std::string merge_mode = "uniform";
    std::string adapter_out;
    auto* merge = app.add_subcommand("merge", "merge experts in parameter space");
    add_common(merge, c);
    add_paths(merge, paths);
    merge->add_option("--mode", merge_mode, "uniform | global | layer")->check(CLI::IsMember({"uniform", "global", "layer"}));
    merge->add_option("--adapter-out", adapter_out, "also write the merged adapter");

    std::string ens_mode = "uniform";
    auto* ens = app.add_subcommand("ensemble", "fit output-level ensemble weights");
    add_common(ens, c);
    add_paths(ens, paths);
    ens->add_option("--mode", ens_mode, "uniform | sgd")->check(CLI::IsMember({"uniform", "sgd"}));

    std::string router_init = "zero";
    auto* route = app.add_subcommand("route", "train a per-site router");
    add_common(route, c);
    add_paths(route, paths);
    route->add_option("--init", router_init, "zero | arrow")->check(CLI::IsMember({"zero", "arrow"}));

    std::size_t top_k = 0;
    auto* arrow = app.add_subcommand("arrow-init", "build the Arrow router from a library");
    add_common(arrow, c);
    arrow->add_option("--library", paths.library, "expert library directory")->required();
    arrow->add_option("--top-k", top_k, "keep the k largest coefficients (0 = all)");

    std::size_t hc_k = 0;
    std::string hc_init = "plain";
    auto* hc = app.add_subcommand("hc-route", "hierarchical-cluster routing");
    add_common(hc, c);
    add_paths(hc, paths);
    hc->add_option("--k", hc_k, "number of clusters (default from config)");
    hc->add_option("--init", hc_init, "plain | arrow")->check(CLI::IsMember({"plain", "arrow"}));

    std::string matrix;
    auto* lp = app.add_subcommand("lp-weights", "minimax ensembling weights from an error matrix");
    add_common(lp, c);
    add_paths(lp, paths);
    lp->add_option("--matrix", matrix, "expert-by-task CSV (otherwise computed on validation data)");

    auto* dist = app.add_subcommand("distill", "distill the uniform ensemble into one adapter");
    add_common(dist, c);
    add_paths(dist, paths);

    std::string method;
    std::string weights_path;
    std::string router_path;
    std::string adapter_path;
    std::string split = "test";
    auto* eval = app.add_subcommand("eval", "evaluate one method");
    add_common(eval, c, true);
    add_paths(eval, paths);
    eval->add_option("--method", method, "method name, or adapter | ensemble | merge | route")->required();
    eval->add_option("--weights", weights_path, "weights JSON for ensemble/merge");
    eval->add_option("--router", router_path, "router file for route");
    eval->add_option("--adapter", adapter_path, "adapter file for adapter");
    eval->add_option("--split", split, "val | test")->check(CLI::IsMember({"val", "test"}));

    std::size_t e1 = 0;
    std::size_t e2 = 0;
    std::size_t points = 0;
    auto* interp = app.add_subcommand("interpolate", "linear interpolation between two experts");
    add_common(interp, c);
    add_paths(interp, paths);
    interp->add_option("--e1", e1, "first expert index")->required();
    interp->add_option("--e2", e2, "second expert index")->required();
    interp->add_option("--points", points, "grid size (default from config)");

    std::size_t k = 0;
    std::string similarity = "factors";
    auto* cluster = app.add_subcommand("cluster", "cluster experts by parameter similarity");
    add_common(cluster, c);
    cluster->add_option("--library", paths.library, "expert library directory")->required();
    cluster->add_option("--k", k, "number of clusters")->required();
    cluster->add_option("--similarity", similarity, "factors | delta")->check(CLI::IsMember({"factors", "delta"}));

    std::size_t k_max = 0;
    auto* greedy = app.add_subcommand("select-greedy", "greedy expert selection curve");
    add_common(greedy, c);
    add_paths(greedy, paths);
    greedy->add_option("--matrix", matrix, "expert-by-task CSV (otherwise computed on validation data)");
    greedy->add_option("--k-max", k_max, "largest subset size (0 = N)");

    std::size_t k_small = 1;
    std::size_t k_large = 0;
    auto* calib = app.add_subcommand("calibrate", "top-k_small minus top-k_large routing loss");
    add_common(calib, c);
    add_paths(calib, paths);
    calib->add_option("--router", router_path, "router file (default: untrained Arrow)");
    calib->add_option("--k-small", k_small, "small k");
    calib->add_option("--k-large", k_large, "large k (0 = N)");

    bool no_cache = false;
    auto* run = app.add_subcommand("run", "full experiment");
    add_common(run, c);
    run->add_flag("--no-cache", no_cache, "ignore and do not write cached artifacts");

    std::string in_path;
    auto* report = app.add_subcommand("report", "summarize results.json as markdown");
    add_common(report, c);
    report->add_option("--in", in_path, "results.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        auto cfg = load_config(c);
        auto log = harness::stderr_log();
        auto test_or_val = [&](const harness::Workspace& ws) -> const std::vector<analysis::TaskSplit>& {
            return split == "val" ? ws.val_splits : ws.test_splits;
        };

        if (gen->parsed()) {
            harness::save_tasks(harness::generate_tasks(cfg.tasks, cfg.seed), c.out);
        } else if (tbase->parsed()) {
            cfg.validate();
            const auto tasks = harness::generate_tasks(cfg.tasks, cfg.seed);
            const auto base = harness::train_base(cfg.base, harness::mixture(tasks, harness::Split::train), cfg.pretrain,
                                                  harness::job_seed(cfg.seed, "base"));
            ensure_parent(c.out);
            base.save(c.out);
            log("base fingerprint " + lm::fingerprint_hex(base.fingerprint()));
        } else if (texp->parsed()) {
            cfg.validate();
            const auto base = lm::BaseLM::load(paths.base);
            const auto tasks = harness::generate_tasks(cfg.tasks, cfg.seed);
            experts::ExpertLibrary lib;
            for (const auto& t : tasks) {
                auto ad = harness::train_expert(base, t.train, t.val, cfg.expert, harness::job_seed(cfg.seed, "expert:" + t.spec.name));
                ad.task = t.spec.name;
                lib.add(std::move(ad), t.spec.name);
                log("trained expert " + t.spec.name);
            }
            experts::save_library(lib, c.out);
        } else if (tshared->parsed()) {
            cfg.validate();
            const auto base = lm::BaseLM::load(paths.base);
            const auto tasks = harness::generate_tasks(cfg.tasks, cfg.seed);
            ensure_parent(c.out);
            harness::train_shared_expert(base, tasks, cfg.expert, harness::job_seed(cfg.seed, "shared")).save(c.out);
        } else if (merge->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto lib = ws.library.without_labels();
            fusion::SimplexWeights w = fusion::SimplexWeights::uniform(lib.size());
            if (merge_mode != "uniform") {
                auto h = cfg.fusion.train;
                h.seed = harness::job_seed(cfg.seed, "fit:" + merge_mode);
                w = fusion::fit_merge_weights(ws.base, lib, ws.method_train, ws.method_val,
                                              merge_mode == "global" ? fusion::WeightMode::global : fusion::WeightMode::per_layer, h);
            }
            write_json(c.out, w.to_json());
            if (!adapter_out.empty()) {
                ensure_parent(adapter_out);
                fusion::merge_lowrank(lib, w, ws.base).save(adapter_out);
            }
        } else if (ens->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto lib = ws.library.without_labels();
            fusion::SimplexWeights w = fusion::SimplexWeights::uniform(lib.size());
            if (ens_mode == "sgd") {
                auto h = cfg.fusion.train;
                h.seed = harness::job_seed(cfg.seed, "fit:sgd_ensemble");
                w = fusion::fit_ensemble_weights(ws.base, lib, ws.method_train, ws.method_val, h, cfg.fusion.sparsity);
            }
            write_json(c.out, w.to_json());
        } else if (route->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            auto h = cfg.fusion.train;
            h.seed = harness::job_seed(cfg.seed, "fit:sgd_routing");
            const auto r = routing::fit_router(ws.base, ws.library.without_labels(), ws.method_train, ws.method_val,
                                               routing::parse_router_init(router_init), h);
            ensure_parent(c.out);
            r.save(c.out);
        } else if (arrow->parsed()) {
            auto r = routing::arrow_init(experts::load_library(paths.library));
            require(top_k <= r.experts(), ErrorKind::invalid_argument, "--top-k exceeds the library size");
            r.top_k = top_k == r.experts() ? 0 : top_k;
            ensure_parent(c.out);
            r.save(c.out);
        } else if (hc->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto lib = ws.library.without_labels();
            auto h = cfg.fusion.train;
            h.seed = harness::job_seed(cfg.seed, hc_init == "plain" ? "fit:hc" : "fit:arrow_hc");
            const auto result = routing::build_hc_routing(ws.base, lib, hc_k == 0 ? cfg.fusion.clusters : hc_k, ws.method_train,
                                                          ws.method_val, routing::parse_hc_init(hc_init), h, nullptr,
                                                          cfg.fusion.similarity);
            write_json(c.out, result.to_json());
            result.router.save(c.out + ".router.afl");
        } else if (lp->parsed()) {
            num::Matrix m;
            if (!matrix.empty()) {
                m = analysis::read_error_matrix_csv(matrix).values;
            } else {
                auto cache = make_cache(cfg);
                const auto ws = workspace(cfg, paths, cache);
                m = analysis::expert_task_matrix(ws.base, ws.library, ws.val_splits);
            }
            const auto w = fusion::lp_minimax_weights(m);
            auto j = fusion::SimplexWeights::from_lambda(fusion::WeightMode::global, num::Matrix(1, w.lambda.size(), w.lambda)).to_json();
            j["worst_case"] = w.worst_case;
            j["support"] = w.support;
            write_json(c.out, j);
        } else if (dist->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto lib = ws.library.without_labels();
            const auto uniform = fusion::SimplexWeights::uniform(lib.size());
            auto h = cfg.fusion.train;
            h.seed = harness::job_seed(cfg.seed, "fit:distilled_ensemble");
            const auto res = fusion::distill(fusion::EnsembleSpec{&lib, uniform, fusion::EnsembleLevel::probability}, ws.base,
                                             ws.method_train, ws.method_val, h, fusion::merge_lowrank(lib, uniform, ws.base),
                                             cfg.expert.dropout);
            log("distillation KL " + std::to_string(res.initial_kl) + " -> " + std::to_string(res.final_kl));
            ensure_parent(c.out);
            res.student.save(c.out);
        } else if (eval->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto& splits = test_or_val(ws);
            const auto lib = ws.library.without_labels();
            analysis::EvalReport rep;
            if (method == "adapter") {
                require(!adapter_path.empty(), ErrorKind::invalid_argument, "--method adapter needs --adapter");
                const auto ad = experts::LoraAdapter::load(adapter_path);
                rep = analysis::eval_method(experts::AdapterPredictor(ws.base, ad), splits, method);
            } else if (method == "ensemble" || method == "merge") {
                const auto w = weights_path.empty() ? fusion::SimplexWeights::uniform(lib.size())
                                                    : fusion::SimplexWeights::from_json(read_json(weights_path));
                if (method == "ensemble") {
                    rep = analysis::eval_method(
                        fusion::EnsemblePredictor(ws.base, fusion::EnsembleSpec{&lib, w, fusion::EnsembleLevel::probability}), splits, method);
                } else {
                    const auto merged = fusion::merge_lowrank(lib, w, ws.base);
                    rep = analysis::eval_method(experts::AdapterPredictor(ws.base, merged), splits, method);
                }
            } else if (method == "route") {
                require(!router_path.empty(), ErrorKind::invalid_argument, "--method route needs --router");
                rep = analysis::eval_method(routing::RoutedPredictor(ws.base, lib.experts(), routing::Router::load(router_path)),
                                            splits, method);
            } else {
                harness::MethodRunner runner(ws, cache, log);
                require(split == "test", ErrorKind::invalid_argument, "named methods are evaluated on the test split");
                rep = runner.run(method).report;
            }
            write_json(c.out, rep.to_json());
        } else if (interp->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            require(e1 < ws.library.size() && e2 < ws.library.size(), ErrorKind::invalid_argument, "expert index out of range");
            const auto grid = analysis::alpha_grid(points == 0 ? cfg.analysis.interpolation_points : points);
            auto sweep = analysis::interpolate_pair(ws.base, ws.library[e1], ws.library[e2], grid, ws.tasks[e1].test, ws.tasks[e2].test);
            sweep.expert1 = e1;
            sweep.expert2 = e2;
            ensure_parent(c.out);
            sweep.write_csv(c.out);
        } else if (cluster->parsed()) {
            const auto lib = experts::load_library(paths.library).without_labels();
            const auto basis = similarity == "delta" ? experts::SimilarityBasis::delta : experts::SimilarityBasis::factors;
            write_json(c.out, analysis::mbc_cluster(lib, k, basis).to_json());
        } else if (greedy->parsed()) {
            num::Matrix m;
            if (!matrix.empty()) {
                m = analysis::read_error_matrix_csv(matrix).values;
            } else {
                auto cache = make_cache(cfg);
                const auto ws = workspace(cfg, paths, cache);
                m = analysis::expert_task_matrix(ws.base, ws.library, ws.val_splits);
            }
            write_json(c.out, analysis::greedy_select(m, k_max == 0 ? m.rows() : k_max).to_json());
        } else if (calib->parsed()) {
            auto cache = make_cache(cfg);
            const auto ws = workspace(cfg, paths, cache);
            const auto lib = ws.library.without_labels();
            auto r = router_path.empty() ? routing::arrow_init(lib) : routing::Router::load(router_path);
            r.top_k = 0;
            const std::size_t kl = k_large == 0 ? lib.size() : k_large;
            const double d = routing::calibration_delta(ws.base, lib.experts(), r, ws.test_splits, k_small, kl);
            write_json(c.out, {{"k_small", k_small}, {"k_large", kl}, {"delta", d}});
        } else if (run->parsed()) {
            cfg.output_dir = c.out;
            harness::RunOptions opts;
            opts.use_cache = !no_cache;
            harness::run_experiment(cfg, opts);
        } else if (report->parsed()) {
            const auto md = report_markdown(read_json(in_path));
            ensure_parent(c.out);
            std::ofstream out(c.out);
            require(static_cast<bool>(out), ErrorKind::io, "cannot write " + c.out);
            out << md;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
