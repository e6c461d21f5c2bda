#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "afl/analysis/cluster.hpp"
#include "afl/analysis/eval.hpp"
#include "afl/fusion/ensemble.hpp"
#include "afl/harness/config.hpp"
#include "afl/routing/hc.hpp"

namespace afl::harness {

using Log = std::function<void(const std::string&)>;
Log stderr_log();

/// Content-addressed store for trained artifacts. Keys are hashes of every
/// input that influences the artifact, so a hit never changes results.
class ArtifactCache {
public:
    ArtifactCache() = default;   // disabled
    explicit ArtifactCache(std::filesystem::path dir);

    /// AFL_CACHE_DIR if set, otherwise <output_dir>/cache.
    static std::filesystem::path default_dir(const std::string& output_dir);

    bool enabled() const { return !dir_.empty(); }
    std::filesystem::path path(const std::string& key) const { return dir_ / key; }
    bool has(const std::string& key) const;

    std::size_t hits = 0;
    std::size_t misses = 0;

    /// Loads `key` if present, otherwise computes and stores it.
    template <class T>
    T fetch(const std::string& key, const std::function<T()>& compute,
            const std::function<void(const T&, const std::filesystem::path&)>& save,
            const std::function<T(const std::filesystem::path&)>& load)
    {
        if (enabled() && has(key)) {
            ++hits;
            return load(path(key));
        }
        ++misses;
        T value = compute();
        if (enabled()) {
            store(key, [&](const std::filesystem::path& p) { save(value, p); });
        }
        return value;
    }

private:
    void store(const std::string& key, const std::function<void(const std::filesystem::path&)>& save);

    std::filesystem::path dir_;
};

/// Everything the methods share: data, frozen base and the expert library.
struct Workspace {
    ExperimentConfig config;
    std::vector<TaskData> tasks;
    lm::BaseLM base;
    experts::ExpertLibrary library;          // expert i was trained on task i; labels set
    Dataset method_train;                    // task-agnostic mixtures
    Dataset method_val;
    std::vector<analysis::TaskSplit> val_splits;
    std::vector<analysis::TaskSplit> test_splits;
    std::string base_key;
    std::string expert_key;
};

std::uint64_t job_seed(std::uint64_t seed, const std::string& job);

/// Generates data and trains (or loads) the base model and experts.
Workspace prepare_workspace(const ExperimentConfig& config, ArtifactCache& cache, const Log& log);

/// Workspace around an existing base and library (regenerates the task data).
Workspace make_workspace(const ExperimentConfig& config, lm::BaseLM base, experts::ExpertLibrary library);

struct MethodResult {
    analysis::EvalReport report;
    nlohmann::json details = nlohmann::json::object();
};

/// Runs methods against one workspace, memoizing shared intermediate artifacts.
class MethodRunner {
public:
    MethodRunner(const Workspace& ws, ArtifactCache& cache, Log log);

    MethodResult run(const std::string& method);

    /// Methods that never see task identities. The library's labels are
    /// stripped here, before any training, whatever they contain.
    MethodResult run_task_agnostic(const std::string& method, const experts::ExpertLibrary& library);

    const num::Matrix& val_matrix();
    const num::Matrix& test_matrix();
    routing::Router sgd_router(const experts::ExpertLibrary& agnostic);
    const analysis::ClusterAssignment& clusters();
    const experts::ExpertLibrary& cluster_library();
    std::map<std::string, std::size_t> oracle_mapping() const;

private:
    std::string key(const std::string& what, const nlohmann::json& extra = {}) const;
    fusion::TrainHyper hyper(const std::string& job) const;

    const Workspace& ws_;
    ArtifactCache& cache_;
    Log log_;
    std::optional<num::Matrix> val_matrix_;
    std::optional<num::Matrix> test_matrix_;
    std::optional<analysis::ClusterAssignment> clusters_;
    std::optional<experts::ExpertLibrary> cluster_library_;
};

struct RunOptions {
    std::optional<std::filesystem::path> cache_dir;   // default: ArtifactCache::default_dir
    bool use_cache = true;
    Log log = stderr_log();
};

/// Full pipeline; writes results.json and the per-analysis files under
/// config.output_dir and returns the results document.
nlohmann::json run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Differences behind the qualitative method ordering, keyed by description.
nlohmann::json ordering_margins(const std::map<std::string, double>& means);

}  // namespace afl::harness
