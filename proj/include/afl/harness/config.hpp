#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "afl/experts/library.hpp"
#include "afl/harness/tasks.hpp"
#include "afl/harness/training.hpp"

namespace afl::harness {

inline constexpr int kSchemaVersion = 1;

/// Every method name run_experiment understands, in report order.
const std::vector<std::string>& known_methods();
const std::vector<std::string>& known_analyses();

struct FusionSettings {
    fusion::TrainHyper train;
    std::size_t train_per_task = 250;   // coefficient/router training examples drawn from each task
    std::size_t val_per_task = 50;
    std::size_t top_k = 4;
    std::size_t clusters = 3;
    double sparsity = 0.0;
    experts::SimilarityBasis similarity = experts::SimilarityBasis::factors;
};

struct AnalysisSettings {
    std::size_t interpolation_points = 11;
    std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 3}, {4, 5}, {6, 7}};
    std::size_t greedy_k_max = 0;   // 0 means N
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    lm::BaseConfig base;
    PretrainHyper pretrain;
    ExpertHyper expert;
    FusionSettings fusion;
    AnalysisSettings analysis;
    std::vector<std::string> methods = known_methods();
    std::vector<std::string> analyses = known_analyses();
    std::vector<TaskSpec> tasks = reference_suite();

    void validate() const;

    /// Canonical form; output_dir is excluded so it never affects hashes.
    nlohmann::json to_json() const;
    std::string hash() const;

    static ExperimentConfig reference();
    static ExperimentConfig from_toml_string(const std::string& text, const std::string& origin = "<string>");
    static ExperimentConfig from_toml_file(const std::string& path);
    std::string to_toml() const;
};

std::string hex64(std::uint64_t v);
std::uint64_t hash_json(const nlohmann::json& j);

}  // namespace afl::harness
