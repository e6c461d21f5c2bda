#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "afl/experts/library.hpp"
#include "afl/lm/forward.hpp"

namespace afl::analysis {

using lm::Dataset;
using num::Matrix;

/// One task's examples for a single split.
struct TaskSplit {
    std::string name;
    Dataset examples;
};

/// Σ masked token loss and token count of `predictor` over `data`.
struct LossSum {
    double total = 0.0;
    std::size_t tokens = 0;
    double mean() const { return tokens == 0 ? 0.0 : total / static_cast<double>(tokens); }
};
LossSum loss_sum(const lm::Predictor& predictor, const Dataset& data);

struct EvalReport {
    std::string method;
    std::vector<std::string> tasks;
    std::vector<double> per_task;        // mean token loss per task (nats)
    std::vector<std::size_t> examples;   // examples per task
    double mean = 0.0;                   // unweighted over tasks
    double stderr_ = 0.0;                // sample std of per-task means / √T

    nlohmann::json to_json() const;
};

/// Fills mean and standard error from per-task losses (SE = 0 when T = 1).
EvalReport make_report(std::string method, std::vector<std::string> tasks, std::vector<double> per_task,
                       std::vector<std::size_t> examples);

EvalReport eval_method(const lm::Predictor& predictor, std::span<const TaskSplit> tasks, const std::string& method);

/// Evaluates each task under its mapped predictor.
EvalReport oracle_eval(std::span<const lm::Predictor* const> predictors, std::span<const TaskSplit> tasks,
                       const std::map<std::string, std::size_t>& mapping, const std::string& method = "oracle");

/// Library convenience: predictors are the library's experts in order.
EvalReport oracle_eval(const lm::BaseLM& base, const experts::ExpertLibrary& lib, std::span<const TaskSplit> tasks,
                       const std::map<std::string, std::size_t>& mapping, const std::string& method = "oracle");

/// M[i][t] = mean validation loss of expert i on task t.
Matrix expert_task_matrix(const lm::BaseLM& base, const experts::ExpertLibrary& lib, std::span<const TaskSplit> validation);
Matrix predictor_task_matrix(std::span<const lm::Predictor* const> predictors, std::span<const TaskSplit> tasks);

/// Number of experts i (expert i ↔ task i) for which some other expert has
/// strictly lower error on task i.
std::size_t rank_check(const Matrix& errors);

void write_error_matrix_csv(const std::string& path, const Matrix& errors, std::span<const std::string> experts,
                            std::span<const std::string> tasks);
struct LabeledMatrix {
    Matrix values;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
};
LabeledMatrix read_error_matrix_csv(const std::string& path);

}  // namespace afl::analysis
