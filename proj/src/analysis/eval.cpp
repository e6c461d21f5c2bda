#include "afl/analysis/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "afl/error.hpp"

namespace afl::analysis {

LossSum loss_sum(const lm::Predictor& predictor, const Dataset& data)
{
    LossSum out;
    for (const auto& seq : data) {
        const auto probs = predictor.predict(seq);
        out.total += lm::masked_loss_sum(probs, seq);
        out.tokens += seq.masked_count();
    }
    return out;
}

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        per[tasks[t]] = per_task[t];
    }
    return {{"name", method}, {"mean_loss", mean}, {"stderr", stderr_}, {"per_task", per}, {"examples", examples}};
}

EvalReport make_report(std::string method, std::vector<std::string> tasks, std::vector<double> per_task,
                       std::vector<std::size_t> examples)
{
    require(!per_task.empty(), ErrorKind::invalid_argument, "empty task set");
    require(tasks.size() == per_task.size(), ErrorKind::shape_mismatch, "task names and losses differ in length");
    EvalReport rep;
    rep.method = std::move(method);
    rep.tasks = std::move(tasks);
    rep.per_task = std::move(per_task);
    rep.examples = std::move(examples);
    const double T = static_cast<double>(rep.per_task.size());
    double sum = 0.0;
    for (double v : rep.per_task) {
        sum += v;
    }
    rep.mean = sum / T;
    if (rep.per_task.size() > 1) {
        double ss = 0.0;
        for (double v : rep.per_task) {
            ss += (v - rep.mean) * (v - rep.mean);
        }
        rep.stderr_ = std::sqrt(ss / (T - 1.0)) / std::sqrt(T);
    }
    return rep;
}

EvalReport eval_method(const lm::Predictor& predictor, std::span<const TaskSplit> tasks, const std::string& method)
{
    require(!tasks.empty(), ErrorKind::invalid_argument, "empty task set");
    std::vector<std::string> names;
    std::vector<double> losses;
    std::vector<std::size_t> counts;
    for (const auto& task : tasks) {
        names.push_back(task.name);
        losses.push_back(loss_sum(predictor, task.examples).mean());
        counts.push_back(task.examples.size());
    }
    return make_report(method, std::move(names), std::move(losses), std::move(counts));
}

EvalReport oracle_eval(std::span<const lm::Predictor* const> predictors, std::span<const TaskSplit> tasks,
                       const std::map<std::string, std::size_t>& mapping, const std::string& method)
{
    require(!tasks.empty(), ErrorKind::invalid_argument, "empty task set");
    std::vector<std::string> names;
    std::vector<double> losses;
    std::vector<std::size_t> counts;
    for (const auto& task : tasks) {
        const auto it = mapping.find(task.name);
        require(it != mapping.end(), ErrorKind::invalid_argument, "oracle mapping has no expert for task '" + task.name + "'");
        require(it->second < predictors.size(), ErrorKind::invalid_argument, "oracle mapping points past the library");
        names.push_back(task.name);
        losses.push_back(loss_sum(*predictors[it->second], task.examples).mean());
        counts.push_back(task.examples.size());
    }
    return make_report(method, std::move(names), std::move(losses), std::move(counts));
}

EvalReport oracle_eval(const lm::BaseLM& base, const experts::ExpertLibrary& lib, std::span<const TaskSplit> tasks,
                       const std::map<std::string, std::size_t>& mapping, const std::string& method)
{
    std::vector<experts::AdapterPredictor> owned;
    owned.reserve(lib.size());
    std::vector<const lm::Predictor*> ptrs;
    for (const auto& e : lib.experts()) {
        owned.emplace_back(base, e);
    }
    for (const auto& p : owned) {
        ptrs.push_back(&p);
    }
    return oracle_eval(ptrs, tasks, mapping, method);
}

Matrix predictor_task_matrix(std::span<const lm::Predictor* const> predictors, std::span<const TaskSplit> tasks)
{
    Matrix m(predictors.size(), tasks.size());
    for (std::size_t i = 0; i < predictors.size(); ++i) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            m(i, t) = loss_sum(*predictors[i], tasks[t].examples).mean();
        }
    }
    return m;
}

Matrix expert_task_matrix(const lm::BaseLM& base, const experts::ExpertLibrary& lib, std::span<const TaskSplit> validation)
{
    std::vector<experts::AdapterPredictor> owned;
    owned.reserve(lib.size());
    std::vector<const lm::Predictor*> ptrs;
    for (const auto& e : lib.experts()) {
        owned.emplace_back(base, e);
    }
    for (const auto& p : owned) {
        ptrs.push_back(&p);
    }
    return predictor_task_matrix(ptrs, validation);
}

std::size_t rank_check(const Matrix& errors)
{
    require(errors.rows() == errors.cols(), ErrorKind::invalid_argument, "rank_check needs a square expert-by-task matrix");
    std::size_t count = 0;
    for (std::size_t t = 0; t < errors.cols(); ++t) {
        for (std::size_t j = 0; j < errors.rows(); ++j) {
            if (errors(j, t) < errors(t, t)) {
                ++count;
                break;
            }
        }
    }
    return count;
}

void write_error_matrix_csv(const std::string& path, const Matrix& errors, std::span<const std::string> experts,
                            std::span<const std::string> tasks)
{
    require(experts.size() == errors.rows() && tasks.size() == errors.cols(), ErrorKind::shape_mismatch,
            "error matrix labels do not match its shape");
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
    out.precision(17);
    out << "expert";
    for (const auto& t : tasks) {
        out << ',' << t;
    }
    out << '\n';
    for (std::size_t i = 0; i < errors.rows(); ++i) {
        out << experts[i];
        for (std::size_t t = 0; t < errors.cols(); ++t) {
            out << ',' << errors(i, t);
        }
        out << '\n';
    }
}

LabeledMatrix read_error_matrix_csv(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::missing_file, "missing file: " + path);
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        return cells;
    };
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::bad_format, "empty csv: " + path);
    LabeledMatrix out;
    auto header = split(line);
    require(header.size() >= 2, ErrorKind::bad_format, "csv header needs at least one task column: " + path);
    out.cols.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = split(line);
        require(cells.size() == header.size(), ErrorKind::bad_format, "ragged csv row in " + path);
        out.rows.push_back(cells[0]);
        std::vector<double> vals;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            try {
                vals.push_back(std::stod(cells[c]));
            } catch (const std::exception&) {
                fail(ErrorKind::bad_format, "non-numeric cell '" + cells[c] + "' in " + path);
            }
        }
        rows.push_back(std::move(vals));
    }
    require(!rows.empty(), ErrorKind::bad_format, "csv has no expert rows: " + path);
    out.values = Matrix(rows.size(), out.cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r].begin(), rows[r].end(), out.values.row(r).begin());
    }
    return out;
}

}  // namespace afl::analysis
