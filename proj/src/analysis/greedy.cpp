#include "afl/analysis/greedy.hpp"

#include <algorithm>
#include <limits>

#include "afl/error.hpp"

namespace afl::analysis {

nlohmann::json SelectionCurve::to_json() const { return {{"selected", selected}, {"values", values}}; }

SelectionCurve SelectionCurve::from_json(const nlohmann::json& j)
{
    SelectionCurve c;
    try {
        c.selected = j.at("selected").get<std::vector<std::size_t>>();
        c.values = j.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, std::string("bad selection curve: ") + e.what());
    }
    return c;
}

namespace {

double mean_of(const std::vector<double>& best)
{
    double sum = 0.0;
    for (double v : best) {
        sum += v;
    }
    return sum / static_cast<double>(best.size());
}

}  // namespace

double subset_value(const num::Matrix& errors, const std::vector<std::size_t>& subset)
{
    require(!subset.empty(), ErrorKind::invalid_argument, "empty subset");
    std::vector<double> best(errors.cols(), std::numeric_limits<double>::infinity());
    for (std::size_t i : subset) {
        require(i < errors.rows(), ErrorKind::invalid_argument, "subset index out of range");
        for (std::size_t t = 0; t < errors.cols(); ++t) {
            best[t] = std::min(best[t], errors(i, t));
        }
    }
    return mean_of(best);
}

SelectionCurve greedy_select(const num::Matrix& errors, std::size_t k_max)
{
    const std::size_t n = errors.rows();
    const std::size_t t_count = errors.cols();
    require(n >= 1 && t_count >= 1, ErrorKind::invalid_argument, "empty error matrix");
    require(k_max >= 1 && k_max <= n, ErrorKind::invalid_argument, "k_max must lie in [1, N]");

    SelectionCurve curve;
    std::vector<double> best(t_count, std::numeric_limits<double>::infinity());
    std::vector<bool> used(n, false);
    for (std::size_t step = 0; step < k_max; ++step) {
        double best_value = std::numeric_limits<double>::infinity();
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) {
                continue;
            }
            std::vector<double> trial = best;
            for (std::size_t t = 0; t < t_count; ++t) {
                trial[t] = std::min(trial[t], errors(i, t));
            }
            const double v = mean_of(trial);
            if (v < best_value) {
                best_value = v;
                pick = i;
            }
        }
        used[pick] = true;
        for (std::size_t t = 0; t < t_count; ++t) {
            best[t] = std::min(best[t], errors(pick, t));
        }
        curve.selected.push_back(pick);
        curve.values.push_back(mean_of(best));
    }
    return curve;
}

}  // namespace afl::analysis
