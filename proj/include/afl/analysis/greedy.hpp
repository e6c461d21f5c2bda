#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "afl/numerics/matrix.hpp"

namespace afl::analysis {

struct SelectionCurve {
    std::vector<std::size_t> selected;
    std::vector<double> values;   // mean_t min_{i ∈ S} M[i][t] after each addition

    nlohmann::json to_json() const;
    static SelectionCurve from_json(const nlohmann::json& j);
};

/// mean over tasks of the best error among `subset`.
double subset_value(const num::Matrix& errors, const std::vector<std::size_t>& subset);

/// Greedy forward selection of experts under task-level oracle routing.
SelectionCurve greedy_select(const num::Matrix& errors, std::size_t k_max);

}  // namespace afl::analysis
