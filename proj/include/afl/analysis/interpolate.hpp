#pragma once

#include <span>
#include <string>
#include <vector>

#include "afl/analysis/eval.hpp"

namespace afl::analysis {

struct InterpolationSweep {
    std::size_t expert1 = 0;
    std::size_t expert2 = 0;
    std::vector<double> alphas;
    std::vector<double> combined;   // token-weighted over both tasks
    std::vector<double> task1;
    std::vector<double> task2;
    double oracle_ref = 0.0;        // every example under its own task's expert

    double min_combined() const;
    nlohmann::json to_json() const;
    void write_csv(const std::string& path) const;
};

/// A_α = (1 − α) A_1 + α A_2 and likewise for B, at every site.
experts::LoraAdapter interpolate_adapters(const experts::LoraAdapter& e1, const experts::LoraAdapter& e2, double alpha);

/// Token-weighted mean loss over the concatenation of two datasets.
double combined_loss(const lm::Predictor& predictor, const Dataset& d1, const Dataset& d2);

InterpolationSweep interpolate_pair(const lm::BaseLM& base, const experts::LoraAdapter& e1, const experts::LoraAdapter& e2,
                                    std::span<const double> alphas, const Dataset& task1, const Dataset& task2);

/// Evenly spaced grid 0, 1/(n−1), ..., 1 with exact endpoints.
std::vector<double> alpha_grid(std::size_t points);

}  // namespace afl::analysis
