#pragma once

#include <cstddef>
#include <vector>

#include "afl/numerics/matrix.hpp"

namespace afl::fusion {

/// min cᵀx  s.t.  A x = b, x ≥ 0.
struct LinearProgram {
    num::Matrix a;
    std::vector<double> b;
    std::vector<double> c;
};

enum class LpStatus { optimal, infeasible, unbounded };

struct LpSolution {
    LpStatus status = LpStatus::optimal;
    std::vector<double> x;
    double objective = 0.0;
    std::size_t pivots = 0;
};

/// Dense two-phase tableau simplex with Bland's rule.
LpSolution solve_lp(const LinearProgram& lp);

struct MinimaxWeights {
    std::vector<double> lambda;
    double worst_case = 0.0;   // max_t Σ_i λ_i M_it
    std::size_t support = 0;   // count of λ_i > 1e-9
};

/// Ensembling mixture minimizing the worst task error of an N × T error matrix:
/// min c  s.t.  λ ≥ 0, Σλ = 1, Σ_i λ_i M_it ≤ c  ∀t.
MinimaxWeights lp_minimax_weights(const num::Matrix& errors);

}  // namespace afl::fusion
