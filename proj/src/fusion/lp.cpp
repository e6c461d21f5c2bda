#include "afl/fusion/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "afl/error.hpp"

namespace afl::fusion {
namespace {

constexpr double kEps = 1e-11;

// Tableau rows 0..m-1 are constraints, the last row holds reduced costs; the
// last column is the right-hand side.
class Tableau {
public:
    Tableau(std::size_t rows, std::size_t cols) : t_(rows + 1, cols + 1), basis_(rows) {}

    double& at(std::size_t r, std::size_t c) { return t_(r, c); }
    double rhs(std::size_t r) const { return t_(r, t_.cols() - 1); }
    std::size_t rows() const { return t_.rows() - 1; }
    std::size_t cols() const { return t_.cols() - 1; }
    std::vector<std::size_t>& basis() { return basis_; }

    void set_objective(const std::vector<double>& cost)
    {
        const std::size_t obj = rows();
        for (std::size_t c = 0; c <= cols(); ++c) {
            t_(obj, c) = c < cost.size() ? cost[c] : 0.0;
        }
        for (std::size_t r = 0; r < rows(); ++r) {
            const double cb = basis_[r] < cost.size() ? cost[basis_[r]] : 0.0;
            if (cb == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c <= cols(); ++c) {
                t_(obj, c) -= cb * t_(r, c);
            }
        }
    }

    void pivot(std::size_t pr, std::size_t pc)
    {
        const double pv = t_(pr, pc);
        for (std::size_t c = 0; c <= cols(); ++c) {
            t_(pr, c) /= pv;
        }
        for (std::size_t r = 0; r <= rows(); ++r) {
            if (r == pr) {
                continue;
            }
            const double f = t_(r, pc);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c <= cols(); ++c) {
                t_(r, c) -= f * t_(pr, c);
            }
            t_(r, pc) = 0.0;
        }
        basis_[pr] = pc;
        ++pivots;
    }

    // Bland's rule: lowest-index improving column, lowest basis index among ratio ties.
    LpStatus optimize(std::size_t allowed_cols)
    {
        const std::size_t obj = rows();
        for (std::size_t iter = 0; iter < 100000; ++iter) {
            std::size_t enter = allowed_cols;
            for (std::size_t c = 0; c < allowed_cols; ++c) {
                if (t_(obj, c) < -kEps) {
                    enter = c;
                    break;
                }
            }
            if (enter == allowed_cols) {
                return LpStatus::optimal;
            }
            std::size_t leave = rows();
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < rows(); ++r) {
                if (t_(r, enter) > kEps) {
                    const double ratio = rhs(r) / t_(r, enter);
                    if (ratio < best - kEps || (std::abs(ratio - best) <= kEps && leave < rows() && basis_[r] < basis_[leave])) {
                        best = ratio;
                        leave = r;
                    }
                }
            }
            if (leave == rows()) {
                return LpStatus::unbounded;
            }
            pivot(leave, enter);
        }
        fail(ErrorKind::numerical, "simplex iteration limit reached");
    }

    std::size_t pivots = 0;

private:
    num::Matrix t_;
    std::vector<std::size_t> basis_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp)
{
    const std::size_t m = lp.a.rows();
    const std::size_t n = lp.a.cols();
    require(lp.b.size() == m && lp.c.size() == n, ErrorKind::shape_mismatch, "linear program dimensions disagree");

    // Phase 1: artificial variable per row, rows sign-normalized so b ≥ 0.
    Tableau tab(m, n + m);
    for (std::size_t r = 0; r < m; ++r) {
        const double sign = lp.b[r] < 0.0 ? -1.0 : 1.0;
        for (std::size_t c = 0; c < n; ++c) {
            tab.at(r, c) = sign * lp.a(r, c);
        }
        tab.at(r, n + r) = 1.0;
        tab.at(r, n + m) = sign * lp.b[r];
        tab.basis()[r] = n + r;
    }
    std::vector<double> phase1(n + m, 0.0);
    std::fill(phase1.begin() + static_cast<std::ptrdiff_t>(n), phase1.end(), 1.0);
    tab.set_objective(phase1);
    tab.optimize(n + m);

    double infeas = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        if (tab.basis()[r] >= n) {
            infeas += tab.rhs(r);
        }
    }
    LpSolution sol;
    if (infeas > 1e-9) {
        sol.status = LpStatus::infeasible;
        sol.pivots = tab.pivots;
        return sol;
    }
    // Drive zero-level artificials out of the basis where a structural column allows it.
    for (std::size_t r = 0; r < m; ++r) {
        if (tab.basis()[r] < n) {
            continue;
        }
        for (std::size_t c = 0; c < n; ++c) {
            if (std::abs(tab.at(r, c)) > 1e-9) {
                tab.pivot(r, c);
                break;
            }
        }
    }
    // Any artificial still basic sits on a redundant row; forbid artificials from re-entering.
    std::vector<double> phase2(n + m, 0.0);
    std::copy(lp.c.begin(), lp.c.end(), phase2.begin());
    tab.set_objective(phase2);
    sol.status = tab.optimize(n);
    sol.pivots = tab.pivots;
    if (sol.status != LpStatus::optimal) {
        return sol;
    }
    sol.x.assign(n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        if (tab.basis()[r] < n) {
            sol.x[tab.basis()[r]] = tab.rhs(r);
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        sol.objective += lp.c[c] * sol.x[c];
    }
    return sol;
}

MinimaxWeights lp_minimax_weights(const num::Matrix& errors)
{
    const std::size_t N = errors.rows();
    const std::size_t T = errors.cols();
    require(N >= 1 && T >= 1, ErrorKind::invalid_argument, "error matrix must be non-empty");
    require(num::all_finite(errors.flat()), ErrorKind::numerical, "error matrix has non-finite entries");

    // variables: λ_1..λ_N, c⁺, c⁻, s_1..s_T
    const std::size_t cplus = N;
    const std::size_t cminus = N + 1;
    LinearProgram lp;
    lp.a = num::Matrix(T + 1, N + 2 + T);
    lp.b.assign(T + 1, 0.0);
    lp.c.assign(N + 2 + T, 0.0);
    lp.c[cplus] = 1.0;
    lp.c[cminus] = -1.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < N; ++i) {
            lp.a(t, i) = errors(i, t);
        }
        lp.a(t, cplus) = -1.0;
        lp.a(t, cminus) = 1.0;
        lp.a(t, N + 2 + t) = 1.0;
    }
    for (std::size_t i = 0; i < N; ++i) {
        lp.a(T, i) = 1.0;
    }
    lp.b[T] = 1.0;

    const auto sol = solve_lp(lp);
    require(sol.status == LpStatus::optimal, ErrorKind::numerical, "minimax LP did not reach an optimum");

    MinimaxWeights out;
    out.lambda.assign(sol.x.begin(), sol.x.begin() + static_cast<std::ptrdiff_t>(N));
    double sum = 0.0;
    for (auto& v : out.lambda) {
        v = std::max(v, 0.0);
        sum += v;
    }
    for (auto& v : out.lambda) {
        v /= sum;
    }
    out.worst_case = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < T; ++t) {
        double v = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            v += out.lambda[i] * errors(i, t);
        }
        out.worst_case = std::max(out.worst_case, v);
    }
    out.support = static_cast<std::size_t>(std::count_if(out.lambda.begin(), out.lambda.end(), [](double v) { return v > 1e-9; }));
    return out;
}

}  // namespace afl::fusion
