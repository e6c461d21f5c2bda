#include "afl/numerics/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "afl/error.hpp"

namespace afl::num {
namespace {

constexpr std::size_t kMaxSweeps = 100;
constexpr double kTol = 1e-15;

struct Jacobi {
    Matrix cols;     // columns of the working matrix, stored as rows
    Matrix rot;      // accumulated rotations, stored as rows (rot.row(j) = V[:, j])
    std::size_t sweeps = 0;
};

// Orthogonalize the columns of x (given as rows of `cols`) by plane rotations.
Jacobi one_sided_jacobi(Matrix cols)
{
    const std::size_t n = cols.rows();
    const std::size_t len = cols.cols();
    Jacobi out{std::move(cols), Matrix::identity(n), 0};
    Matrix& x = out.cols;
    Matrix& v = out.rot;

    // Columns whose squared norm falls below this are roundoff and treated as zero.
    const double negligible = 1e-30 * dot(x.flat(), x.flat());
    double residual = 0.0;
    for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        residual = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot(x.row(p), x.row(p));
                const double beta = dot(x.row(q), x.row(q));
                const double gamma = dot(x.row(p), x.row(q));
                if (alpha <= negligible || beta <= negligible) {
                    continue;
                }
                const double off = std::abs(gamma) / std::sqrt(alpha * beta);
                residual = std::max(residual, off);
                if (off <= kTol) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                auto rotate = [c, s](std::span<double> a, std::span<double> b) {
                    for (std::size_t i = 0; i < a.size(); ++i) {
                        const double ai = a[i];
                        const double bi = b[i];
                        a[i] = c * ai - s * bi;
                        b[i] = s * ai + c * bi;
                    }
                };
                rotate(x.row(p), x.row(q));
                rotate(v.row(p), v.row(q));
            }
        }
        out.sweeps = sweep + 1;
        if (!rotated) {
            return out;
        }
    }
    (void)len;
    std::ostringstream msg;
    msg << "svd_top did not converge after " << kMaxSweeps << " sweeps (residual " << residual << ")";
    fail(ErrorKind::numerical, msg.str());
}

// Fill columns of `basis` (stored as rows) whose flag is false with unit vectors
// orthogonal to every other column.
void complete_basis(Matrix& basis, const std::vector<bool>& valid)
{
    const std::size_t k = basis.rows();
    const std::size_t dim = basis.cols();
    std::vector<bool> done = valid;
    std::size_t next_axis = 0;
    for (std::size_t j = 0; j < k; ++j) {
        if (done[j]) {
            continue;
        }
        while (next_axis < dim) {
            std::vector<double> cand(dim, 0.0);
            cand[next_axis++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t i = 0; i < k; ++i) {
                    if (!done[i]) {
                        continue;
                    }
                    const double proj = dot(cand, basis.row(i));
                    for (std::size_t d = 0; d < dim; ++d) {
                        cand[d] -= proj * basis(i, d);
                    }
                }
            }
            const double nrm = norm2(cand);
            if (nrm > 1e-8) {
                for (std::size_t d = 0; d < dim; ++d) {
                    basis(j, d) = cand[d] / nrm;
                }
                done[j] = true;
                break;
            }
        }
        require(done[j], ErrorKind::numerical, "svd_top could not complete an orthonormal basis");
    }
}

}  // namespace

TruncatedSvd svd_top(const Matrix& m, std::size_t k)
{
    require(k > 0, ErrorKind::invalid_argument, "svd_top: k must be positive");
    require(k <= std::min(m.rows(), m.cols()), ErrorKind::invalid_argument, "svd_top: k exceeds min(rows, cols)");
    require(all_finite(m.flat()), ErrorKind::numerical, "svd_top: non-finite input");

    // Columns of the working matrix are the columns of m when m is tall, else the rows of m.
    const bool tall = m.rows() >= m.cols();
    Jacobi jac = one_sided_jacobi(tall ? m.transposed() : m);

    const std::size_t n = jac.cols.rows();
    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        sigma[j] = norm2(jac.cols.row(j));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    // "left" vectors live in the long dimension, "right" in the short (Gram) dimension.
    const std::size_t long_dim = jac.cols.cols();
    const double cutoff = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-13;
    Matrix left(k, long_dim);
    Matrix right(k, n);
    std::vector<double> s(k);
    std::vector<bool> left_ok(k, true);
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = order[j];
        s[j] = sigma[src];
        for (std::size_t d = 0; d < n; ++d) {
            right(j, d) = jac.rot(src, d);
        }
        if (s[j] > cutoff && s[j] > 0.0) {
            for (std::size_t d = 0; d < long_dim; ++d) {
                left(j, d) = jac.cols(src, d) / s[j];
            }
        } else {
            s[j] = 0.0;
            left_ok[j] = false;
        }
    }
    complete_basis(left, left_ok);

    TruncatedSvd out;
    out.s = std::move(s);
    out.sweeps = jac.sweeps;
    Matrix u_rows = tall ? std::move(left) : std::move(right);
    Matrix v_rows = tall ? std::move(right) : std::move(left);

    for (std::size_t j = 0; j < k; ++j) {
        auto vj = v_rows.row(j);
        const auto first = std::find_if(vj.begin(), vj.end(), [](double x) { return std::abs(x) > 1e-14; });
        if (first != vj.end() && *first < 0.0) {
            for (auto& x : vj) {
                x = -x;
            }
            for (auto& x : u_rows.row(j)) {
                x = -x;
            }
        }
    }
    out.u = u_rows.transposed();
    out.v = v_rows.transposed();
    return out;
}

}  // namespace afl::num
