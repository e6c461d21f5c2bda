#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "afl/experts/lora.hpp"
#include "afl/lm/model.hpp"

namespace afl::oracle {

using num::Matrix;

struct Eigen {
    std::vector<double> values;   // descending
    Matrix vectors;               // columns
};

/// Cyclic two-sided Jacobi eigendecomposition of a symmetric matrix.
inline Eigen jacobi_eigen(Matrix a)
{
    const std::size_t n = a.rows();
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        v(i, i) = 1.0;
    }
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a(p, q) * a(p, q);
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    Eigen out;
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values.push_back(a(order[j], order[j]));
        for (std::size_t i = 0; i < n; ++i) {
            out.vectors(i, j) = v(i, order[j]);
        }
    }
    return out;
}

/// Best rank-k approximation of m from the eigendecomposition of mᵀm.
inline Matrix gram_rank_k(const Matrix& m, std::size_t k)
{
    Matrix g(m.cols(), m.cols());
    for (std::size_t i = 0; i < m.cols(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            for (std::size_t r = 0; r < m.rows(); ++r) {
                g(i, j) += m(r, i) * m(r, j);
            }
        }
    }
    const auto e = jacobi_eigen(g);
    // M V_k V_kᵀ
    Matrix out(m.rows(), m.cols());
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> mv(m.rows(), 0.0);
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                mv[r] += m(r, j) * e.vectors(j, c);
            }
        }
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                out(r, j) += mv[r] * e.vectors(j, c);
            }
        }
    }
    return out;
}

/// Leading eigenvector of ΔWᵀΔW: Arrow's routing direction (up to sign).
inline std::vector<double> top_right_singular(const Matrix& m)
{
    Matrix g(m.cols(), m.cols());
    for (std::size_t i = 0; i < m.cols(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            for (std::size_t r = 0; r < m.rows(); ++r) {
                g(i, j) += m(r, i) * m(r, j);
            }
        }
    }
    const auto e = jacobi_eigen(g);
    std::vector<double> v(m.cols());
    for (std::size_t i = 0; i < m.cols(); ++i) {
        v[i] = e.vectors(i, 0);
    }
    return v;
}

/// Straight-line evaluation of the base model (plus optional adapter) with
/// plain loops, libm tanh and per-position attention. Returns T × V probabilities.
inline Matrix dense_forward(const lm::BaseLM& base, const std::vector<lm::Token>& tokens, const experts::LoraAdapter* adapter = nullptr)
{
    const auto& cfg = base.config();
    const std::size_t T = tokens.size();
    const std::size_t m = cfg.width;
    const std::size_t ff = cfg.ffn_width;
    const double* P = base.params().data();
    auto W = [&](std::size_t off, std::size_t cols, std::size_t i, std::size_t j) { return P[off + i * cols + j]; };
    auto ln = [&](const std::vector<double>& x) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x.size());
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5);
        return y;
    };
    auto lora = [&](std::size_t site, const std::vector<double>& h, std::vector<double>& out) {
        if (!adapter) return;
        const auto& A = adapter->a[site];
        const auto& B = adapter->b[site];
        std::vector<double> bh(adapter->rank, 0.0);
        for (std::size_t c = 0; c < adapter->rank; ++c)
            for (std::size_t j = 0; j < h.size(); ++j) bh[c] += B(c, j) * h[j];
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t c = 0; c < adapter->rank; ++c) out[i] += adapter->scale() * A(i, c) * bh[c];
    };

    std::vector<std::vector<double>> x(T, std::vector<double>(m));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < m; ++i) x[t][i] = P[base.tok_emb_offset() + tokens[t] * m + i] + P[base.pos_emb_offset() + t * m + i];

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& lo = base.layer(l);
        std::vector<std::vector<double>> a(T), q(T, std::vector<double>(m, 0.0)), k(T, std::vector<double>(m, 0.0));
        for (std::size_t t = 0; t < T; ++t) {
            a[t] = ln(x[t]);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    q[t][i] += W(lo.wq, m, i, j) * a[t][j];
                    k[t][i] += W(lo.wk, m, i, j) * a[t][j];
                }
        }
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> sc(t + 1);
            for (std::size_t s = 0; s <= t; ++s) {
                double d = 0.0;
                for (std::size_t i = 0; i < m; ++i) d += q[t][i] * k[s][i];
                sc[s] = d / std::sqrt(static_cast<double>(m));
            }
            const double mx = *std::max_element(sc.begin(), sc.end());
            double z = 0.0;
            for (double& v : sc) z += (v = std::exp(v - mx));
            std::vector<double> c(m, 0.0);
            for (std::size_t s = 0; s <= t; ++s)
                for (std::size_t i = 0; i < m; ++i) c[i] += sc[s] / z * a[s][i];
            std::vector<double> o(m);
            for (std::size_t i = 0; i < m; ++i) {
                o[i] = P[lo.attn_b + i];
                for (std::size_t j = 0; j < m; ++j) o[i] += W(lo.attn_w, m, i, j) * c[j];
            }
            lora(lm::BaseLM::site_index(l, lm::SiteKind::attention), c, o);
            for (std::size_t i = 0; i < m; ++i) x[t][i] += o[i];
        }
        for (std::size_t t = 0; t < T; ++t) {
            const auto f = ln(x[t]);
            std::vector<double> u(ff);
            for (std::size_t i = 0; i < ff; ++i) {
                u[i] = P[lo.ffn_b + i];
                for (std::size_t j = 0; j < m; ++j) u[i] += W(lo.ffn_w, m, i, j) * f[j];
            }
            lora(lm::BaseLM::site_index(l, lm::SiteKind::feed_forward), f, u);
            for (auto& v : u) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
            for (std::size_t i = 0; i < m; ++i) {
                double y = P[lo.out_b + i];
                for (std::size_t j = 0; j < ff; ++j) y += W(lo.out_w, ff, i, j) * u[j];
                x[t][i] += y;
            }
        }
    }
    Matrix probs(T, cfg.vocab);
    for (std::size_t t = 0; t < T; ++t) {
        const auto z = ln(x[t]);
        std::vector<double> logit(cfg.vocab);
        for (std::size_t v = 0; v < cfg.vocab; ++v) {
            logit[v] = P[base.head_b_offset() + v];
            for (std::size_t j = 0; j < m; ++j) logit[v] += W(base.head_w_offset(), m, v, j) * z[j];
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double s = 0.0;
        for (double& v : logit) s += (v = std::exp(v - mx));
        for (std::size_t v = 0; v < cfg.vocab; ++v) probs(t, v) = logit[v] / s;
    }
    return probs;
}

/// Minimum over a simplex grid of max_t Σ_i λ_i M_it (N = 3).
inline double simplex_grid_minimax(const Matrix& m, double step)
{
    const int n = static_cast<int>(std::lround(1.0 / step));
    double best = INFINITY;
    for (int i = 0; i <= n; ++i) {
        for (int j = 0; i + j <= n; ++j) {
            const double l0 = i * step, l1 = j * step, l2 = 1.0 - l0 - l1;
            double worst = -INFINITY;
            for (std::size_t t = 0; t < m.cols(); ++t) {
                worst = std::max(worst, l0 * m(0, t) + l1 * m(1, t) + l2 * m(2, t));
            }
            best = std::min(best, worst);
        }
    }
    return best;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace afl::oracle
