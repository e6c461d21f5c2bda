#include "afl/lm/forward.hpp"

#include <cmath>
#include <numbers>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::lm {
namespace {

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

Matrix layer_norm(const Matrix& x, std::vector<double>& rstd)
{
    const std::size_t n = x.cols();
    Matrix y(x.rows(), n);
    rstd.resize(x.rows());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        double mean = 0.0;
        for (double v : xr) {
            mean += v;
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : xr) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(n);
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[t] = r;
        auto yr = y.row(t);
        for (std::size_t i = 0; i < n; ++i) {
            yr[i] = (xr[i] - mean) * r;
        }
    }
    return y;
}

// grad_x += rstd · (dy − mean(dy) − y · mean(dy ⊙ y))
void layer_norm_backward(const Matrix& dy, const Matrix& y, const std::vector<double>& rstd, Matrix& grad_x)
{
    const std::size_t n = y.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < y.rows(); ++t) {
        const auto g = dy.row(t);
        const auto yr = y.row(t);
        double mg = 0.0;
        double mgy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mg += g[i];
            mgy += g[i] * yr[i];
        }
        mg *= inv_n;
        mgy *= inv_n;
        auto out = grad_x.row(t);
        for (std::size_t i = 0; i < n; ++i) {
            out[i] += rstd[t] * (g[i] - mg - yr[i] * mgy);
        }
    }
}

// tanh via a single exp; libm tanh is several times slower
double fast_tanh(double x)
{
    if (x > 20.0) {
        return 1.0;
    }
    if (x < -20.0) {
        return -1.0;
    }
    return 1.0 - 2.0 / (std::exp(2.0 * x) + 1.0);
}

double gelu(double u)
{
    const double inner = kGeluC * (u + 0.044715 * u * u * u);
    return 0.5 * u * (1.0 + fast_tanh(inner));
}

double gelu_grad(double u)
{
    const double inner = kGeluC * (u + 0.044715 * u * u * u);
    const double th = fast_tanh(inner);
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void add_bias(Matrix& m, const double* bias)
{
    for (std::size_t t = 0; t < m.rows(); ++t) {
        auto r = m.row(t);
        for (std::size_t i = 0; i < r.size(); ++i) {
            r[i] += bias[i];
        }
    }
}

void add_colsum(const Matrix& m, double* out)
{
    for (std::size_t t = 0; t < m.rows(); ++t) {
        const auto r = m.row(t);
        for (std::size_t i = 0; i < r.size(); ++i) {
            out[i] += r[i];
        }
    }
}

}  // namespace

const Matrix& Trace::site_input(std::size_t site) const
{
    const auto& lt = layers.at(site / 2);
    return site % 2 == 0 ? lt.c : lt.f;
}

Trace run_forward(const BaseLM& base, std::span<const Token> tokens, AdapterHook* hook)
{
    const auto& cfg = base.config();
    const std::size_t T = tokens.size();
    const std::size_t m = cfg.width;
    const std::size_t ff = cfg.ffn_width;
    require(T >= 1, ErrorKind::invalid_argument, "forward: empty sequence");
    require(T <= cfg.max_len, ErrorKind::invalid_argument, "forward: sequence longer than max_len");

    Trace tr;
    tr.tokens.assign(tokens.begin(), tokens.end());
    Matrix x(T, m);
    for (std::size_t t = 0; t < T; ++t) {
        require(tokens[t] < cfg.vocab, ErrorKind::invalid_argument, "forward: token out of vocabulary");
        const double* e = base.tok_emb() + tokens[t] * m;
        const double* p = base.pos_emb() + t * m;
        auto xr = x.row(t);
        for (std::size_t i = 0; i < m; ++i) {
            xr[i] = e[i] + p[i];
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(m));
    tr.layers.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto& lt = tr.layers[l];
        const auto& lo = base.layer(l);
        lt.x_in = x;
        lt.a = layer_norm(x, lt.a_rstd);
        lt.q = Matrix(T, m);
        lt.k = Matrix(T, m);
        num::gemm_acc(lt.a.data(), T, m, base.wq_t(l), m, lt.q.data());
        num::gemm_acc(lt.a.data(), T, m, base.wk_t(l), m, lt.k.data());

        lt.p = Matrix(T, T);
        lt.c = Matrix(T, m);
        for (std::size_t t = 0; t < T; ++t) {
            auto pr = lt.p.row(t);
            double mx = -1e300;
            for (std::size_t s = 0; s <= t; ++s) {
                pr[s] = num::dot(lt.q.row(t), lt.k.row(s)) * scale;
                mx = std::max(mx, pr[s]);
            }
            double sum = 0.0;
            for (std::size_t s = 0; s <= t; ++s) {
                pr[s] = std::exp(pr[s] - mx);
                sum += pr[s];
            }
            auto cr = lt.c.row(t);
            for (std::size_t s = 0; s <= t; ++s) {
                pr[s] /= sum;
                const auto ar = lt.a.row(s);
                for (std::size_t i = 0; i < m; ++i) {
                    cr[i] += pr[s] * ar[i];
                }
            }
        }

        Matrix o(T, m);
        num::gemm_acc(lt.c.data(), T, m, base.attn_w_t(l), m, o.data());
        add_bias(o, base.at(lo.attn_b));
        if (hook) {
            hook->forward(BaseLM::site_index(l, SiteKind::attention), lt.c, o);
        }
        x += o;
        lt.x_mid = x;

        lt.f = layer_norm(x, lt.f_rstd);
        lt.u = Matrix(T, ff);
        num::gemm_acc(lt.f.data(), T, m, base.ffn_w_t(l), ff, lt.u.data());
        add_bias(lt.u, base.at(lo.ffn_b));
        if (hook) {
            hook->forward(BaseLM::site_index(l, SiteKind::feed_forward), lt.f, lt.u);
        }
        lt.g = Matrix(T, ff);
        for (std::size_t i = 0; i < lt.u.size(); ++i) {
            lt.g.data()[i] = gelu(lt.u.data()[i]);
        }
        Matrix y(T, m);
        num::gemm_acc(lt.g.data(), T, ff, base.out_w_t(l), m, y.data());
        add_bias(y, base.at(lo.out_b));
        x += y;
    }

    tr.x_out = x;
    tr.z = layer_norm(x, tr.z_rstd);
    tr.logits = Matrix(T, cfg.vocab);
    num::gemm_acc(tr.z.data(), T, m, base.head_w_t(), cfg.vocab, tr.logits.data());
    add_bias(tr.logits, base.at(base.head_b_offset()));
    tr.probs = tr.logits;
    for (std::size_t t = 0; t < T; ++t) {
        num::softmax_inplace(tr.probs.row(t));
    }
    return tr;
}

void run_backward(const BaseLM& base, const Trace& tr, const Matrix& grad_logits, AdapterHook* hook,
                  std::span<double> base_grad)
{
    const auto& cfg = base.config();
    const std::size_t T = tr.tokens.size();
    const std::size_t m = cfg.width;
    const std::size_t ff = cfg.ffn_width;
    const std::size_t V = cfg.vocab;
    const bool want_base = !base_grad.empty();
    if (want_base) {
        require(base_grad.size() == base.params().size(), ErrorKind::shape_mismatch, "backward: base gradient size mismatch");
    }
    double* bg = base_grad.data();

    Matrix dz(T, m);
    num::gemm_acc(grad_logits.data(), T, V, base.at(base.head_w_offset()), m, dz.data());
    if (want_base) {
        num::gemm_tn_acc(grad_logits.data(), T, V, tr.z.data(), m, bg + base.head_w_offset());
        add_colsum(grad_logits, bg + base.head_b_offset());
    }
    Matrix dx(T, m);
    layer_norm_backward(dz, tr.z, tr.z_rstd, dx);

    const double scale = 1.0 / std::sqrt(static_cast<double>(m));
    for (std::size_t li = cfg.layers; li-- > 0;) {
        const auto& lt = tr.layers[li];
        const auto& lo = base.layer(li);

        // feed-forward block
        Matrix dg(T, ff);
        num::gemm_acc(dx.data(), T, m, base.at(lo.out_w), ff, dg.data());
        if (want_base) {
            num::gemm_tn_acc(dx.data(), T, m, lt.g.data(), ff, bg + lo.out_w);
            add_colsum(dx, bg + lo.out_b);
        }
        Matrix du(T, ff);
        for (std::size_t i = 0; i < du.size(); ++i) {
            du.data()[i] = dg.data()[i] * gelu_grad(lt.u.data()[i]);
        }
        Matrix df(T, m);
        num::gemm_acc(du.data(), T, ff, base.at(lo.ffn_w), m, df.data());
        if (hook) {
            hook->backward(BaseLM::site_index(li, SiteKind::feed_forward), lt.f, du, df);
        }
        if (want_base) {
            num::gemm_tn_acc(du.data(), T, ff, lt.f.data(), m, bg + lo.ffn_w);
            add_colsum(du, bg + lo.ffn_b);
        }
        layer_norm_backward(df, lt.f, lt.f_rstd, dx);

        // attention site: its output was added to the residual stream
        Matrix dc(T, m);
        num::gemm_acc(dx.data(), T, m, base.at(lo.attn_w), m, dc.data());
        if (hook) {
            hook->backward(BaseLM::site_index(li, SiteKind::attention), lt.c, dx, dc);
        }
        if (want_base) {
            num::gemm_tn_acc(dx.data(), T, m, lt.c.data(), m, bg + lo.attn_w);
            add_colsum(dx, bg + lo.attn_b);
        }

        // causal attention over the normalized inputs
        Matrix da(T, m);
        Matrix dq(T, m);
        Matrix dk(T, m);
        std::vector<double> dp(T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto pr = lt.p.row(t);
            const auto dcr = dc.row(t);
            double inner = 0.0;
            for (std::size_t s = 0; s <= t; ++s) {
                dp[s] = num::dot(dcr, lt.a.row(s));
                inner += pr[s] * dp[s];
                auto dar = da.row(s);
                for (std::size_t i = 0; i < m; ++i) {
                    dar[i] += pr[s] * dcr[i];
                }
            }
            auto dqr = dq.row(t);
            const auto qr = lt.q.row(t);
            for (std::size_t s = 0; s <= t; ++s) {
                const double ds = pr[s] * (dp[s] - inner) * scale;
                if (ds == 0.0) {
                    continue;
                }
                const auto kr = lt.k.row(s);
                auto dkr = dk.row(s);
                for (std::size_t i = 0; i < m; ++i) {
                    dqr[i] += ds * kr[i];
                    dkr[i] += ds * qr[i];
                }
            }
        }
        num::gemm_acc(dq.data(), T, m, base.at(lo.wq), m, da.data());
        num::gemm_acc(dk.data(), T, m, base.at(lo.wk), m, da.data());
        if (want_base) {
            num::gemm_tn_acc(dq.data(), T, m, lt.a.data(), m, bg + lo.wq);
            num::gemm_tn_acc(dk.data(), T, m, lt.a.data(), m, bg + lo.wk);
        }
        layer_norm_backward(da, lt.a, lt.a_rstd, dx);
    }

    if (want_base) {
        for (std::size_t t = 0; t < T; ++t) {
            double* e = bg + base.tok_emb_offset() + tr.tokens[t] * m;
            double* p = bg + base.pos_emb_offset() + t * m;
            const auto r = dx.row(t);
            for (std::size_t i = 0; i < m; ++i) {
                e[i] += r[i];
                p[i] += r[i];
            }
        }
    }
}

double batch_cross_entropy(const BaseLM& base, const Dataset& data, std::span<const std::size_t> items, AdapterHook* hook,
                           bool backward, std::span<double> base_grad)
{
    const std::size_t count = masked_count(data, items);
    require(count > 0, ErrorKind::invalid_argument, "no masked positions in batch");
    const double scale = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (auto i : items) {
        const auto& seq = data[i];
        const auto tr = run_forward(base, seq.inputs, hook);
        total += masked_loss_sum(tr.probs, seq);
        if (backward) {
            run_backward(base, tr, masked_ce_grad(tr.probs, seq, scale), hook, base_grad);
        }
    }
    return total * scale;
}

}  // namespace afl::lm
