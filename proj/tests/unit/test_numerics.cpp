#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "support.hpp"
#include "afl/error.hpp"
#include "afl/numerics/gradcheck.hpp"
#include "afl/numerics/ops.hpp"
#include "afl/numerics/optimizer.hpp"
#include "afl/numerics/svd.hpp"

using namespace afl;
using num::Matrix;

TEST_CASE("softmax")
{
    auto p = num::softmax(std::vector<double>{0, 0, 0});
    for (double v : p) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(num::softmax(std::vector<double>{}), Error);

    num::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto z = test::random_vector(6, rng, 3.0);
        auto shifted = z;
        const double c = rng.uniform(-50, 50);
        for (auto& v : shifted) v += c;
        const auto a = num::softmax(z);
        const auto b = num::softmax(shifted);
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(std::abs(a[i] - b[i]) <= 1e-12);
        }
    }

    const auto q = num::softmax(std::vector<double>{1, 2, 3});
    long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(q[i] - static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z)) <= 1e-12);
    }
}

TEST_CASE("log_softmax agrees with log of softmax")
{
    num::Rng rng(4);
    auto z = test::random_vector(9, rng, 2.0);
    const auto p = num::softmax(z);
    const auto lp = num::log_softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(lp[i] == doctest::Approx(std::log(p[i])).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy")
{
    CHECK(num::cross_entropy(std::vector<double>{0, 1, 0}, 1) <= 1e-11);
    std::vector<double> u(8, 1.0 / 8);
    CHECK(num::cross_entropy(u, 5) == doctest::Approx(std::log(8.0)).epsilon(1e-10));
    CHECK(num::cross_entropy(std::vector<double>{0.25, 0.75}, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-11));
    CHECK_THROWS_AS(num::cross_entropy(std::vector<double>{0.5, 0.5}, 2), Error);
}

TEST_CASE("kl divergence")
{
    std::vector<double> q{0.5, 0.5, 0.0};
    std::vector<double> p{0.25, 0.25, 0.5};
    CHECK(num::kl_divergence(q, p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(num::kl_divergence(p, p) == doctest::Approx(0.0));
}

TEST_CASE("svd_top on diagonal and rank-one inputs")
{
    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 2;
    d(2, 2) = 1;
    const auto s = num::svd_top(d, 3);
    REQUIRE(s.s.size() == 3);
    CHECK(s.s[0] == doctest::Approx(3.0));
    CHECK(s.s[1] == doctest::Approx(2.0));
    CHECK(s.s[2] == doctest::Approx(1.0));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(s.v(j, j)) == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(num::svd_top(d, 0), Error);

    std::vector<double> u{1, -2, 0.5, 3};
    std::vector<double> v{0.3, -1, 2};
    Matrix r(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = u[i] * v[j];
    const auto sr = num::svd_top(r, 1);
    CHECK(sr.s[0] == doctest::Approx(num::norm2(u) * num::norm2(v)).epsilon(1e-12));
    std::vector<double> v0{sr.v(0, 0), sr.v(1, 0), sr.v(2, 0)};
    CHECK(std::abs(oracle::cosine(v0, v)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sr.v(0, 0) > 0);  // first nonzero entry non-negative
}

TEST_CASE("svd_top reconstruction matches Gram eigendecomposition")
{
    num::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = num::matmul(test::random_matrix(8, 4, rng), test::random_matrix(4, 6, rng));
        const auto s = num::svd_top(m, 4);
        Matrix rec(8, 6);
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t j = 0; j < 6; ++j) rec(i, j) += s.u(i, c) * s.s[c] * s.v(j, c);
        CHECK(num::frobenius_norm(rec - m) / num::frobenius_norm(m) <= 1e-6);
        const Matrix ref = oracle::gram_rank_k(m, 4);
        CHECK(num::frobenius_norm(rec - ref) / num::frobenius_norm(m) <= 1e-6);
        for (std::size_t c = 1; c < 4; ++c) {
            CHECK(s.s[c] <= s.s[c - 1]);
        }
        // orthonormal V
        const Matrix vtv = num::matmul_at_b(s.v, s.v);
        CHECK(test::max_abs_diff(vtv, Matrix::identity(4)) <= 1e-10);
    }
}

TEST_CASE("finite differences")
{
    const auto g = num::finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, std::vector<double>{3.0});
    CHECK(std::abs(g[0] - 6.0) <= 1e-8);
    const auto z = num::finite_diff_grad([](std::span<const double>) { return 4.0; }, std::vector<double>{1, 2, 3});
    for (double v : z) CHECK(v == 0.0);
    CHECK_THROWS_AS(num::finite_diff_grad([](std::span<const double>) { return NAN; }, std::vector<double>{1}), Error);

    num::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto logits = test::random_vector(7, rng);
        const std::size_t target = rng.below(7);
        const auto fd = num::finite_diff_grad(
            [&](std::span<const double> x) { return num::cross_entropy(num::softmax(x), target); }, logits);
        auto analytic = num::softmax(logits);
        analytic[target] -= 1.0;
        CHECK(num::relative_error(fd, analytic) <= 1e-6);
    }
}

TEST_CASE("softmax_backward matches finite differences")
{
    num::Rng rng(6);
    const auto z = test::random_vector(5, rng);
    const auto w = test::random_vector(5, rng);
    const auto fd = num::finite_diff_grad([&](std::span<const double> x) { return num::dot(num::softmax(x), w); }, z);
    std::vector<double> g(5);
    num::softmax_backward(num::softmax(z), w, g);
    CHECK(num::relative_error(fd, g) <= 1e-7);
}

TEST_CASE("optimizer steps")
{
    std::vector<double> p{1.0};
    num::Optimizer plain(num::OptimizerKind::plain_gradient, 0.1);
    plain.step(p, std::vector<double>{2.0});
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

    std::vector<double> q{0.5, -1.0};
    num::Optimizer adam(num::OptimizerKind::adaptive_moment, 1e-3);
    adam.step(q, std::vector<double>{0.0, 0.0});
    CHECK(q[0] == 0.5);
    CHECK(q[1] == -1.0);

    std::vector<double> r{0.0};
    num::Optimizer adam2(num::OptimizerKind::adaptive_moment, 1e-3);
    adam2.step(r, std::vector<double>{1.0});
    // m̂ = 1, v̂ = 1 after bias correction
    CHECK(r[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));

    CHECK_THROWS_AS(adam2.step(r, std::vector<double>{1.0, 2.0}), Error);
    CHECK(num::parse_optimizer_kind(num::to_string(num::OptimizerKind::plain_gradient)) == num::OptimizerKind::plain_gradient);
}

TEST_CASE("rng determinism and derived streams")
{
    num::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    auto x = num::Rng::derive(1, "x");
    auto y = num::Rng::derive(1, "y");
    auto x2 = num::Rng::derive(1, "x");
    CHECK(x.next_u64() != y.next_u64());
    CHECK(num::Rng::derive(1, "x").next_u64() == x2.next_u64());
    num::Rng c(7);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = c.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        sum += c.normal();
    }
    CHECK(std::abs(sum / 20000) < 0.05);
    for (int i = 0; i < 1000; ++i) {
        CHECK(c.below(13) < 13u);
    }
}

TEST_CASE("gemm kernels match matmul")
{
    num::Rng rng(8);
    const Matrix in = test::random_matrix(5, 4, rng);
    const Matrix w = test::random_matrix(3, 4, rng);  // out × in
    const Matrix wt = w.transposed();
    Matrix out(5, 3);
    num::gemm_acc(in.data(), 5, 4, wt.data(), 3, out.data());
    CHECK(test::max_abs_diff(out, num::matmul(in, wt)) <= 1e-13);
    Matrix grad(3, 4);
    num::gemm_tn_acc(out.data(), 5, 3, in.data(), 4, grad.data());
    CHECK(test::max_abs_diff(grad, num::matmul_at_b(out, in)) <= 1e-13);
}
