#include "afl/numerics/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "afl/error.hpp"

namespace afl::num {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    require(data_.size() == rows_ * cols_, ErrorKind::shape_mismatch, "matrix data length does not match dims");
}

Matrix Matrix::identity(std::size_t n)
{
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const
{
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other)
{
    require(rows_ == other.rows_ && cols_ == other.cols_, ErrorKind::shape_mismatch, "matrix += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other)
{
    require(rows_ == other.rows_ && cols_ == other.cols_, ErrorKind::shape_mismatch, "matrix -= shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s)
{
    for (auto& v : data_) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b)
{
    require(a.cols() == b.rows(), ErrorKind::shape_mismatch, "matmul inner dimension mismatch");
    Matrix c(a.rows(), b.cols());
    gemm_acc(a.data(), a.rows(), a.cols(), b.data(), b.cols(), c.data());
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows(), ErrorKind::shape_mismatch, "matmul_at_b row mismatch");
    Matrix c(a.cols(), b.cols());
    gemm_tn_acc(a.data(), a.rows(), a.cols(), b.data(), b.cols(), c.data());
    return c;
}

double frobenius_norm(const Matrix& m) { return norm2(m.flat()); }

double max_abs(const Matrix& m)
{
    double best = 0.0;
    for (double v : m.flat()) {
        best = std::max(best, std::abs(v));
    }
    return best;
}

bool all_finite(std::span<const double> values)
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void gemm_acc(const double* in, std::size_t t, std::size_t k, const double* w_t, std::size_t n, double* out)
{
    for (std::size_t r = 0; r < t; ++r) {
        const double* x = in + r * k;
        double* __restrict y = out + r * n;
        std::size_t j = 0;
        for (; j + 4 <= k; j += 4) {
            const double x0 = x[j], x1 = x[j + 1], x2 = x[j + 2], x3 = x[j + 3];
            const double* __restrict w0 = w_t + j * n;
            const double* __restrict w1 = w0 + n;
            const double* __restrict w2 = w1 + n;
            const double* __restrict w3 = w2 + n;
            for (std::size_t c = 0; c < n; ++c) {
                y[c] += x0 * w0[c] + x1 * w1[c] + x2 * w2[c] + x3 * w3[c];
            }
        }
        for (; j < k; ++j) {
            const double xj = x[j];
            const double* __restrict w = w_t + j * n;
            for (std::size_t c = 0; c < n; ++c) {
                y[c] += xj * w[c];
            }
        }
    }
}

void gemm_tn_acc(const double* dout, std::size_t t, std::size_t n, const double* in, std::size_t k, double* grad)
{
    for (std::size_t r = 0; r < t; ++r) {
        const double* g = dout + r * n;
        const double* x = in + r * k;
        for (std::size_t o = 0; o < n; ++o) {
            const double go = g[o];
            if (go == 0.0) {
                continue;
            }
            double* row = grad + o * k;
            for (std::size_t c = 0; c < k; ++c) {
                row[c] += go * x[c];
            }
        }
    }
}

}  // namespace afl::num
