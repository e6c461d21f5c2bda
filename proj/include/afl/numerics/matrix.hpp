#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace afl::num {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    void fill(double v);
    Matrix transposed() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // aᵀ·b

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(std::span<const double> values);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// Row-batched kernels used by the model. All loops are written in axpy form
// (contiguous innermost stride) so they vectorize without reassociation.

/// out(T×n) += in(T×k) · w_t(k×n)
void gemm_acc(const double* in, std::size_t t, std::size_t k, const double* w_t, std::size_t n, double* out);
/// grad(n×k) += dout(T×n)ᵀ · in(T×k)
void gemm_tn_acc(const double* dout, std::size_t t, std::size_t n, const double* in, std::size_t k, double* grad);

}  // namespace afl::num
