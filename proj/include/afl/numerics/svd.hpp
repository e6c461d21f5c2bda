#pragma once

#include <cstddef>
#include <vector>

#include "afl/numerics/matrix.hpp"

namespace afl::num {

struct TruncatedSvd {
    Matrix u;                    // rows × k, orthonormal columns
    std::vector<double> s;       // k values, non-increasing
    Matrix v;                    // cols × k, orthonormal columns
    std::size_t sweeps = 0;
};

/// Leading k singular triplets of `m` by one-sided Jacobi on the smaller Gram
/// dimension. Each column of V has its first nonzero entry non-negative.
TruncatedSvd svd_top(const Matrix& m, std::size_t k);

}  // namespace afl::num
