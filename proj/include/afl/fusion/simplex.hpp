#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "afl/numerics/matrix.hpp"

namespace afl::fusion {

using num::Matrix;

enum class WeightMode { global, per_layer };

std::string to_string(WeightMode mode);
WeightMode parse_weight_mode(const std::string& name);

/// Fusion coefficients on the probability simplex, one row (global) or one
/// row per layer. Trained weights are parameterized by logits with
/// λ = softmax(logits) per row; fixed weights may be given as λ directly.
class SimplexWeights {
public:
    SimplexWeights() = default;

    static SimplexWeights uniform(std::size_t experts, WeightMode mode = WeightMode::global, std::size_t layers = 1);
    static SimplexWeights from_logits(WeightMode mode, Matrix logits);
    /// Rows must already lie on the simplex; stored exactly.
    static SimplexWeights from_lambda(WeightMode mode, Matrix lambda);
    static SimplexWeights one_hot(std::size_t experts, std::size_t index, WeightMode mode = WeightMode::global, std::size_t layers = 1);

    WeightMode mode() const noexcept { return mode_; }
    std::size_t rows() const noexcept { return lambda_.rows(); }
    std::size_t experts() const noexcept { return lambda_.cols(); }
    const Matrix& logits() const noexcept { return logits_; }
    const Matrix& lambda() const noexcept { return lambda_; }

    /// Coefficient row used at `layer` (row 0 in global mode).
    std::span<const double> for_layer(std::size_t layer) const;

    nlohmann::json to_json() const;
    static SimplexWeights from_json(const nlohmann::json& j);

private:
    WeightMode mode_ = WeightMode::global;
    Matrix logits_;
    Matrix lambda_;
};

/// Throws unless every row is non-negative and sums to 1 within `tol`.
void check_simplex(std::span<const double> lambda, double tol = 1e-12);

}  // namespace afl::fusion
