#include "afl/fusion/simplex.hpp"

#include <cmath>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::fusion {

std::string to_string(WeightMode mode) { return mode == WeightMode::global ? "global" : "per-layer"; }

WeightMode parse_weight_mode(const std::string& name)
{
    if (name == "global") {
        return WeightMode::global;
    }
    if (name == "per-layer" || name == "layer") {
        return WeightMode::per_layer;
    }
    fail(ErrorKind::invalid_argument, "unknown weight mode '" + name + "'");
}

void check_simplex(std::span<const double> lambda, double tol)
{
    double sum = 0.0;
    for (double v : lambda) {
        require(std::isfinite(v) && v >= 0.0, ErrorKind::numerical, "coefficient off the simplex (negative or non-finite)");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= tol, ErrorKind::numerical, "coefficients do not sum to one");
}

SimplexWeights SimplexWeights::uniform(std::size_t experts, WeightMode mode, std::size_t layers)
{
    require(experts >= 1, ErrorKind::invalid_argument, "simplex weights need at least one expert");
    const std::size_t rows = mode == WeightMode::global ? 1 : layers;
    require(rows >= 1, ErrorKind::invalid_argument, "per-layer weights need at least one layer");
    return from_logits(mode, Matrix(rows, experts, 0.0));
}

SimplexWeights SimplexWeights::from_logits(WeightMode mode, Matrix logits)
{
    require(logits.rows() >= 1 && logits.cols() >= 1, ErrorKind::invalid_argument, "empty logits");
    require(mode == WeightMode::per_layer || logits.rows() == 1, ErrorKind::invalid_argument, "global weights have one row");
    SimplexWeights w;
    w.mode_ = mode;
    w.lambda_ = logits;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        num::softmax_inplace(w.lambda_.row(r));
    }
    w.logits_ = std::move(logits);
    return w;
}

SimplexWeights SimplexWeights::from_lambda(WeightMode mode, Matrix lambda)
{
    require(lambda.rows() >= 1 && lambda.cols() >= 1, ErrorKind::invalid_argument, "empty coefficients");
    require(mode == WeightMode::per_layer || lambda.rows() == 1, ErrorKind::invalid_argument, "global weights have one row");
    SimplexWeights w;
    w.mode_ = mode;
    w.logits_ = Matrix(lambda.rows(), lambda.cols());
    for (std::size_t r = 0; r < lambda.rows(); ++r) {
        check_simplex(lambda.row(r), 1e-9);
        for (std::size_t c = 0; c < lambda.cols(); ++c) {
            // exp(-1e4) underflows to exactly zero
            w.logits_(r, c) = lambda(r, c) > 0.0 ? std::log(lambda(r, c)) : -1e4;
        }
    }
    w.lambda_ = std::move(lambda);
    return w;
}

SimplexWeights SimplexWeights::one_hot(std::size_t experts, std::size_t index, WeightMode mode, std::size_t layers)
{
    require(index < experts, ErrorKind::invalid_argument, "one-hot index out of range");
    const std::size_t rows = mode == WeightMode::global ? 1 : layers;
    Matrix lambda(rows, experts);
    for (std::size_t r = 0; r < rows; ++r) {
        lambda(r, index) = 1.0;
    }
    return from_lambda(mode, std::move(lambda));
}

std::span<const double> SimplexWeights::for_layer(std::size_t layer) const
{
    if (mode_ == WeightMode::global) {
        return lambda_.row(0);
    }
    require(layer < lambda_.rows(), ErrorKind::invalid_argument, "no coefficient row for layer " + std::to_string(layer));
    return lambda_.row(layer);
}

nlohmann::json SimplexWeights::to_json() const
{
    auto rows_of = [](const Matrix& m) {
        nlohmann::json out = nlohmann::json::array();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            out.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
        }
        return out;
    };
    return {{"mode", to_string(mode_)}, {"logits", rows_of(logits_)}, {"lambda", rows_of(lambda_)}};
}

SimplexWeights SimplexWeights::from_json(const nlohmann::json& j)
{
    try {
        const auto mode = parse_weight_mode(j.at("mode").get<std::string>());
        auto read = [](const nlohmann::json& rows) {
            const auto v = rows.get<std::vector<std::vector<double>>>();
            require(!v.empty() && !v[0].empty(), ErrorKind::bad_format, "empty coefficient matrix");
            Matrix m(v.size(), v[0].size());
            for (std::size_t r = 0; r < v.size(); ++r) {
                require(v[r].size() == m.cols(), ErrorKind::bad_format, "ragged coefficient matrix");
                std::copy(v[r].begin(), v[r].end(), m.row(r).begin());
            }
            return m;
        };
        SimplexWeights w = from_lambda(mode, read(j.at("lambda")));
        w.logits_ = read(j.at("logits"));
        require(w.logits_.rows() == w.lambda_.rows() && w.logits_.cols() == w.lambda_.cols(), ErrorKind::bad_format,
                "logits and lambda shapes differ");
        return w;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::bad_format, std::string("malformed weights json: ") + e.what());
    }
}

}  // namespace afl::fusion
