#pragma once

#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afl/experts/library.hpp"
#include "afl/lm/model.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::test {

using num::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, num::Rng& rng, double scale = 1.0)
{
    Matrix m(r, c);
    for (auto& v : m.flat()) {
        v = rng.normal(0.0, scale);
    }
    return m;
}

inline std::vector<double> random_vector(std::size_t n, num::Rng& rng, double scale = 1.0)
{
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal(0.0, scale);
    }
    return v;
}

inline lm::BaseConfig small_config()
{
    lm::BaseConfig c;
    c.vocab = 12;
    c.width = 8;
    c.layers = 2;
    c.ffn_width = 12;
    c.max_len = 10;
    return c;
}

inline lm::BaseLM small_base(std::uint64_t seed = 1)
{
    num::Rng rng(seed);
    return lm::BaseLM::build(small_config(), rng);
}

/// Adapter with both factors random, so ΔW ≠ 0.
inline experts::LoraAdapter random_adapter(const lm::BaseLM& base, num::Rng& rng, std::size_t rank = 2, double alpha = 4.0,
                                           double scale = 0.3)
{
    auto ad = experts::LoraAdapter::zeros(base, rank, alpha);
    for (std::size_t s = 0; s < ad.site_count(); ++s) {
        ad.a[s] = random_matrix(ad.a[s].rows(), ad.a[s].cols(), rng, scale);
        ad.b[s] = random_matrix(ad.b[s].rows(), ad.b[s].cols(), rng, scale);
    }
    return ad;
}

inline experts::ExpertLibrary random_library(const lm::BaseLM& base, std::size_t n, num::Rng& rng, std::size_t rank = 2,
                                             double alpha = 4.0, double scale = 0.3)
{
    experts::ExpertLibrary lib;
    for (std::size_t i = 0; i < n; ++i) {
        auto ad = random_adapter(base, rng, rank, alpha, scale);
        ad.task = "t" + std::to_string(i);
        lib.add(std::move(ad), "e" + std::to_string(i));
    }
    return lib;
}

inline lm::Sequence random_sequence(std::size_t len, std::size_t vocab, num::Rng& rng, std::size_t target_start = 2)
{
    std::vector<lm::Token> tokens(len + 1);
    for (auto& t : tokens) {
        t = static_cast<lm::Token>(rng.below(vocab));
    }
    return lm::make_sequence(tokens, std::min(target_start, len));
}

inline lm::Dataset random_dataset(std::size_t n, std::size_t vocab, num::Rng& rng, std::size_t min_len = 3, std::size_t max_len = 7)
{
    lm::Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        d.push_back(random_sequence(min_len + rng.below(max_len - min_len + 1), vocab, rng));
    }
    return d;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return INFINITY;
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

inline bool bit_equal(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

inline bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("afl-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace afl::test
