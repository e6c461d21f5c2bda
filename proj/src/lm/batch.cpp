#include "afl/lm/batch.hpp"

#include <algorithm>

#include "afl/error.hpp"
#include "afl/numerics/ops.hpp"

namespace afl::lm {

std::size_t Sequence::masked_count() const
{
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::size_t masked_count(const Dataset& data, std::span<const std::size_t> items)
{
    std::size_t n = 0;
    for (auto i : items) {
        n += data.at(i).masked_count();
    }
    return n;
}

Sequence make_sequence(std::span<const Token> tokens, std::size_t target_start)
{
    require(tokens.size() >= 2, ErrorKind::invalid_argument, "sequence needs at least two tokens");
    require(target_start >= 1 && target_start < tokens.size(), ErrorKind::invalid_argument, "target start out of range");
    Sequence seq;
    const std::size_t n = tokens.size() - 1;
    seq.inputs.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
    seq.targets.assign(tokens.begin() + 1, tokens.end());
    seq.mask.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        seq.mask[t] = (t + 1 >= target_start) ? 1 : 0;
    }
    return seq;
}

double masked_loss_sum(const Matrix& probs, const Sequence& seq)
{
    double total = 0.0;
    for (std::size_t t = 0; t < seq.length(); ++t) {
        if (seq.mask[t]) {
            total += num::cross_entropy(probs.row(t), seq.targets[t]);
        }
    }
    return total;
}

Matrix masked_ce_grad(const Matrix& probs, const Sequence& seq, double scale)
{
    Matrix grad(probs.rows(), probs.cols());
    for (std::size_t t = 0; t < seq.length(); ++t) {
        if (!seq.mask[t]) {
            continue;
        }
        auto g = grad.row(t);
        num::softmax_ce_grad(probs.row(t), seq.targets[t], g);
        for (auto& v : g) {
            v *= scale;
        }
    }
    return grad;
}

}  // namespace afl::lm
