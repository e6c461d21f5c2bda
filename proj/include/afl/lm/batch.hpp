#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "afl/lm/model.hpp"

namespace afl::lm {

/// Teacher-forced sequence: position t reads inputs[0..t] and predicts targets[t].
/// Loss is taken only where mask[t] is set.
struct Sequence {
    std::vector<Token> inputs;
    std::vector<Token> targets;
    std::vector<std::uint8_t> mask;

    std::size_t length() const noexcept { return inputs.size(); }
    std::size_t masked_count() const;
};

using Dataset = std::vector<Sequence>;

std::size_t masked_count(const Dataset& data, std::span<const std::size_t> items);

/// Build the shifted sequence from a full token string whose answer starts at `target_start`.
Sequence make_sequence(std::span<const Token> tokens, std::size_t target_start);

/// Σ over masked positions of −log(p[target] + 1e-12).
double masked_loss_sum(const Matrix& probs, const Sequence& seq);

/// dL/dlogits of `scale · masked_loss_sum` for softmax outputs `probs`.
Matrix masked_ce_grad(const Matrix& probs, const Sequence& seq, double scale);

}  // namespace afl::lm
