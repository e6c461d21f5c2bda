#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afl/analysis/eval.hpp"
#include "afl/lm/batch.hpp"

namespace afl::harness {

using lm::Dataset;
using lm::Token;

// Token layout: 0 separator, 1 mask symbol, 2..27 the letters a..z.
inline constexpr Token kSep = 0;
inline constexpr Token kMaskSym = 1;
inline constexpr Token kFirstLetter = 2;
inline constexpr std::size_t kLetters = 26;

enum class Family { copy, reverse, caesar, vowel_mask, duplicate, sort, modular_add };

std::string to_string(Family f);
Family parse_family(const std::string& name);

struct TaskSpec {
    std::string name;
    Family family = Family::copy;
    int param = 0;                  // shift for caesar, offset for modular-add
    std::size_t window_start = 0;   // first letter the inputs draw from
    std::size_t window_size = 8;
    std::size_t min_len = 4;
    std::size_t max_len = 10;
    std::size_t train = 2000;
    std::size_t val = 200;
    std::size_t test = 200;

    void validate() const;
};

/// Letter index (0 = a) sequence → answer letters; vowel-mask emits kMaskSym for vowels.
std::vector<Token> task_answer(const TaskSpec& spec, std::span<const Token> input);

/// "abc" → letter tokens and back, for tests and logs.
std::vector<Token> letters(const std::string& s);
std::string render(std::span<const Token> tokens);

/// input tokens, separator, answer; the loss mask covers the answer only.
lm::Sequence make_example(const TaskSpec& spec, std::span<const Token> input);

struct TaskData {
    TaskSpec spec;
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Deterministic in (spec, seed); the three splits never share an input.
TaskData generate_task(const TaskSpec& spec, std::uint64_t seed);
std::vector<TaskData> generate_tasks(std::span<const TaskSpec> specs, std::uint64_t seed);

/// The reference eight-task suite.
std::vector<TaskSpec> reference_suite();

enum class Split { train, val, test };

/// Named per-task views of one split, optionally truncated to the first `per_task` examples.
std::vector<analysis::TaskSplit> task_splits(std::span<const TaskData> tasks, Split split, std::size_t per_task = 0);

/// Uniform mixture of the first `per_task` examples of every task (0 = all), task order interleaved.
Dataset mixture(std::span<const TaskData> tasks, Split split, std::size_t per_task = 0);

/// Writes one JSON-lines file per task and split under `dir`.
void save_tasks(std::span<const TaskData> tasks, const std::string& dir);

}  // namespace afl::harness
