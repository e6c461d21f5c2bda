#include "afl/harness/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "afl/error.hpp"
#include "afl/numerics/rng.hpp"

namespace afl::harness {

std::string to_string(Family f)
{
    switch (f) {
    case Family::copy: return "copy";
    case Family::reverse: return "reverse";
    case Family::caesar: return "caesar";
    case Family::vowel_mask: return "vowel-mask";
    case Family::duplicate: return "duplicate";
    case Family::sort: return "sort";
    case Family::modular_add: return "modular-add";
    }
    return "?";
}

Family parse_family(const std::string& name)
{
    for (Family f : {Family::copy, Family::reverse, Family::caesar, Family::vowel_mask, Family::duplicate, Family::sort,
                     Family::modular_add}) {
        if (to_string(f) == name) {
            return f;
        }
    }
    fail(ErrorKind::invalid_argument, "unknown task family '" + name + "'");
}

void TaskSpec::validate() const
{
    require(!name.empty(), ErrorKind::invalid_argument, "task needs a name");
    require(window_size >= 2 && window_start + window_size <= kLetters, ErrorKind::invalid_argument,
            "task '" + name + "': letter window must lie inside a..z");
    require(min_len >= 1 && min_len <= max_len, ErrorKind::invalid_argument, "task '" + name + "': bad length range");
    require(train >= 1 && val >= 1 && test >= 1, ErrorKind::invalid_argument, "task '" + name + "': empty split");
    if (family == Family::vowel_mask) {
        bool vowel = false;
        for (std::size_t c : {0, 4, 8, 14, 20}) {
            vowel = vowel || (c >= window_start && c < window_start + window_size);
        }
        require(vowel, ErrorKind::invalid_argument, "task '" + name + "': vowel-mask window contains no vowel");
    }
}

std::vector<Token> task_answer(const TaskSpec& spec, std::span<const Token> input)
{
    auto letter = [](Token t) {
        require(t >= kFirstLetter && t < kFirstLetter + kLetters, ErrorKind::invalid_argument, "task input must be letters");
        return static_cast<int>(t - kFirstLetter);
    };
    auto tok = [](int c) { return static_cast<Token>(kFirstLetter + ((c % 26) + 26) % 26); };
    std::vector<Token> out;
    switch (spec.family) {
    case Family::copy:
        out.assign(input.begin(), input.end());
        break;
    case Family::reverse:
        out.assign(input.rbegin(), input.rend());
        break;
    case Family::caesar:
        for (Token t : input) {
            out.push_back(tok(letter(t) + spec.param));
        }
        break;
    case Family::vowel_mask:
        for (Token t : input) {
            const int c = letter(t);
            const bool vowel = c == 0 || c == 4 || c == 8 || c == 14 || c == 20;
            out.push_back(vowel ? kMaskSym : t);
        }
        break;
    case Family::duplicate:
        for (Token t : input) {
            out.push_back(t);
            out.push_back(t);
        }
        break;
    case Family::sort:
        out.assign(input.begin(), input.end());
        std::sort(out.begin(), out.end());
        break;
    case Family::modular_add:
        for (std::size_t i = 0; i < input.size(); ++i) {
            const int prev = i == 0 ? 0 : letter(input[i - 1]);
            out.push_back(tok(letter(input[i]) + prev + spec.param));
        }
        break;
    }
    return out;
}

std::vector<Token> letters(const std::string& s)
{
    std::vector<Token> out;
    for (char ch : s) {
        require(ch >= 'a' && ch <= 'z', ErrorKind::invalid_argument, "letters() takes a..z only");
        out.push_back(static_cast<Token>(kFirstLetter + (ch - 'a')));
    }
    return out;
}

std::string render(std::span<const Token> tokens)
{
    std::string out;
    for (Token t : tokens) {
        if (t == kSep) {
            out += '|';
        } else if (t == kMaskSym) {
            out += '*';
        } else if (t >= kFirstLetter && t < kFirstLetter + kLetters) {
            out += static_cast<char>('a' + (t - kFirstLetter));
        } else {
            out += '?';
        }
    }
    return out;
}

lm::Sequence make_example(const TaskSpec& spec, std::span<const Token> input)
{
    std::vector<Token> full(input.begin(), input.end());
    full.push_back(kSep);
    const std::size_t start = full.size();
    const auto answer = task_answer(spec, input);
    full.insert(full.end(), answer.begin(), answer.end());
    return lm::make_sequence(full, start);
}

TaskData generate_task(const TaskSpec& spec, std::uint64_t seed)
{
    spec.validate();
    const std::size_t total = spec.train + spec.val + spec.test;
    // Count distinct inputs available; refuse impossible requests up front.
    double available = 0.0;
    for (std::size_t len = spec.min_len; len <= spec.max_len; ++len) {
        available += std::pow(static_cast<double>(spec.window_size), static_cast<double>(len));
    }
    require(available >= 2.0 * static_cast<double>(total), ErrorKind::invalid_argument,
            "task '" + spec.name + "': too few distinct inputs for the requested split sizes");

    num::Rng rng = num::Rng::derive(seed, "task:" + spec.name);
    std::set<std::vector<Token>> seen;
    std::vector<std::vector<Token>> inputs;
    while (inputs.size() < total) {
        const auto len = spec.min_len + static_cast<std::size_t>(rng.below(spec.max_len - spec.min_len + 1));
        std::vector<Token> x(len);
        for (auto& t : x) {
            t = static_cast<Token>(kFirstLetter + spec.window_start + rng.below(spec.window_size));
        }
        if (seen.insert(x).second) {
            inputs.push_back(std::move(x));
        }
    }
    TaskData data;
    data.spec = spec;
    for (std::size_t i = 0; i < total; ++i) {
        auto seq = make_example(spec, inputs[i]);
        if (i < spec.train) {
            data.train.push_back(std::move(seq));
        } else if (i < spec.train + spec.val) {
            data.val.push_back(std::move(seq));
        } else {
            data.test.push_back(std::move(seq));
        }
    }
    require(seen.size() == total, ErrorKind::numerical, "internal error: task splits overlap");
    return data;
}

std::vector<TaskData> generate_tasks(std::span<const TaskSpec> specs, std::uint64_t seed)
{
    std::set<std::string> names;
    std::vector<TaskData> out;
    for (const auto& s : specs) {
        require(names.insert(s.name).second, ErrorKind::invalid_argument, "duplicate task name '" + s.name + "'");
        out.push_back(generate_task(s, seed));
    }
    return out;
}

std::vector<TaskSpec> reference_suite()
{
    // Three-letter windows, pairwise disjoint; vowel-mask sits on m..o.
    auto make = [](std::string name, Family f, int param, std::size_t start) {
        TaskSpec s;
        s.name = std::move(name);
        s.family = f;
        s.param = param;
        s.window_start = start;
        s.window_size = 3;
        return s;
    };
    return {
        make("copy", Family::copy, 0, 0),
        make("reverse", Family::reverse, 0, 3),
        make("caesar1", Family::caesar, 1, 6),
        make("caesar5", Family::caesar, 5, 9),
        make("duplicate", Family::duplicate, 0, 15),
        make("vowel-mask", Family::vowel_mask, 0, 12),
        make("sort", Family::sort, 0, 18),
        make("modadd3", Family::modular_add, 3, 21),
    };
}

std::vector<analysis::TaskSplit> task_splits(std::span<const TaskData> tasks, Split split, std::size_t per_task)
{
    std::vector<analysis::TaskSplit> out;
    for (const auto& t : tasks) {
        const Dataset& src = split == Split::train ? t.train : (split == Split::val ? t.val : t.test);
        const std::size_t n = per_task == 0 ? src.size() : std::min(per_task, src.size());
        out.push_back({t.spec.name, Dataset(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n))});
    }
    return out;
}

Dataset mixture(std::span<const TaskData> tasks, Split split, std::size_t per_task)
{
    const auto parts = task_splits(tasks, split, per_task);
    std::size_t longest = 0;
    for (const auto& p : parts) {
        longest = std::max(longest, p.examples.size());
    }
    Dataset out;
    for (std::size_t i = 0; i < longest; ++i) {
        for (const auto& p : parts) {
            if (i < p.examples.size()) {
                out.push_back(p.examples[i]);
            }
        }
    }
    return out;
}

void save_tasks(std::span<const TaskData> tasks, const std::string& dir)
{
    std::filesystem::create_directories(dir);
    for (const auto& t : tasks) {
        for (auto [split, name] : {std::pair{&t.train, "train"}, std::pair{&t.val, "val"}, std::pair{&t.test, "test"}}) {
            const auto path = std::filesystem::path(dir) / (t.spec.name + "." + name + ".jsonl");
            std::ofstream out(path);
            require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
            for (const auto& seq : *split) {
                nlohmann::json j = {{"inputs", seq.inputs}, {"targets", seq.targets}, {"mask", seq.mask},
                                    {"text", render(seq.inputs) + render(std::span(seq.targets).last(1))}};
                out << j.dump() << '\n';
            }
        }
    }
}

}  // namespace afl::harness
