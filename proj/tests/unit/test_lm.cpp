#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "support.hpp"
#include "afl/error.hpp"
#include "afl/lm/batch.hpp"
#include "afl/lm/binary_io.hpp"
#include "afl/lm/forward.hpp"
#include "afl/numerics/gradcheck.hpp"

using namespace afl;
using num::Matrix;

namespace {

std::vector<lm::Token> random_tokens(std::size_t n, std::size_t vocab, num::Rng& rng)
{
    std::vector<lm::Token> t(n);
    for (auto& x : t) x = static_cast<lm::Token>(rng.below(vocab));
    return t;
}

// Random biases and layer-norm-sensitive embeddings so the oracle exercises every term.
lm::BaseLM perturbed_base(std::uint64_t seed)
{
    auto base = test::small_base(seed);
    num::Rng rng(seed + 100);
    for (auto& p : base.mutable_params()) p += rng.normal(0.0, 0.05);
    base.refresh();
    return base;
}

}  // namespace

TEST_CASE("build validates dimensions and is deterministic")
{
    lm::BaseConfig bad;
    bad.layers = 0;
    num::Rng rng(0);
    CHECK_THROWS_AS(lm::BaseLM::build(bad, rng), Error);

    num::Rng r1(0), r2(0);
    const auto a = lm::BaseLM::build({}, r1);
    const auto b = lm::BaseLM::build({}, r2);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(lm::fingerprint_hex(a.fingerprint()) == "37dec3ff8425f409");
    CHECK(a.site_count() == 4);
    CHECK(lm::parse_fingerprint_hex(lm::fingerprint_hex(a.fingerprint())) == a.fingerprint());
}

TEST_CASE("forward matches the dense oracle")
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto base = perturbed_base(seed);
        num::Rng rng(seed);
        const auto adapter = test::random_adapter(base, rng);
        for (std::size_t len : {1u, 4u, 10u}) {
            const auto tokens = random_tokens(len, base.config().vocab, rng);
            const auto plain = lm::run_forward(base, tokens).probs;
            CHECK(test::max_abs_diff(plain, oracle::dense_forward(base, tokens)) <= 1e-10);
            lm::Sequence seq;
            seq.inputs = tokens;
            seq.targets = tokens;
            seq.mask.assign(len, 1);
            const auto adapted = experts::forward(base, &adapter, seq).probs;
            CHECK(test::max_abs_diff(adapted, oracle::dense_forward(base, tokens, &adapter)) <= 1e-10);
        }
    }
    // Reference dimensions, single token.
    num::Rng rng(0);
    const auto ref = lm::BaseLM::build({}, rng);
    const std::vector<lm::Token> one{5};
    CHECK(test::max_abs_diff(lm::run_forward(ref, one).probs, oracle::dense_forward(ref, one)) <= 1e-10);
}

TEST_CASE("zero updates leave the base unchanged")
{
    const auto base = perturbed_base(4);
    num::Rng rng(4);
    auto adapter = experts::LoraAdapter::for_training(base, 4, 16.0, rng);
    const auto seq = test::random_sequence(7, base.config().vocab, rng);
    // B = 0 at init
    CHECK(test::max_abs_diff(experts::forward(base, &adapter, seq).probs, experts::forward(base, nullptr, seq).probs) <= 1e-12);
    auto a0 = test::random_adapter(base, rng);
    for (auto& a : a0.a) a.fill(0.0);
    CHECK(test::max_abs_diff(experts::forward(base, &a0, seq).probs, lm::run_forward(base, seq.inputs).probs) <= 1e-12);
}

TEST_CASE("doubling alpha while halving B is invariant")
{
    const auto base = perturbed_base(5);
    num::Rng rng(5);
    const auto ad = test::random_adapter(base, rng);
    auto twin = ad;
    twin.alpha *= 2.0;
    for (auto& b : twin.b) b *= 0.5;
    const auto seq = test::random_sequence(8, base.config().vocab, rng);
    CHECK(test::max_abs_diff(experts::forward(base, &ad, seq).probs, experts::forward(base, &twin, seq).probs) <= 1e-12);
}

TEST_CASE("adapter fingerprint mismatch is rejected")
{
    const auto base = perturbed_base(6);
    num::Rng rng(6);
    auto ad = test::random_adapter(base, rng);
    ad.fingerprint ^= 1;
    const auto seq = test::random_sequence(5, base.config().vocab, rng);
    try {
        experts::forward(base, &ad, seq);
        FAIL("expected mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::mismatch);
        CHECK(std::string(e.what()).find("adapter/base mismatch") != std::string::npos);
    }
}

TEST_CASE("base gradient matches finite differences")
{
    auto base = perturbed_base(7);
    num::Rng rng(7);
    const auto data = test::random_dataset(3, base.config().vocab, rng);
    const std::vector<std::size_t> items{0, 1, 2};
    std::vector<double> grad(base.params().size(), 0.0);
    lm::batch_cross_entropy(base, data, items, nullptr, true, grad);

    const std::vector<double> start(base.params().begin(), base.params().end());
    // Every tensor, a handful of coordinates each.
    for (const auto& slot : base.tensors()) {
        for (int pick = 0; pick < 4; ++pick) {
            const std::size_t idx = slot.offset + rng.below(slot.rows * slot.cols);
            auto f = [&](std::span<const double> x) {
                auto p = base.mutable_params();
                std::copy(start.begin(), start.end(), p.begin());
                p[idx] = x[0];
                base.refresh();
                return lm::batch_cross_entropy(base, data, items, nullptr, false);
            };
            const auto fd = num::finite_diff_grad(f, std::vector<double>{start[idx]});
            CHECK_MESSAGE(std::abs(fd[0] - grad[idx]) <= 1e-6 * std::max(1.0, std::abs(grad[idx])), slot.name);
        }
    }
}

TEST_CASE("adapter gradient matches finite differences")
{
    const auto base = perturbed_base(8);
    num::Rng rng(8);
    const auto adapter = test::random_adapter(base, rng);
    const auto data = test::random_dataset(3, base.config().vocab, rng);
    const std::vector<std::size_t> items{0, 1, 2};
    auto grads = experts::LoraAdapter::zeros(base, adapter.rank, adapter.alpha);
    experts::LoraHook hook(adapter, &grads);
    lm::batch_cross_entropy(base, data, items, &hook, true);
    const auto flat = experts::flatten(adapter);
    const auto fd = num::finite_diff_grad(
        [&](std::span<const double> x) {
            const auto ad = experts::unflatten({x.begin(), x.end()}, adapter);
            experts::LoraHook h(ad);
            return lm::batch_cross_entropy(base, data, items, &h, false);
        },
        flat);
    CHECK(num::relative_error(fd, experts::flatten(grads)) <= 1e-6);
}

TEST_CASE("sequence construction and masked loss")
{
    const std::vector<lm::Token> tokens{3, 4, 0, 4, 3};
    const auto seq = lm::make_sequence(tokens, 3);
    CHECK(seq.inputs == std::vector<lm::Token>{3, 4, 0, 4});
    CHECK(seq.targets == std::vector<lm::Token>{4, 0, 4, 3});
    CHECK(seq.mask == std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(seq.masked_count() == 2);
    CHECK_THROWS_AS(lm::make_sequence(std::vector<lm::Token>{1}, 1), Error);

    Matrix probs(4, 5, 0.2);
    CHECK(lm::masked_loss_sum(probs, seq) == doctest::Approx(2 * std::log(5.0)).epsilon(1e-10));
}

TEST_CASE("base save and load round trip")
{
    const auto dir = test::temp_dir("lm-io");
    const auto base = perturbed_base(9);
    base.save(dir / "base.afl");
    const auto back = lm::BaseLM::load(dir / "base.afl");
    CHECK(back.fingerprint() == base.fingerprint());
    CHECK(std::equal(back.params().begin(), back.params().end(), base.params().begin()));

    // truncated file
    const auto size = std::filesystem::file_size(dir / "base.afl");
    std::filesystem::copy_file(dir / "base.afl", dir / "cut.afl");
    std::filesystem::resize_file(dir / "cut.afl", size / 2);
    try {
        lm::BaseLM::load(dir / "cut.afl");
        FAIL("expected truncation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::truncated);
    }

    // unknown version
    std::filesystem::copy_file(dir / "base.afl", dir / "ver.afl");
    {
        std::fstream f(dir / "ver.afl", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v = 9;
        f.write(&v, 1);
    }
    try {
        lm::BaseLM::load(dir / "ver.afl");
        FAIL("expected version error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::bad_version);
    }

    try {
        lm::BaseLM::load(dir / "missing.afl");
        FAIL("expected missing file error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::missing_file);
    }
}

TEST_CASE("blob doubles round trip bit-exactly")
{
    for (double v : {0.0, -0.0, 1.0 / 3.0, 1e-300, -7.25e200}) {
        CHECK(lm::double_bits(lm::bits_double(lm::double_bits(v))) == lm::double_bits(v));
    }
}
