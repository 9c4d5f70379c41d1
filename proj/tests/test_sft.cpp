#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "finrl/error.hpp"
#include "finrl/sft.hpp"
#include "oracles.hpp"

using namespace finrl;
using namespace finrl::testing;

namespace {

const std::vector<SftRecord> kRecords = {
    {"q1", "a", "b"},
    {"q2", "ab", "\\boxed{1}"},
    {"q12", "ba", "2"},
};

Vocab small_vocab() {
    std::vector<std::string> corpus;
    for (const auto& r : kRecords) {
        corpus.push_back(r.query);
        corpus.push_back(r.output());
    }
    return build_vocab(corpus);
}

}  // namespace

TEST_CASE("record assembly and validation") {
    CHECK(kRecords[0].output() == "<think>a</think><answer>b</answer>");
    CHECK_NOTHROW(validate_record(kRecords[1], "r1"));
    CHECK_THROWS_AS(validate_record({"", "a", "b"}, "r"), InvalidArgument);
    CHECK_THROWS_AS(validate_record({"q", "", "b"}, "r"), InvalidArgument);
    CHECK_THROWS_AS(validate_record({"q", "a", ""}, "r"), InvalidArgument);
    CHECK_THROWS_AS(validate_record({"q", "a</think>", "b"}, "r"), InvalidArgument);
    try {
        validate_record({"q", "a", "<answer>"}, "record-77");
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("record-77") != std::string::npos);
    }
}

TEST_CASE("sft jsonl round trip") {
    const auto path = std::filesystem::temp_directory_path() / "finrl_sft_roundtrip.jsonl";
    write_sft_jsonl(path, kRecords);
    const auto back = read_sft_jsonl(path);
    REQUIRE(back.size() == kRecords.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].query == kRecords[i].query);
        CHECK(back[i].think == kRecords[i].think);
        CHECK(back[i].answer == kRecords[i].answer);
    }
    std::filesystem::remove(path);
}

TEST_CASE("uniform model loss is n log V") {
    const Vocab vocab = small_vocab();
    PolicyParams zero(tiny_arch(vocab.size()));
    const auto enc = encode_example(vocab, kRecords[0]);
    CHECK(enc.output.back() == Vocab::kEos);
    const auto lg = sft_loss_and_grad(zero, vocab, std::span(kRecords).first(1));
    const double n = static_cast<double>(enc.output.size());
    CHECK(lg.loss == doctest::Approx(n * std::log(vocab.size())).epsilon(1e-12));
    const std::vector<EncodedExample> one = {enc};
    CHECK(mean_token_cross_entropy(zero, one) == doctest::Approx(std::log(vocab.size())).epsilon(1e-12));
}

TEST_CASE("sft gradient matches central finite differences") {
    const Vocab vocab = small_vocab();
    const ArchConfig arch = tiny_arch(vocab.size());
    REQUIRE(param_count(arch) <= 5000);
    for (std::uint64_t seed : {1, 2}) {
        const PolicyParams p = random_params(arch, seed, 0.3);
        const auto lg = sft_loss_and_grad(p, vocab, kRecords);
        const auto fd = finite_difference_gradient(
            p, [&](const PolicyParams& q) { return sft_loss_and_grad(q, vocab, kRecords).loss; });
        CHECK(relative_error(lg.grad.values(), fd) < 1e-4);
    }
}

TEST_CASE("loss is additive over batches") {
    const Vocab vocab = small_vocab();
    const PolicyParams p = random_params(tiny_arch(vocab.size()), 4, 0.3);
    const auto all = sft_loss_and_grad(p, vocab, kRecords);
    const auto a = sft_loss_and_grad(p, vocab, std::span(kRecords).first(1));
    const auto b = sft_loss_and_grad(p, vocab, std::span(kRecords).subspan(1));
    CHECK(all.loss == doctest::Approx(a.loss + b.loss).epsilon(1e-12));
    const std::vector<SftRecord> twice = {kRecords[2], kRecords[2]};
    const auto single = sft_loss_and_grad(p, vocab, std::span(kRecords).subspan(2));
    CHECK(sft_loss_and_grad(p, vocab, twice).loss == doctest::Approx(2.0 * single.loss).epsilon(1e-12));
    CHECK_THROWS_AS(sft_loss_and_grad(p, vocab, std::span<const SftRecord>{}), InvalidArgument);
}

TEST_CASE("adam: zero gradient, first step, determinism, NaN") {
    const ArchConfig arch = tiny_arch(8);
    const PolicyParams p = random_params(arch, 9);
    AdamConfig cfg;
    cfg.lr = 0.01;
    const auto fresh = OptimizerState::fresh(p, cfg);

    Gradient zero(arch);
    const auto z = adam_step(fresh, p, zero);
    CHECK(z.params == p);
    CHECK(z.state.step == 1);

    // |g| in [10, 100] so eps is below 1e-9 relative
    Gradient g(arch);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> mag(10.0, 100.0);
    for (double& v : g.values()) v = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
    const auto r = adam_step(fresh, p, g);
    for (std::size_t i = 0; i < p.count(); ++i) {
        const double step = r.params.values()[i] - p.values()[i];
        const double expected = -cfg.lr * (g.values()[i] > 0 ? 1.0 : -1.0);
        REQUIRE(std::abs(step / expected - 1.0) < 1e-9);
    }
    const auto r2 = adam_step(fresh, p, g);
    CHECK(r2.params == r.params);
    CHECK(r2.state.m == r.state.m);
    CHECK(r2.state.v == r.state.v);

    Gradient bad = g;
    bad.values()[3] = std::nan("");
    CHECK_THROWS_AS(adam_step(fresh, p, bad), InvalidArgument);
    PolicyParams inplace = p;
    auto state = fresh;
    CHECK_THROWS(adam_step_inplace(state, inplace, bad));
    CHECK(inplace == p);
    CHECK(state.step == 0);

    Gradient wrong(tiny_arch(9));
    CHECK_THROWS_AS(adam_step(fresh, p, wrong), InvalidArgument);
}

TEST_CASE("train_sft: deterministic, curve length, single-record overfit") {
    const Vocab vocab = small_vocab();
    const ArchConfig arch = tiny_arch(vocab.size());
    SftConfig cfg;
    cfg.steps = 500;
    cfg.batch_size = 1;
    cfg.adam.lr = 1e-2;
    const std::vector<SftRecord> one = {kRecords[1]};
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto res = train_sft(init_params(arch, seed), vocab, one, cfg, seed);
        REQUIRE(res.loss_curve.size() == 500);
        const double final_loss = sft_loss_and_grad(res.params, vocab, one).loss;
        CHECK(final_loss < 0.1 * res.loss_curve.front());
    }
    SftConfig short_cfg = cfg;
    short_cfg.steps = 25;
    short_cfg.batch_size = 2;
    const auto a = train_sft(init_params(arch, 5), vocab, kRecords, short_cfg, 5);
    const auto b = train_sft(init_params(arch, 5), vocab, kRecords, short_cfg, 5);
    CHECK(a.params == b.params);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.loss_curve.size() == 25);
    CHECK_THROWS_AS(train_sft(init_params(arch, 5), vocab, {}, short_cfg, 5), InvalidArgument);
}
