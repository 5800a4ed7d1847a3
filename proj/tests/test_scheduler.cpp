#include <gtest/gtest.h>

#include <random>

#include "dlmdecode/scheduler.hpp"
#include "oracles.hpp"
#include "props.hpp"

using namespace dlm;

namespace {

const Vocab kVocab(8, TokenId{7});

ProbRow peaked(double p1) {
    // p1 on token 0, the rest spread evenly over the other 7
    std::vector<double> p(8, (1.0 - p1) / 7.0);
    p[0] = p1;
    return ProbRow::from_probs(p);
}

OracleDenoiser make_oracle(std::size_t len, std::uint32_t stabilize, double post = 1000.0) {
    std::vector<TokenId> targets;
    for (std::size_t k = 0; k < len; ++k) targets.push_back(TokenId{static_cast<std::uint32_t>(k % 5)});
    return OracleDenoiser(OracleSpec{kVocab, targets, std::vector<std::uint32_t>(len, stabilize), 1.0, post, 11});
}

// One-hot logits: every masked position is certain of token 1 from the start.
struct OneHot {
    std::uint32_t vocab_size() const { return 4; }
    DenoiserResponse denoise(const DenoiserRequest& req) const {
        DenoiserResponse out;
        for (auto pos : req.state.masked_set()) out.rows.emplace(pos, LogitRow({-100.0, 100.0, -100.0, -100.0}));
        return out;
    }
};

// Same distribution at every position and step.
struct Constant {
    std::uint32_t vocab_size() const { return 3; }
    DenoiserResponse denoise(const DenoiserRequest& req) const {
        DenoiserResponse out;
        for (auto pos : req.state.masked_set()) out.rows.emplace(pos, LogitRow({0.1, 0.5, 0.2}));
        return out;
    }
};

struct Throws {
    std::uint32_t vocab_size() const { return 3; }
    DenoiserResponse denoise(const DenoiserRequest&) const { throw std::runtime_error("backend down"); }
};

struct DropsOne {
    std::uint32_t vocab_size() const { return 3; }
    DenoiserResponse denoise(const DenoiserRequest& req) const {
        DenoiserResponse out;
        for (auto pos : req.state.masked_set()) out.rows.emplace(pos, LogitRow({0.0, 1.0, 0.0}));
        out.rows.erase(out.rows.begin());
        return out;
    }
};

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST(StepQuota, Examples) {
    EXPECT_EQ(step_quota(256, 256), 1u);
    EXPECT_EQ(step_quota(10, 3), 4u);
    EXPECT_EQ(step_quota(0, 5), 0u);
    EXPECT_EQ(step_quota(5, 1), 5u);
    EXPECT_THROW(step_quota(3, 0), Error);
}

TEST(TransferSelect, PicksHighestP1WithLowerPositionOnTies) {
    const std::vector<PositionRow> rows = {{4, peaked(0.5)}, {2, peaked(0.9)}, {7, peaked(0.5)}, {9, peaked(0.7)}};
    const auto sel = transfer_select(rows, 3);
    ASSERT_EQ(sel.size(), 3u);
    EXPECT_EQ(sel[0].first, 2u);
    EXPECT_EQ(sel[1].first, 9u);
    EXPECT_EQ(sel[2].first, 4u);
    EXPECT_EQ(transfer_select(rows, 10).size(), 4u);
    EXPECT_TRUE(transfer_select(rows, 0).empty());
}

TEST(TransferSelect, MatchesStableFullSort) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<PositionRow> rows;
        const std::size_t n = 1 + rng() % 20;
        for (std::size_t k = 0; k < n; ++k)
            rows.push_back({k * 3 + rng() % 3, peaked(0.2 + 0.1 * static_cast<double>(rng() % 8))});
        std::shuffle(rows.begin(), rows.end(), rng);
        const std::size_t quota = rng() % (n + 2);
        std::vector<std::pair<std::size_t, double>> flat;
        for (const auto& r : rows) flat.emplace_back(r.position, r.row.p1());
        const auto want = oracle::transfer(flat, quota);
        const auto got = transfer_select(rows, quota);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k].first, want[k]);
    }
}

TEST(BlockView, Examples) {
    const ScheduleConfig sched{64, 64, 32};
    DecodeState s({}, 64);
    EXPECT_EQ(block_view(s, sched), (BlockBounds{0, 32}));
    for (std::size_t i = 0; i < 32; ++i) s.finalize(i, TokenId{0}, 1);
    EXPECT_EQ(block_view(s, sched), (BlockBounds{32, 64}));
    for (std::size_t i = 32; i < 64; ++i) s.finalize(i, TokenId{0}, 2);
    EXPECT_FALSE(block_view(s, sched).has_value());

    const std::vector<TokenId> prompt(3, TokenId{1});
    const DecodeState t(prompt, 5);
    EXPECT_EQ(block_view(t, ScheduleConfig{5, 5, 5}), (BlockBounds{3, 8}));
    EXPECT_EQ(block_view(t, ScheduleConfig{5, 5, std::nullopt}), (BlockBounds{3, 8}));
    EXPECT_EQ(block_view(t, ScheduleConfig{5, 5, 2}), (BlockBounds{3, 5}));
}

TEST(ScheduleConfig, Validation) {
    EXPECT_THROW((ScheduleConfig{0, 4, std::nullopt}.validate()), Error);
    EXPECT_THROW((ScheduleConfig{4, 0, std::nullopt}.validate()), Error);
    EXPECT_THROW((ScheduleConfig{4, 4, 0}.validate()), Error);
    EXPECT_THROW((ScheduleConfig{3, 64, 16}.validate()), Error);
    EXPECT_NO_THROW((ScheduleConfig{4, 64, 16}.validate()));
    EXPECT_EQ((ScheduleConfig{4, 65, 16}.block_count()), 5u);
}

TEST(Decode, OneHotJotFinishesInOneStep) {
    PolicyConfig pol;
    pol.tau_max = 2.0;
    pol.tau_min = 1.0;
    const auto r = decode(OneHot{}, DecodeState({}, 16), pol, ScheduleConfig{16, 16, std::nullopt});
    EXPECT_EQ(r.trace.actual_steps, 1u);
    EXPECT_EQ(r.trace.steps[0].early_exits, 16u);
    EXPECT_EQ(r.trace.steps[0].transfers, 0u);
    for (auto t : r.trace.final_tokens) EXPECT_EQ(t, TokenId{1});
}

TEST(Decode, NoneWithTEqualLTakesLSteps) {
    const auto r = decode(make_oracle(24, 1), DecodeState({}, 24), PolicyConfig::none(), ScheduleConfig{24, 24, std::nullopt});
    EXPECT_EQ(r.trace.actual_steps, 24u);
    for (const auto& rec : r.trace.steps) {
        EXPECT_EQ(rec.transfers, 1u);
        EXPECT_EQ(rec.early_exits, 0u);
    }
    EXPECT_EQ(r.trace.final_tokens, make_oracle(24, 1).spec().targets);
}

TEST(Decode, CeilingQuotaSpreadsOverSteps) {
    const auto r = decode(make_oracle(10, 1), DecodeState({}, 10), PolicyConfig::none(), ScheduleConfig{3, 10, std::nullopt});
    ASSERT_EQ(r.trace.actual_steps, 3u);
    EXPECT_EQ(r.trace.steps[0].transfers, 4u);
    EXPECT_EQ(r.trace.steps[1].transfers, 3u);
    EXPECT_EQ(r.trace.steps[2].transfers, 3u);
}

TEST(Decode, OracleAllStableAtStepOne) {
    const auto r = decode(make_oracle(512, 1), DecodeState({}, 512), PolicyConfig{}, ScheduleConfig{512, 512, std::nullopt});
    EXPECT_EQ(r.trace.actual_steps, 1u);
    EXPECT_EQ(r.trace.total_exits(), 512u);
}

TEST(Decode, UnreachableThresholdMatchesNone) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        DenoiserConfig d;
        d.kind = DenoiserKind::Coupled;
        d.base_ratio = 1.0 + static_cast<double>(rng() % 80);
        d.gain = static_cast<double>(rng() % 4);
        d.prompt_len = rng() % 6;
        d.easy_fraction = 0.3;
        const ScheduleConfig sched{static_cast<std::uint32_t>(8 + rng() % 24), 24, std::nullopt};
        const CoupledDenoiser den(make_coupled_spec(d, sched, trial));
        const auto prompt = make_prompt(d, trial);
        PolicyConfig jot;
        jot.tau_min = jot.tau_max = 1e12;
        const auto a = decode(den, DecodeState(prompt, 24), jot, sched);
        const auto b = decode(den, DecodeState(prompt, 24), PolicyConfig::none(), sched);
        EXPECT_TRUE(identical_transcript(a.trace, b.trace)) << trial;
        EXPECT_EQ(a.state, b.state);
    }
}

TEST(Decode, PoliciesOnlyTouchTheActiveBlock) {
    const ScheduleConfig sched{4, 8, 4};
    PolicyConfig pol;
    pol.tau_max = 2.0;
    const auto r = decode(OneHot{}, DecodeState({}, 8), pol, sched);
    ASSERT_EQ(r.trace.actual_steps, 2u);
    EXPECT_EQ(r.trace.steps[0].exited_positions, (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(r.trace.steps[1].exited_positions, (std::vector<std::size_t>{4, 5, 6, 7}));
    EXPECT_EQ(r.trace.steps[1].masked_before, 4u);
}

TEST(BlockBudget, SplitsTEvenlyWithRemainderFirst) {
    const ScheduleConfig a{8, 64, 32};
    EXPECT_EQ(block_budget(a, 0), 4u);
    EXPECT_EQ(block_budget(a, 1), 4u);
    const ScheduleConfig b{10, 12, 4};
    EXPECT_EQ(block_budget(b, 0), 4u);
    EXPECT_EQ(block_budget(b, 1), 3u);
    EXPECT_EQ(block_budget(b, 2), 3u);
}

TEST(Decode, EarlyClearedBlockHandsOverImmediately) {
    // Block 0 is certain from step 1; block 1 gets its full budget of 4 from step 2.
    const ScheduleConfig sched{8, 8, 4};
    PolicyConfig pol;
    pol.tau_max = 2.0;
    pol.spatial.reset();
    std::vector<TokenId> targets(8, TokenId{1});
    std::vector<std::uint32_t> steps = {1, 1, 1, 1, 100, 100, 100, 100};
    const OracleDenoiser d(OracleSpec{kVocab, targets, steps, 1.0, 1000.0, 3});
    const auto r = decode(d, DecodeState({}, 8), pol, sched);
    ASSERT_EQ(r.trace.actual_steps, 5u);
    EXPECT_EQ(r.trace.steps[0].early_exits, 4u);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_EQ(r.trace.steps[k].transfers, 1u);
}

TEST(Decode, BlockModeClearsEachBlockWithinItsShare) {
    const auto r = decode(make_oracle(64, 1000), DecodeState({}, 64), PolicyConfig::none(), ScheduleConfig{8, 64, 32});
    EXPECT_EQ(r.trace.actual_steps, 8u);
    for (std::size_t k = 0; k < 4; ++k)
        for (auto pos : r.trace.steps[k].transferred_positions) EXPECT_LT(pos, 32u);
    for (std::size_t k = 4; k < 8; ++k)
        for (auto pos : r.trace.steps[k].transferred_positions) EXPECT_GE(pos, 32u);
}

TEST(Decode, ProphetCommitsEverythingOnceGapClears) {
    PolicyConfig pol;
    pol.kind = PolicyKind::Prophet;
    const auto r = decode(make_oracle(12, 3), DecodeState({}, 12), pol, ScheduleConfig{12, 12, std::nullopt});
    EXPECT_EQ(r.trace.actual_steps, 3u);
    EXPECT_TRUE(r.trace.steps[2].commit_all);
    EXPECT_EQ(r.trace.steps[2].early_exits, 10u);
}

TEST(Decode, KlWithConstantDenoiserFinalizesAtWindow) {
    for (std::size_t window : {1u, 2u, 3u}) {
        PolicyConfig pol;
        pol.kind = PolicyKind::KlStability;
        pol.kl_window = window;
        const auto r = decode(Constant{}, DecodeState({}, 40), pol, ScheduleConfig{40, 40, std::nullopt});
        EXPECT_EQ(r.trace.actual_steps, window) << window;
        EXPECT_EQ(r.trace.steps.back().early_exits, 40u - (window - 1));
    }
}

TEST(Decode, ZeroQuotaRuleExhaustsSchedule) {
    auto zero = [](const ScheduleConfig&, const QuotaContext&) { return std::size_t{0}; };
    EXPECT_EQ(code_of([&] {
                  decode(make_oracle(6, 100), DecodeState({}, 6), PolicyConfig::none(), ScheduleConfig{6, 6, std::nullopt},
                         zero);
              }),
              ErrorCode::ScheduleExhausted);
}

TEST(Decode, BackendFailuresAreReported) {
    const ScheduleConfig sched{4, 4, std::nullopt};
    EXPECT_EQ(code_of([&] { decode(Throws{}, DecodeState({}, 4), PolicyConfig::none(), sched); }),
              ErrorCode::DenoiserFailure);
    EXPECT_EQ(code_of([&] { decode(DropsOne{}, DecodeState({}, 4), PolicyConfig::none(), sched); }),
              ErrorCode::DenoiserFailure);
    EXPECT_EQ(code_of([&] { decode(OneHot{}, DecodeState({}, 5), PolicyConfig::none(), sched); }),
              ErrorCode::InvalidArgument);
}

TEST(Decode, Deterministic) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const auto c = props::random_case(rng);
        const auto a = props::run_case(c);
        const auto b = props::run_case(c);
        EXPECT_TRUE(identical_transcript(a.trace, b.trace));
        EXPECT_EQ(a.state, b.state);
    }
}

TEST(Decode, RandomizedInvariants) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto c = props::random_case(rng);
        const auto r = props::run_case(c);
        ASSERT_EQ(props::check_invariants(r, c.cfg.schedule), "") << "trial " << trial;
    }
}
