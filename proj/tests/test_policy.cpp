#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dlmdecode/policy.hpp"

using namespace dlm;

namespace {

/// A row whose top-2 ratio p1/p2 is exactly `ratio` (two-hot over K = 3).
ProbRow ratio_row(double ratio, std::uint32_t winner = 0) {
    std::vector<double> p(3, 0.0);
    p[winner] = ratio / (ratio + 1.0);
    p[(winner + 1) % 3] = 1.0 / (ratio + 1.0);
    return ProbRow::from_probs(p);
}

PolicyConfig jot(double tmax, double tmin) {
    PolicyConfig c;
    c.tau_max = tmax;
    c.tau_min = tmin;
    return c;
}

} // namespace

TEST(AdaptiveThreshold, Endpoints) {
    const auto c = jot(90, 1);
    EXPECT_EQ(adaptive_threshold(0.0, c), 90.0);
    EXPECT_EQ(adaptive_threshold(1.0, c), 1.0);
    EXPECT_DOUBLE_EQ(adaptive_threshold(0.5, c), 45.5);
    EXPECT_THROW((void)adaptive_threshold(1.5, c), Error);
}

TEST(AdaptiveThreshold, MonotoneAndBounded) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        const double a = 1 + 200 * u(rng), b = 1 + 200 * u(rng);
        const auto c = jot(std::max(a, b), std::min(a, b));
        double x = u(rng), y = u(rng);
        if (x > y) std::swap(x, y);
        EXPECT_GE(adaptive_threshold(x, c), adaptive_threshold(y, c));
        EXPECT_LE(adaptive_threshold(x, c), c.tau_max);
        EXPECT_GE(adaptive_threshold(y, c), c.tau_min);
    }
}

TEST(JotDecide, ThresholdEndpoints) {
    const auto c = jot(90, 1);
    const std::vector<PositionRow> hot{{0, ratio_row(91.0)}};
    EXPECT_EQ(jot_decide(hot, SpatialField::zeros(0, 1), c).finalize.size(), 1u);

    const std::vector<PositionRow> warm{{0, ratio_row(89.9)}};
    EXPECT_TRUE(jot_decide(warm, SpatialField::zeros(0, 1), c).empty());
    EXPECT_EQ(jot_decide(warm, SpatialField{0, {1.0}}, c).finalize.size(), 1u);

    EXPECT_TRUE(jot_decide({}, SpatialField::zeros(0, 0), c).empty());
}

TEST(JotDecide, CommitsArgmaxAndNeverCommitAll) {
    const auto c = jot(2, 1);
    const std::vector<PositionRow> rows{{4, ratio_row(10.0, 2)}, {5, ratio_row(1.5, 1)}};
    const auto d = jot_decide(rows, SpatialField::zeros(4, 2), c);
    ASSERT_EQ(d.finalize.size(), 1u);
    EXPECT_EQ(d.finalize[0].first, 4u);
    EXPECT_EQ(d.finalize[0].second, TokenId{2});
    EXPECT_FALSE(d.commit_all);
}

TEST(JotDecide, TiesFinalize) {
    // r = p1 / (p2 + eps) lands exactly on tau when eps is tiny against an exact ratio
    auto c = jot(3.0, 1.0);
    c.eps = 1e-300;
    const std::vector<PositionRow> rows{{0, ProbRow::from_probs({0.75, 0.25})}};
    EXPECT_EQ(jot_decide(rows, SpatialField::zeros(0, 1), c).finalize.size(), 1u);
}

TEST(JotDecide, PositionsAreIndependent) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ratio(1.0, 200.0), u(0.0, 1.0);
    const auto c = jot(90, 1);
    for (int t = 0; t < 200; ++t) {
        std::vector<PositionRow> rows;
        SpatialField field{0, {}};
        for (std::size_t i = 0; i < 12; ++i) {
            rows.push_back({i, ratio_row(ratio(rng))});
            field.phi.push_back(u(rng));
        }
        const auto full = jot_decide(rows, field, c);
        for (std::size_t drop = 0; drop < rows.size(); ++drop) {
            auto fewer = rows;
            fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(drop));
            const auto part = jot_decide(fewer, field, c);
            auto expected = full.finalize;
            std::erase_if(expected, [&](const auto& e) { return e.first == drop; });
            EXPECT_EQ(part.finalize, expected);
        }
    }
}

TEST(JotDecide, UnreachableThresholdNeverExits) {
    auto c = jot(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    const std::vector<PositionRow> rows{{0, ProbRow::from_probs({1.0, 0.0})}};
    EXPECT_TRUE(jot_decide(rows, SpatialField{0, {1.0}}, c).empty());
}

TEST(ProphetDecide, Examples) {
    PolicyConfig c;
    c.kind = PolicyKind::Prophet;
    c.prophet_gap = 0.9;
    const std::vector<PositionRow> onehot{{0, ProbRow::from_probs({1.0, 0.0})},
                                          {1, ProbRow::from_probs({0.0, 1.0})}};
    auto d = prophet_decide(onehot, c);
    EXPECT_TRUE(d.commit_all);
    EXPECT_EQ(d.finalize.size(), 2u);
    EXPECT_EQ(d.finalize[1].second, TokenId{1});

    c.prophet_gap = 0.1;
    const std::vector<PositionRow> with_uniform{{0, ProbRow::from_probs({1.0, 0.0})},
                                                {1, ProbRow::from_probs({0.5, 0.5})}};
    d = prophet_decide(with_uniform, c);
    EXPECT_FALSE(d.commit_all);
    EXPECT_TRUE(d.empty());

    c.prophet_gap = 0.5;
    const std::vector<PositionRow> gaps{{0, ProbRow::from_probs({0.8, 0.2})},
                                        {1, ProbRow::from_probs({0.9, 0.1})}};
    d = prophet_decide(gaps, c);
    EXPECT_TRUE(d.commit_all);
    EXPECT_EQ(d.finalize.size(), 2u);
}

TEST(ProphetDecide, AllOrNothing) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.5, 1.0), gap(0.0, 1.0);
    PolicyConfig c;
    c.kind = PolicyKind::Prophet;
    for (int t = 0; t < 500; ++t) {
        c.prophet_gap = gap(rng);
        std::vector<PositionRow> rows;
        double min_gap = 1.0;
        for (std::size_t i = 0; i < 6; ++i) {
            const double p = u(rng);
            rows.push_back({i, ProbRow::from_probs({p, 1.0 - p})});
            min_gap = std::min(min_gap, rows.back().row.p1() - rows.back().row.p2());
        }
        const auto d = prophet_decide(rows, c);
        EXPECT_TRUE(d.finalize.empty() || d.finalize.size() == rows.size());
        EXPECT_EQ(d.commit_all, min_gap >= c.prophet_gap);
    }
}

TEST(KlDivergence, KnownValue) {
    const std::vector<double> p{0.6, 0.4}, q{0.5, 0.5};
    // mpmath: 0.020135513550688873
    EXPECT_NEAR(kl_divergence(p, q), 0.020135513550688873, 1e-15);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    const std::vector<double> z{1.0, 0.0};
    EXPECT_TRUE(std::isinf(kl_divergence(p, z)));
}

TEST(KlDecide, IdenticalRowsFinalize) {
    PolicyConfig c;
    c.kind = PolicyKind::KlStability;
    c.kl_delta = 1e-6;
    c.kl_window = 1;
    const std::vector<PositionRow> rows{{0, ProbRow::from_probs({0.7, 0.3})}};
    auto [d1, s1] = kl_decide(rows, KlState{}, c);
    EXPECT_EQ(d1.finalize.size(), 1u);
    auto [d2, s2] = kl_decide(rows, s1, c);
    EXPECT_EQ(d2.finalize.size(), 1u);
    EXPECT_EQ(s2.stable_count.at(0), 2u);
}

TEST(KlDecide, LargeShiftResetsCounter) {
    PolicyConfig c;
    c.kind = PolicyKind::KlStability;
    c.kl_delta = 1e-3;
    c.kl_window = 3;
    const std::vector<PositionRow> uni{{0, ProbRow::from_probs({0.5, 0.5})}};
    const std::vector<PositionRow> hot{{0, ProbRow::from_probs({0.999, 0.001})}};
    auto [d1, s1] = kl_decide(uni, KlState{}, c);
    auto [d2, s2] = kl_decide(uni, s1, c);
    EXPECT_EQ(s2.stable_count.at(0), 2u);
    auto [d3, s3] = kl_decide(hot, s2, c);
    EXPECT_EQ(s3.stable_count.at(0), 0u);
    EXPECT_TRUE(d3.empty());
    EXPECT_EQ(s3.prev_probs.at(0), hot[0].row);
}

TEST(KlDecide, DeltaBoundary) {
    PolicyConfig c;
    c.kind = PolicyKind::KlStability;
    c.kl_window = 2;
    const std::vector<PositionRow> prev{{0, ProbRow::from_probs({0.6, 0.4})}};
    const std::vector<PositionRow> curr{{0, ProbRow::from_probs({0.5, 0.5})}};
    c.kl_delta = 0.0202;
    auto [a1, s1] = kl_decide(prev, KlState{}, c);
    auto [a2, s2] = kl_decide(curr, s1, c);
    EXPECT_EQ(a2.finalize.size(), 1u);
    c.kl_delta = 0.0201;
    auto [b1, t1] = kl_decide(prev, KlState{}, c);
    auto [b2, t2] = kl_decide(curr, t1, c);
    EXPECT_TRUE(b2.empty());
}

TEST(PolicyConfig, Validation) {
    PolicyConfig c;
    EXPECT_NO_THROW(c.validate());
    c.tau_min = 100;
    EXPECT_THROW(c.validate(), Error);
    c = PolicyConfig{};
    c.kl_window = 0;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_EQ(parse_policy_kind("kl"), PolicyKind::KlStability);
    EXPECT_FALSE(parse_policy_kind("slowfast").has_value());
}
