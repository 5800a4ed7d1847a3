#pragma once

// Early-exit rules. Each policy looks at the probability rows of the
// currently eligible masked positions and names the positions to commit to
// their argmax token this step.
//
//   Jot          per-position ratio test against a spatially softened threshold
//   Prophet      global commit once every position clears a top-2 gap
//   KlStability  commit after kl_window consecutive low-KL steps
//   None         never exits; the transfer schedule does all the work

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dlmdecode/core.hpp"
#include "dlmdecode/spatial.hpp"

namespace dlm {

enum class PolicyKind { Jot, Prophet, KlStability, None };

constexpr std::string_view to_string(PolicyKind k) noexcept {
    switch (k) {
    case PolicyKind::Jot: return "jot";
    case PolicyKind::Prophet: return "prophet";
    case PolicyKind::KlStability: return "kl";
    case PolicyKind::None: return "none";
    }
    return "none";
}

inline std::optional<PolicyKind> parse_policy_kind(std::string_view s) {
    if (s == "jot") return PolicyKind::Jot;
    if (s == "prophet") return PolicyKind::Prophet;
    if (s == "kl") return PolicyKind::KlStability;
    if (s == "none") return PolicyKind::None;
    return std::nullopt;
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Jot;
    double tau_max = 90.0;
    double tau_min = 1.0;
    std::optional<SpatialConfig> spatial = SpatialConfig(0.5, 8);
    double eps = kDefaultEps;
    double prophet_gap = 0.9;
    double kl_delta = 1e-3;
    std::size_t kl_window = 2;

    void validate() const {
        if (!(tau_max > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau_max must be > 0");
        if (!(tau_min > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau_min must be > 0");
        if (tau_min > tau_max) throw Error(ErrorCode::InvalidArgument, "tau_min must be <= tau_max");
        if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be > 0");
        if (!(prophet_gap >= 0.0)) throw Error(ErrorCode::InvalidArgument, "prophet_gap must be >= 0");
        if (!(kl_delta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "kl_delta must be >= 0");
        if (kl_window < 1) throw Error(ErrorCode::InvalidArgument, "kl_window must be >= 1");
    }

    static PolicyConfig none() {
        PolicyConfig cfg;
        cfg.kind = PolicyKind::None;
        return cfg;
    }
};

struct ExitDecision {
    std::vector<std::pair<std::size_t, TokenId>> finalize;
    bool commit_all = false;

    bool empty() const noexcept { return finalize.empty(); }
};

/// tau = tau_max - (tau_max - tau_min) * phi. Endpoints are returned exactly.
inline double adaptive_threshold(double phi, const PolicyConfig& cfg) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw Error(ErrorCode::InvalidArgument, "phi must lie in [0,1]");
    if (phi == 0.0) return cfg.tau_max;
    if (phi == 1.0) return cfg.tau_min;
    return cfg.tau_max - (cfg.tau_max - cfg.tau_min) * phi;
}

inline ExitDecision jot_decide(std::span<const PositionRow> rows, const SpatialField& field,
                               const PolicyConfig& cfg) {
    ExitDecision out;
    for (const auto& pr : rows) {
        const double r = confidence_ratio(pr.row, cfg.eps);
        if (r >= adaptive_threshold(field.at(pr.position), cfg))
            out.finalize.emplace_back(pr.position, pr.row.argmax());
    }
    return out;
}

inline ExitDecision prophet_decide(std::span<const PositionRow> rows, const PolicyConfig& cfg) {
    ExitDecision out;
    if (rows.empty()) return out;
    double min_gap = std::numeric_limits<double>::infinity();
    for (const auto& pr : rows) min_gap = std::min(min_gap, pr.row.p1() - pr.row.p2());
    if (min_gap < cfg.prophet_gap) return out;
    out.commit_all = true;
    for (const auto& pr : rows) out.finalize.emplace_back(pr.position, pr.row.argmax());
    return out;
}

/// D_KL(prev || curr) in nats. Zero-probability entries of prev contribute nothing.
inline double kl_divergence(std::span<const double> prev, std::span<const double> curr) {
    if (prev.size() != curr.size())
        throw Error(ErrorCode::InvalidArgument, "KL operands differ in vocabulary size");
    double kl = 0.0;
    for (std::size_t v = 0; v < prev.size(); ++v) {
        if (prev[v] <= 0.0) continue;
        if (curr[v] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += prev[v] * std::log(prev[v] / curr[v]);
    }
    return kl;
}

struct KlState {
    std::map<std::size_t, ProbRow> prev_probs;
    std::map<std::size_t, std::size_t> stable_count;
};

/// Positions without a previous distribution count as stable for this step.
inline std::pair<ExitDecision, KlState> kl_decide(std::span<const PositionRow> rows, KlState kl,
                                                  const PolicyConfig& cfg) {
    ExitDecision out;
    for (const auto& pr : rows) {
        double divergence = 0.0;
        if (auto it = kl.prev_probs.find(pr.position); it != kl.prev_probs.end())
            divergence = kl_divergence(it->second.probs(), pr.row.probs());

        auto& count = kl.stable_count[pr.position];
        count = divergence <= cfg.kl_delta ? count + 1 : 0;
        if (count >= cfg.kl_window) out.finalize.emplace_back(pr.position, pr.row.argmax());

        kl.prev_probs.insert_or_assign(pr.position, pr.row);
    }
    return {std::move(out), std::move(kl)};
}

} // namespace dlm
