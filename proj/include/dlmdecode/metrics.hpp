#pragma once

// Decode transcripts, speedup accounting, and the CSV/JSON emitters used by
// the harness. Reals are written with 17 significant digits through
// std::to_chars, which ignores the global locale.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlmdecode/core.hpp"
#include "dlmdecode/policy.hpp"

namespace dlm {

struct StepRecord {
    std::uint32_t step = 0;
    std::size_t masked_before = 0;
    std::size_t early_exits = 0;
    std::size_t transfers = 0;
    double mean_conf_ratio = 0.0;
    bool commit_all = false;
    std::vector<std::size_t> exited_positions;
    std::vector<std::size_t> transferred_positions;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct DecodeTrace {
    std::vector<StepRecord> steps;
    std::uint32_t actual_steps = 0;
    std::uint32_t configured_steps = 0;
    std::size_t gen_len = 0;
    std::vector<TokenId> final_tokens;
    std::int64_t wallclock_ns = 0;

    std::size_t total_exits() const {
        std::size_t n = 0;
        for (const auto& s : steps) n += s.early_exits;
        return n;
    }
    std::size_t total_transfers() const {
        std::size_t n = 0;
        for (const auto& s : steps) n += s.transfers;
        return n;
    }
};

/// Everything except wallclock, which is the one field that is not a
/// function of the inputs.
inline bool identical_transcript(const DecodeTrace& a, const DecodeTrace& b) {
    return a.steps == b.steps && a.actual_steps == b.actual_steps &&
           a.configured_steps == b.configured_steps && a.gen_len == b.gen_len &&
           a.final_tokens == b.final_tokens;
}

struct RunSummary {
    std::string policy_id;
    PolicyConfig policy;
    nlohmann::json config; // resolved configuration snapshot
    std::vector<DecodeTrace> traces;
    std::optional<double> score_proxy;          // mean target-match fraction
    std::optional<double> baseline_wallclock_ns; // mean over the same seeds, policy None
};

inline double mean_actual_steps(const RunSummary& s) {
    if (s.traces.empty()) throw Error(ErrorCode::InvalidArgument, "summary has no completed decodes");
    double sum = 0.0;
    for (const auto& t : s.traces) sum += t.actual_steps;
    return sum / static_cast<double>(s.traces.size());
}

/// T / mean(actual steps).
inline double step_speedup(const RunSummary& s) {
    return static_cast<double>(s.traces.front().configured_steps) / mean_actual_steps(s);
}

inline double mean_wallclock_ns(const std::vector<DecodeTrace>& traces) {
    if (traces.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& t : traces) sum += static_cast<double>(t.wallclock_ns);
    return sum / static_cast<double>(traces.size());
}

/// Baseline mean wallclock over this run's mean wallclock; absent without a baseline.
inline std::optional<double> wallclock_speedup(const RunSummary& s) {
    if (!s.baseline_wallclock_ns) return std::nullopt;
    const double own = mean_wallclock_ns(s.traces);
    if (own <= 0.0) return std::nullopt;
    return *s.baseline_wallclock_ns / own;
}

/// Fraction of generated positions whose final token equals the target.
inline double target_match(const DecodeTrace& t, std::span<const TokenId> targets) {
    if (targets.size() != t.final_tokens.size())
        throw Error(ErrorCode::InvalidArgument, "target length differs from generated length");
    std::size_t hit = 0;
    for (std::size_t k = 0; k < targets.size(); ++k) hit += targets[k] == t.final_tokens[k] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(targets.size());
}

inline std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

namespace detail {

struct StepAggregate {
    std::size_t sequences = 0;
    double conf_sum = 0.0;
    std::size_t exits = 0;
    std::size_t transfers = 0;
};

inline std::vector<StepAggregate> aggregate_steps(const std::vector<DecodeTrace>& traces, std::size_t rows) {
    std::vector<StepAggregate> agg(rows);
    for (const auto& t : traces) {
        for (std::size_t k = 0; k < t.steps.size() && k < rows; ++k) {
            agg[k].sequences += 1;
            agg[k].conf_sum += t.steps[k].mean_conf_ratio;
            agg[k].exits += t.steps[k].early_exits;
            agg[k].transfers += t.steps[k].transfers;
        }
    }
    return agg;
}

inline std::size_t max_steps(const std::vector<DecodeTrace>& traces) {
    std::size_t m = 0;
    for (const auto& t : traces) m = std::max<std::size_t>(m, t.actual_steps);
    return m;
}

inline void emit_aggregate(std::ostringstream& os, const StepAggregate& a) {
    if (a.sequences == 0) {
        os << ",,";
        return;
    }
    os << format_real(a.conf_sum / static_cast<double>(a.sequences)) << ',' << a.exits << ',' << a.transfers;
}

} // namespace detail

/// Per step: mean over sequences of the mean confidence ratio, and total
/// exits and transfers across sequences. One row per step up to the longest trace.
inline std::string dynamics_csv(const std::vector<DecodeTrace>& traces) {
    if (traces.empty()) throw Error(ErrorCode::InvalidArgument, "dynamics_csv needs at least one trace");
    const std::size_t rows = detail::max_steps(traces);
    const auto agg = detail::aggregate_steps(traces, rows);
    std::ostringstream os;
    os << "step,mean_conf_ratio,early_exits,transfers\n";
    for (std::size_t k = 0; k < rows; ++k) {
        os << (k + 1) << ',';
        detail::emit_aggregate(os, agg[k]);
        os << '\n';
    }
    return os.str();
}

/// Baseline and policy columns joined on step. Steps past a side's last
/// step leave that side's fields empty.
inline std::string dynamics_csv(const std::vector<DecodeTrace>& baseline, const std::vector<DecodeTrace>& policy) {
    if (baseline.empty() || policy.empty())
        throw Error(ErrorCode::InvalidArgument, "dynamics_csv needs at least one trace per side");
    const std::size_t rows = std::max(detail::max_steps(baseline), detail::max_steps(policy));
    const auto a = detail::aggregate_steps(baseline, rows);
    const auto b = detail::aggregate_steps(policy, rows);
    std::ostringstream os;
    os << "step,baseline_mean_conf_ratio,baseline_early_exits,baseline_transfers,"
          "policy_mean_conf_ratio,policy_early_exits,policy_transfers\n";
    for (std::size_t k = 0; k < rows; ++k) {
        os << (k + 1) << ',';
        detail::emit_aggregate(os, a[k]);
        os << ',';
        detail::emit_aggregate(os, b[k]);
        os << '\n';
    }
    return os.str();
}

/// Per-step transcript of one decode.
inline std::string trace_csv(const DecodeTrace& t) {
    std::ostringstream os;
    os << "step,masked_before,early_exits,transfers,mean_conf_ratio,commit_all\n";
    for (const auto& s : t.steps)
        os << s.step << ',' << s.masked_before << ',' << s.early_exits << ',' << s.transfers << ','
           << format_real(s.mean_conf_ratio) << ',' << (s.commit_all ? 1 : 0) << '\n';
    return os.str();
}

inline std::string sweep_table(const std::vector<RunSummary>& summaries) {
    if (summaries.empty()) throw Error(ErrorCode::InvalidArgument, "sweep_table needs at least one summary");
    std::ostringstream os;
    os << "policy,tau_max,tau_min,gamma,window,mean_actual_steps,step_speedup,wallclock_speedup,score_proxy\n";
    for (const auto& s : summaries) {
        os << s.policy_id << ',' << format_real(s.policy.tau_max) << ',' << format_real(s.policy.tau_min) << ',';
        if (s.policy.spatial)
            os << format_real(s.policy.spatial->gamma()) << ',' << s.policy.spatial->window();
        else
            os << ',';
        os << ',' << format_real(mean_actual_steps(s)) << ',' << format_real(step_speedup(s)) << ',';
        if (auto w = wallclock_speedup(s)) os << format_real(*w);
        os << ',';
        if (s.score_proxy) os << format_real(*s.score_proxy);
        os << '\n';
    }
    return os.str();
}

inline nlohmann::json trace_json(const DecodeTrace& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps)
        steps.push_back({{"step", s.step},
                         {"masked_before", s.masked_before},
                         {"early_exits", s.early_exits},
                         {"transfers", s.transfers},
                         {"mean_conf_ratio", s.mean_conf_ratio},
                         {"commit_all", s.commit_all}});
    std::vector<std::uint32_t> tokens;
    for (auto tok : t.final_tokens) tokens.push_back(tok.value);
    return {{"actual_steps", t.actual_steps},
            {"configured_steps", t.configured_steps},
            {"gen_len", t.gen_len},
            {"wallclock_ns", t.wallclock_ns},
            {"final_tokens", tokens},
            {"steps", steps}};
}

inline nlohmann::json summary_json(const RunSummary& s) {
    nlohmann::json j;
    j["policy"] = s.policy_id;
    j["config"] = s.config;
    j["step_speedup"] = step_speedup(s);
    j["mean_actual_steps"] = mean_actual_steps(s);
    if (auto w = wallclock_speedup(s))
        j["wallclock_speedup"] = *w;
    else
        j["wallclock_speedup"] = nullptr;
    if (s.score_proxy)
        j["score_proxy"] = *s.score_proxy;
    else
        j["score_proxy"] = nullptr;
    j["sequences"] = nlohmann::json::array();
    for (const auto& t : s.traces) j["sequences"].push_back(trace_json(t));
    return j;
}

} // namespace dlm
