#pragma once

// Experiment driver: turns a RunConfig into denoisers, runs decodes per
// seed, and aggregates RunSummaries for single runs, sweeps and dynamics.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "dlmdecode/config.hpp"
#include "dlmdecode/denoiser.hpp"
#include "dlmdecode/metrics.hpp"
#include "dlmdecode/scheduler.hpp"
#include "dlmdecode/tracefmt.hpp"

namespace dlm {

using AnyDenoiser = std::variant<OracleDenoiser, CoupledDenoiser, ReplayDenoiser>;

namespace detail {

inline constexpr std::uint64_t kPromptSalt = 0x70726f6d70740000ull;
inline constexpr std::uint64_t kTargetSalt = 0x7461726765740000ull;
inline constexpr std::uint64_t kStabilizeSalt = 0x737461620000ull;

/// Non-mask tokens, minus the highest one, so that every target has a
/// non-mask token above it for tie resolution.
inline std::vector<std::uint32_t> target_pool(const DenoiserConfig& d) {
    std::vector<std::uint32_t> pool;
    for (std::uint32_t v = 0; v < d.vocab_size; ++v)
        if (v != d.mask_id) pool.push_back(v);
    pool.pop_back();
    return pool;
}

} // namespace detail

inline std::vector<TokenId> make_prompt(const DenoiserConfig& d, std::uint64_t seed) {
    const auto pool = detail::target_pool(d);
    std::vector<TokenId> prompt(d.prompt_len);
    for (std::size_t k = 0; k < prompt.size(); ++k)
        prompt[k] = TokenId{pool[noise_key(seed, k, detail::kPromptSalt) % pool.size()]};
    return prompt;
}

inline std::vector<TokenId> make_targets(const DenoiserConfig& d, std::size_t gen_len, std::uint64_t seed) {
    const auto pool = detail::target_pool(d);
    std::vector<TokenId> targets(gen_len);
    for (std::size_t k = 0; k < gen_len; ++k)
        targets[k] = TokenId{pool[noise_key(seed, k, detail::kTargetSalt) % pool.size()]};
    return targets;
}

/// Explicit steps when given, otherwise uniform over [stabilize_min, stabilize_max].
inline std::vector<std::uint32_t> make_stabilize_steps(const DenoiserConfig& d, const ScheduleConfig& s,
                                                       std::uint64_t seed) {
    if (!d.stabilize_steps.empty()) return d.stabilize_steps;
    const std::uint32_t lo = d.stabilize_min;
    const std::uint32_t hi = std::max(lo, d.stabilize_max == 0 ? s.total_steps : d.stabilize_max);
    std::vector<std::uint32_t> steps(s.gen_len);
    for (std::size_t k = 0; k < steps.size(); ++k)
        steps[k] = lo + static_cast<std::uint32_t>(noise_key(seed, k, detail::kStabilizeSalt) % (hi - lo + 1));
    return steps;
}

inline OracleSpec make_oracle_spec(const DenoiserConfig& d, const ScheduleConfig& s, std::uint64_t seed) {
    return OracleSpec{Vocab(d.vocab_size, TokenId{d.mask_id}), make_targets(d, s.gen_len, seed),
                      make_stabilize_steps(d, s, seed), d.pre_ratio, d.post_ratio, seed};
}

inline CoupledSpec make_coupled_spec(const DenoiserConfig& d, const ScheduleConfig& s, std::uint64_t seed) {
    return CoupledSpec{Vocab(d.vocab_size, TokenId{d.mask_id}), make_targets(d, s.gen_len, seed),
                       d.base_ratio, d.gain, d.coupling_window, d.easy_fraction, d.easy_boost, seed};
}

/// Loads replay traces once; synthetic backends are rebuilt per seed.
class DenoiserFactory {
public:
    DenoiserFactory(const DenoiserConfig& d, const ScheduleConfig& s) : cfg_(d), sched_(s) {
        if (d.kind == DenoiserKind::Replay) {
            trace_ = std::make_shared<const trace::TraceFile>(trace::load_trace(d.path));
            const auto& h = trace_->header;
            if (h.gen_len != s.gen_len)
                throw Error(ErrorCode::TraceMismatch, "trace gen_len differs from schedule.gen_len");
            if (h.prompt_len != d.prompt_len)
                throw Error(ErrorCode::TraceMismatch, "trace prompt_len differs from denoiser.prompt_len");
            if (h.vocab_size != d.vocab_size)
                throw Error(ErrorCode::TraceMismatch, "trace vocab_size differs from denoiser.vocab_size");
        }
    }

    AnyDenoiser make(std::uint64_t seed) const {
        switch (cfg_.kind) {
        case DenoiserKind::Oracle: return OracleDenoiser(make_oracle_spec(cfg_, sched_, seed));
        case DenoiserKind::Coupled: return CoupledDenoiser(make_coupled_spec(cfg_, sched_, seed));
        case DenoiserKind::Replay: return ReplayDenoiser(trace_);
        }
        throw Error(ErrorCode::InvalidArgument, "unknown denoiser kind");
    }

private:
    DenoiserConfig cfg_;
    ScheduleConfig sched_;
    std::shared_ptr<const trace::TraceFile> trace_;
};

struct SeedRun {
    DecodeTrace trace;
    std::optional<double> score;
};

inline SeedRun run_seed(const DenoiserFactory& factory, const RunConfig& cfg, const PolicyConfig& policy,
                        std::uint64_t seed) {
    const AnyDenoiser denoiser = factory.make(seed);
    const auto prompt = make_prompt(cfg.denoiser, seed);
    return std::visit(
        [&](const auto& d) {
            auto result = decode(d, DecodeState(prompt, cfg.schedule.gen_len), policy, cfg.schedule);
            SeedRun out{std::move(result.trace), std::nullopt};
            if (!d.targets().empty()) out.score = target_match(out.trace, d.targets());
            return out;
        },
        denoiser);
}

/// Decodes every seed under `policy`. The summary's config is `cfg` with
/// the policy replaced, in resolved form.
inline RunSummary run_policy(const DenoiserFactory& factory, const RunConfig& cfg, const PolicyConfig& policy) {
    RunSummary s;
    s.policy = policy;
    s.policy_id = std::string(to_string(policy.kind));
    RunConfig snapshot = cfg;
    snapshot.policy = policy;
    s.config = to_json(snapshot);
    double score_sum = 0.0;
    bool scored = true;
    for (auto seed : cfg.seeds) {
        auto r = run_seed(factory, cfg, policy, seed);
        if (r.score)
            score_sum += *r.score;
        else
            scored = false;
        s.traces.push_back(std::move(r.trace));
    }
    if (scored) s.score_proxy = score_sum / static_cast<double>(cfg.seeds.size());
    return s;
}

/// Policy run plus a policy-None run on the same seeds for wallclock speedup.
inline RunSummary run_experiment(const RunConfig& cfg) {
    const DenoiserFactory factory(cfg.denoiser, cfg.schedule);
    const auto baseline = run_policy(factory, cfg, PolicyConfig::none());
    auto s = run_policy(factory, cfg, cfg.policy);
    s.baseline_wallclock_ns = mean_wallclock_ns(baseline.traces);
    return s;
}

/// Cartesian product of the grid axes in the order tau_max, tau_min, gamma,
/// window, each axis ascending. Unset axes take the base policy's value.
inline std::vector<PolicyConfig> expand_grid(const PolicyConfig& base, const SweepGrid& grid) {
    auto sorted = [](auto v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    };
    const bool spatial = grid.spatial.value_or(base.spatial.has_value() || grid.gamma.has_value() || grid.window.has_value());
    if (!spatial && (grid.gamma.has_value() || grid.window.has_value()))
        detail::config_fail("sweep.spatial", "gamma/window axes given with spatial disabled");
    const SpatialConfig sp = base.spatial.value_or(SpatialConfig(0.5, 8));

    const auto taus_max = sorted(grid.tau_max.value_or(std::vector<double>{base.tau_max}));
    const auto taus_min = sorted(grid.tau_min.value_or(std::vector<double>{base.tau_min}));
    const auto gammas = sorted(grid.gamma.value_or(std::vector<double>{sp.gamma()}));
    const auto windows = sorted(grid.window.value_or(std::vector<std::size_t>{sp.window()}));
    for (double g : gammas)
        if (!(g > 0.0 && g < 1.0)) detail::config_fail("sweep.gamma", "values must lie in (0,1)");
    for (auto w : windows)
        if (w < 1) detail::config_fail("sweep.window", "values must be >= 1");

    std::vector<PolicyConfig> out;
    for (double tmax : taus_max)
        for (double tmin : taus_min) {
            if (!(tmin > 0.0) || !(tmax > 0.0) || tmin > tmax)
                detail::config_fail("sweep.tau_min", "each grid point needs 0 < tau_min <= tau_max");
            if (!spatial) {
                PolicyConfig p = base;
                p.tau_max = tmax;
                p.tau_min = tmin;
                p.spatial.reset();
                out.push_back(p);
                continue;
            }
            for (double g : gammas)
                for (auto w : windows) {
                    PolicyConfig p = base;
                    p.tau_max = tmax;
                    p.tau_min = tmin;
                    p.spatial = SpatialConfig(g, w);
                    out.push_back(p);
                }
        }
    return out;
}

/// DLMDECODE_THREADS caps worker threads; default is the hardware concurrency.
inline unsigned sweep_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DLMDECODE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
    }
    return n;
}

/// One summary per grid point, in grid order. Grid points run concurrently;
/// results are collected by index so output order never depends on timing.
inline std::vector<RunSummary> run_sweep(const RunConfig& cfg, const SweepGrid& grid) {
    const auto points = expand_grid(cfg.policy, grid);
    const DenoiserFactory factory(cfg.denoiser, cfg.schedule);
    const auto baseline = run_policy(factory, cfg, PolicyConfig::none());
    const double baseline_ns = mean_wallclock_ns(baseline.traces);

    std::vector<std::optional<RunSummary>> slots(points.size());
    std::vector<std::exception_ptr> errors(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < points.size(); k = next++) {
            try {
                slots[k] = run_policy(factory, cfg, points[k]);
                slots[k]->baseline_wallclock_ns = baseline_ns;
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const unsigned n = std::min<unsigned>(sweep_threads(), static_cast<unsigned>(points.size()));
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<RunSummary> out;
    out.reserve(slots.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

struct DynamicsResult {
    RunSummary baseline;
    RunSummary policy;
};

inline DynamicsResult run_dynamics(const RunConfig& cfg) {
    const DenoiserFactory factory(cfg.denoiser, cfg.schedule);
    DynamicsResult r{run_policy(factory, cfg, PolicyConfig::none()), run_policy(factory, cfg, cfg.policy)};
    const double base_ns = mean_wallclock_ns(r.baseline.traces);
    r.policy.baseline_wallclock_ns = base_ns;
    r.baseline.baseline_wallclock_ns = base_ns;
    return r;
}

} // namespace dlm
