#pragma once

// The decode loop. Each step:
//
//   1. stop if nothing is masked
//   2. query the denoiser for every masked position, softmax the rows
//   3. log the mean confidence ratio over the masked set
//   4. let the exit policy finalize positions in the active region, using
//      spatial weights from the mask state at the start of the step
//   5. unmask the highest-p1 survivors under the ceiling quota
//
// Without a block size the active region is the whole generated span. With
// one, it is the lowest block that still holds masked cells. Each block owns
// a fixed share of T (floor(T / blocks), the first T mod blocks get one more);
// a block cleared early by exits hands over to the next one immediately.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "dlmdecode/core.hpp"
#include "dlmdecode/denoiser.hpp"
#include "dlmdecode/metrics.hpp"
#include "dlmdecode/policy.hpp"
#include "dlmdecode/spatial.hpp"

namespace dlm {

struct ScheduleConfig {
    std::uint32_t total_steps = 256;
    std::size_t gen_len = 256;
    std::optional<std::size_t> block_size;

    std::size_t block_count() const {
        return block_size ? (gen_len + *block_size - 1) / *block_size : 1;
    }

    void validate() const {
        if (total_steps < 1) throw Error(ErrorCode::InvalidArgument, "total_steps must be >= 1");
        if (gen_len < 1) throw Error(ErrorCode::InvalidArgument, "gen_len must be >= 1");
        if (block_size && *block_size < 1) throw Error(ErrorCode::InvalidArgument, "block_size must be >= 1");
        if (block_count() > total_steps)
            throw Error(ErrorCode::InvalidArgument, "total_steps must be at least the number of blocks");
    }
};

struct BlockBounds {
    std::size_t begin = 0; // absolute, inclusive
    std::size_t end = 0;   // absolute, exclusive

    bool contains(std::size_t pos) const noexcept { return pos >= begin && pos < end; }
    friend bool operator==(const BlockBounds&, const BlockBounds&) = default;
};

/// ceil(remaining_masked / remaining_steps).
inline std::size_t step_quota(std::size_t remaining_masked, std::uint32_t remaining_steps) {
    if (remaining_steps < 1) throw Error(ErrorCode::InvalidArgument, "remaining_steps must be >= 1");
    return (remaining_masked + remaining_steps - 1) / remaining_steps;
}

/// Lowest-indexed block with masked cells, or nullopt when everything is
/// finalized. Without a block size the single block spans the generated region.
inline std::optional<BlockBounds> block_view(const DecodeState& state, const ScheduleConfig& sched) {
    const std::size_t lo = state.prompt_len();
    const std::size_t width = sched.block_size.value_or(state.gen_len());
    for (std::size_t b = lo; b < state.size(); b += width) {
        const std::size_t e = std::min(state.size(), b + width);
        for (std::size_t i = b; i < e; ++i)
            if (state.is_masked(i)) return BlockBounds{b, e};
    }
    return std::nullopt;
}

/// The min(quota, rows) rows with the largest p1, ties to the lower position.
/// Returned in selection order.
inline std::vector<std::pair<std::size_t, TokenId>> transfer_select(std::span<const PositionRow> rows,
                                                                    std::size_t quota) {
    std::vector<const PositionRow*> order;
    order.reserve(rows.size());
    for (const auto& r : rows) order.push_back(&r);
    const std::size_t take = std::min(quota, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [](const PositionRow* a, const PositionRow* b) {
                          if (a->row.p1() != b->row.p1()) return a->row.p1() > b->row.p1();
                          return a->position < b->position;
                      });
    std::vector<std::pair<std::size_t, TokenId>> out;
    out.reserve(take);
    for (std::size_t k = 0; k < take; ++k) out.emplace_back(order[k]->position, order[k]->row.argmax());
    return out;
}

/// Steps owned by block b out of T.
inline std::uint32_t block_budget(const ScheduleConfig& sched, std::size_t b) {
    const auto n = static_cast<std::uint32_t>(sched.block_count());
    return sched.total_steps / n + (b < sched.total_steps % n ? 1u : 0u);
}

struct QuotaContext {
    std::size_t masked = 0;          // masked cells in the active region after exits
    std::uint32_t steps_left = 0;    // of T, including this step
    std::size_t block = 0;           // active block index (0 without a block size)
    std::uint32_t block_steps_used = 0; // steps already spent on the active block
};

using QuotaRule = std::function<std::size_t(const ScheduleConfig&, const QuotaContext&)>;

/// Whole-sequence mode: ceil(masked / steps left). Block mode: ceil(masked /
/// steps left in the active block's budget).
inline std::size_t ceiling_quota(const ScheduleConfig& sched, const QuotaContext& q) {
    if (!sched.block_size) return step_quota(q.masked, q.steps_left);
    const std::uint32_t budget = block_budget(sched, q.block);
    return step_quota(q.masked, budget > q.block_steps_used ? budget - q.block_steps_used : 1u);
}

struct DecodeResult {
    DecodeState state;
    DecodeTrace trace;
};

template <Denoiser D>
DecodeResult decode(const D& denoiser, DecodeState state, const PolicyConfig& policy,
                    const ScheduleConfig& sched, const QuotaRule& quota_rule = ceiling_quota) {
    policy.validate();
    sched.validate();
    if (state.gen_len() != sched.gen_len)
        throw Error(ErrorCode::InvalidArgument, "state gen_len differs from the schedule");
    if (state.masked_count() != state.gen_len())
        throw Error(ErrorCode::InvalidArgument, "decode expects a freshly initialized state");

    DecodeTrace trace;
    trace.configured_steps = sched.total_steps;
    trace.gen_len = sched.gen_len;
    KlState kl;
    const std::size_t width = sched.block_size.value_or(sched.gen_len);
    std::size_t block = 0;
    std::uint32_t block_steps_used = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint32_t n = 1; n <= sched.total_steps; ++n) {
        const auto masked = state.masked_set();
        if (masked.empty()) break;
        state.advance_to(n);

        DenoiserResponse response;
        try {
            response = denoiser.denoise(DenoiserRequest{state, n});
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(ErrorCode::DenoiserFailure, e.what());
        }
        if (response.rows.size() != masked.size())
            throw Error(ErrorCode::DenoiserFailure, "response does not cover exactly the masked set");

        std::vector<PositionRow> rows;
        rows.reserve(masked.size());
        double conf_sum = 0.0;
        for (std::size_t pos : masked) {
            const auto it = response.rows.find(pos);
            if (it == response.rows.end())
                throw Error(ErrorCode::DenoiserFailure, "response missing masked position " + std::to_string(pos));
            if (it->second.size() != denoiser.vocab_size())
                throw Error(ErrorCode::DenoiserFailure, "logit row length differs from the vocabulary size");
            rows.push_back(PositionRow{pos, softmax(it->second)});
            conf_sum += confidence_ratio(rows.back().row, policy.eps);
        }

        StepRecord rec;
        rec.step = n;
        rec.masked_before = masked.size();
        rec.mean_conf_ratio = conf_sum / static_cast<double>(masked.size());

        const BlockBounds active = *block_view(state, sched);
        if (const std::size_t b = (active.begin - state.prompt_len()) / width; b != block) {
            block = b;
            block_steps_used = 0;
        }
        std::vector<PositionRow> eligible;
        for (const auto& r : rows)
            if (active.contains(r.position)) eligible.push_back(r);

        ExitDecision decision;
        switch (policy.kind) {
        case PolicyKind::Jot: {
            const SpatialField field = policy.spatial ? spatial_field(state, *policy.spatial)
                                                      : SpatialField::zeros(state.prompt_len(), state.gen_len());
            decision = jot_decide(eligible, field, policy);
            break;
        }
        case PolicyKind::Prophet: decision = prophet_decide(eligible, policy); break;
        case PolicyKind::KlStability: {
            auto [d, next] = kl_decide(eligible, std::move(kl), policy);
            decision = std::move(d);
            kl = std::move(next);
            break;
        }
        case PolicyKind::None: break;
        }

        std::set<std::size_t> exited;
        for (const auto& [pos, tok] : decision.finalize) {
            state.finalize(pos, tok, n);
            exited.insert(pos);
            rec.exited_positions.push_back(pos);
        }
        rec.early_exits = exited.size();
        rec.commit_all = decision.commit_all;

        std::vector<PositionRow> survivors;
        for (auto& r : eligible)
            if (!exited.contains(r.position)) survivors.push_back(std::move(r));

        if (!survivors.empty()) {
            const QuotaContext ctx{survivors.size(), sched.total_steps - n + 1, block, block_steps_used};
            const std::size_t quota = quota_rule(sched, ctx);
            for (const auto& [pos, tok] : transfer_select(survivors, quota)) {
                state.finalize(pos, tok, n);
                rec.transferred_positions.push_back(pos);
            }
        }
        rec.transfers = rec.transferred_positions.size();
        ++block_steps_used;
        trace.steps.push_back(std::move(rec));
        trace.actual_steps = n;
    }
    trace.wallclock_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();

    if (state.masked_count() != 0)
        throw Error(ErrorCode::ScheduleExhausted,
                    std::to_string(state.masked_count()) + " cells still masked after " +
                        std::to_string(sched.total_steps) + " steps");
    trace.final_tokens = state.generated_tokens();
    return DecodeResult{std::move(state), std::move(trace)};
}

} // namespace dlm
