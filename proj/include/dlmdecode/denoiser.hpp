#pragma once

// Denoiser contract and the three reference backends.
//
// A denoiser maps (sequence state, step) to one LogitRow per masked
// position. Backends are immutable after construction and pure in their
// inputs, so concurrent calls on distinct sequences are safe.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlmdecode/core.hpp"
#include "dlmdecode/tracefmt.hpp"

namespace dlm {

struct DenoiserRequest {
    const DecodeState& state;
    std::uint32_t step = 0;
};

struct DenoiserResponse {
    std::map<std::size_t, LogitRow> rows;
};

template <typename D>
concept Denoiser = requires(const D& d, const DenoiserRequest& req) {
    { d.denoise(req) } -> std::same_as<DenoiserResponse>;
    { d.vocab_size() } -> std::convertible_to<std::uint32_t>;
};

/// splitmix64 finalizer; counter-based noise keyed by (seed, a, b).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t noise_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

/// Uniform in [0,1) from a 64-bit key.
constexpr double unit_interval(std::uint64_t key) noexcept {
    return static_cast<double>(key >> 11) * 0x1.0p-53;
}

inline constexpr double kLogitFloor = -30.0;

namespace detail {

/// Runner-up token for a two-hot row. Prefers indices above the target so
/// that an exact tie still resolves to the target under lowest-index argmax.
inline TokenId runner_up(const Vocab& vocab, TokenId target, std::uint64_t key) {
    std::vector<std::uint32_t> above;
    std::vector<std::uint32_t> any;
    for (std::uint32_t v = 0; v < vocab.size(); ++v) {
        if (v == target.value || v == vocab.mask_id().value) continue;
        any.push_back(v);
        if (v > target.value) above.push_back(v);
    }
    const auto& pool = above.empty() ? any : above;
    return TokenId{pool[key % pool.size()]};
}

inline LogitRow two_hot(const Vocab& vocab, TokenId target, TokenId second, double ratio) {
    std::vector<double> logits(vocab.size(), kLogitFloor);
    logits[target.value] = std::log(ratio);
    logits[second.value] = 0.0;
    return LogitRow(std::move(logits));
}

inline void check_targets(const Vocab& vocab, std::span<const TokenId> targets) {
    if (vocab.size() < 3)
        throw Error(ErrorCode::InvalidArgument, "synthetic denoisers need vocab size >= 3");
    if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "targets must be non-empty");
    for (TokenId t : targets) {
        if (!vocab.contains(t)) throw Error(ErrorCode::InvalidArgument, "target outside vocabulary");
        if (t == vocab.mask_id()) throw Error(ErrorCode::InvalidArgument, "target equals mask token");
    }
}

inline std::size_t generated_offset(const DenoiserRequest& req, std::size_t pos, std::size_t covered) {
    const std::size_t k = pos - req.state.prompt_len();
    if (k >= covered)
        throw Error(ErrorCode::SpecIncomplete, "no entry for generated position " + std::to_string(k));
    return k;
}

} // namespace detail

/// Per-position ratio switches from pre_ratio to post_ratio at step s_i.
struct OracleSpec {
    Vocab vocab;
    std::vector<TokenId> targets;
    std::vector<std::uint32_t> stabilize_step;
    double pre_ratio = 1.0;
    double post_ratio = 1000.0;
    std::uint64_t seed = 0;

    void validate() const {
        detail::check_targets(vocab, targets);
        if (stabilize_step.size() != targets.size())
            throw Error(ErrorCode::InvalidArgument, "stabilize_step and targets differ in length");
        for (auto s : stabilize_step)
            if (s < 1) throw Error(ErrorCode::InvalidArgument, "stabilize_step entries must be >= 1");
        if (!(pre_ratio >= 1.0)) throw Error(ErrorCode::InvalidArgument, "pre_ratio must be >= 1");
        if (!(post_ratio > pre_ratio))
            throw Error(ErrorCode::InvalidArgument, "post_ratio must exceed pre_ratio");
    }
};

class OracleDenoiser {
public:
    explicit OracleDenoiser(OracleSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const OracleSpec& spec() const noexcept { return spec_; }
    std::uint32_t vocab_size() const noexcept { return spec_.vocab.size(); }
    std::span<const TokenId> targets() const noexcept { return spec_.targets; }

    DenoiserResponse denoise(const DenoiserRequest& req) const {
        DenoiserResponse out;
        for (std::size_t pos : req.state.masked_set()) {
            const std::size_t k = detail::generated_offset(req, pos, spec_.targets.size());
            const double ratio = req.step < spec_.stabilize_step[k] ? spec_.pre_ratio : spec_.post_ratio;
            const TokenId second =
                detail::runner_up(spec_.vocab, spec_.targets[k], noise_key(spec_.seed, k, req.step));
            out.rows.emplace(pos, detail::two_hot(spec_.vocab, spec_.targets[k], second, ratio));
        }
        return out;
    }

private:
    OracleSpec spec_;
};

/// Emitted ratio = base_ratio * (1 + gain * c_i) * m_i, where c_i is the
/// unmasked fraction of in-bounds cells within coupling_window of i. m_i is
/// easy_boost for a seeded easy_fraction of positions and 1 elsewhere.
struct CoupledSpec {
    Vocab vocab;
    std::vector<TokenId> targets;
    double base_ratio = 50.0;
    double gain = 2.0;
    std::size_t coupling_window = 4;
    double easy_fraction = 0.0;
    double easy_boost = 20.0;
    std::uint64_t seed = 0;

    void validate() const {
        detail::check_targets(vocab, targets);
        if (!(base_ratio >= 1.0)) throw Error(ErrorCode::InvalidArgument, "base_ratio must be >= 1");
        if (!(gain >= 0.0)) throw Error(ErrorCode::InvalidArgument, "gain must be >= 0");
        if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0))
            throw Error(ErrorCode::InvalidArgument, "easy_fraction must lie in [0,1]");
        if (!(easy_boost >= 1.0)) throw Error(ErrorCode::InvalidArgument, "easy_boost must be >= 1");
        if (coupling_window < 1) throw Error(ErrorCode::InvalidArgument, "coupling_window must be >= 1");
    }
};

/// Fraction of unmasked cells among in-bounds neighbors at distance 1..window.
inline double context_fraction(const DecodeState& state, std::size_t pos, std::size_t window) {
    const std::size_t lo = pos >= window ? pos - window : 0;
    const std::size_t hi = std::min(state.size() - 1, pos + window);
    std::size_t seen = 0;
    std::size_t unmasked = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
        if (j == pos) continue;
        ++seen;
        if (!state.is_masked(j)) ++unmasked;
    }
    return seen == 0 ? 0.0 : static_cast<double>(unmasked) / static_cast<double>(seen);
}

class CoupledDenoiser {
public:
    explicit CoupledDenoiser(CoupledSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const CoupledSpec& spec() const noexcept { return spec_; }
    std::uint32_t vocab_size() const noexcept { return spec_.vocab.size(); }
    std::span<const TokenId> targets() const noexcept { return spec_.targets; }

    double emitted_ratio(const DecodeState& state, std::size_t pos) const {
        const std::size_t k = pos - state.prompt_len();
        const double c = context_fraction(state, pos, spec_.coupling_window);
        const double u = unit_interval(noise_key(spec_.seed, k, 0x6a09e667ull));
        return spec_.base_ratio * (1.0 + spec_.gain * c) * (u < spec_.easy_fraction ? spec_.easy_boost : 1.0);
    }

    DenoiserResponse denoise(const DenoiserRequest& req) const {
        DenoiserResponse out;
        for (std::size_t pos : req.state.masked_set()) {
            const std::size_t k = detail::generated_offset(req, pos, spec_.targets.size());
            const TokenId second =
                detail::runner_up(spec_.vocab, spec_.targets[k], noise_key(spec_.seed, k, req.step));
            out.rows.emplace(pos, detail::two_hot(spec_.vocab, spec_.targets[k], second,
                                                  emitted_ratio(req.state, pos)));
        }
        return out;
    }

private:
    CoupledSpec spec_;
};

/// Open-loop playback of recorded logits. Step n reads block min(n, recorded_steps).
class ReplayDenoiser {
public:
    explicit ReplayDenoiser(std::shared_ptr<const trace::TraceFile> file) : file_(std::move(file)) {
        if (!file_) throw Error(ErrorCode::InvalidArgument, "null trace");
    }

    const trace::TraceFile& file() const noexcept { return *file_; }
    std::uint32_t vocab_size() const noexcept { return file_->header.vocab_size; }
    std::span<const TokenId> targets() const noexcept { return {}; }

    DenoiserResponse denoise(const DenoiserRequest& req) const {
        const auto& h = file_->header;
        if (req.state.prompt_len() != h.prompt_len || req.state.gen_len() != h.gen_len)
            throw Error(ErrorCode::TraceMismatch, "sequence shape differs from the recorded trace");
        if (file_->blocks.empty()) throw Error(ErrorCode::TraceMismatch, "trace has no recorded steps");

        const std::size_t idx = std::min<std::size_t>(std::max<std::uint32_t>(req.step, 1), file_->blocks.size()) - 1;
        const auto& block = file_->blocks[idx];

        DenoiserResponse out;
        for (std::size_t pos : req.state.masked_set()) {
            const auto it = std::lower_bound(block.positions.begin(), block.positions.end(), pos);
            if (it == block.positions.end() || *it != pos)
                throw Error(ErrorCode::TraceMismatch,
                            "position " + std::to_string(pos) + " not recorded at step " +
                                std::to_string(idx + 1));
            const auto row = block.row(static_cast<std::size_t>(it - block.positions.begin()), h.vocab_size);
            out.rows.emplace(pos, LogitRow(std::vector<double>(row.begin(), row.end())));
        }
        return out;
    }

private:
    std::shared_ptr<const trace::TraceFile> file_;
};

} // namespace dlm
