#pragma once

// State and distribution primitives for masked diffusion decoding.
//
// A sequence is a row of cells: a fixed prompt followed by gen_len generated
// slots that start masked and are finalized exactly once. Per-position model
// output is a LogitRow; softmax turns it into a ProbRow carrying the cached
// top-2 statistics that every exit policy reads.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlmdecode/error.hpp"

namespace dlm {

inline constexpr double kDefaultEps = 1e-10;

struct TokenId {
    std::uint32_t value = 0;

    friend constexpr auto operator<=>(TokenId, TokenId) = default;
};

class Vocab {
public:
    Vocab(std::uint32_t size, TokenId mask_id) : size_(size), mask_id_(mask_id) {
        if (size < 2) throw Error(ErrorCode::VocabTooSmall, "vocab size must be >= 2");
        if (mask_id.value >= size)
            throw Error(ErrorCode::InvalidArgument, "mask_id must be < vocab size");
    }

    std::uint32_t size() const noexcept { return size_; }
    TokenId mask_id() const noexcept { return mask_id_; }
    bool contains(TokenId t) const noexcept { return t.value < size_; }

    friend bool operator==(const Vocab&, const Vocab&) = default;

private:
    std::uint32_t size_;
    TokenId mask_id_;
};

enum class CellKind : std::uint8_t { Prompt, Masked, Finalized };

/// One sequence slot. Finalized cells remember the 1-based step that committed them.
class Cell {
public:
    static Cell prompt(TokenId t) { return Cell(CellKind::Prompt, t, 0); }
    static Cell masked() { return Cell(CellKind::Masked, TokenId{}, 0); }
    static Cell finalized(TokenId t, std::uint32_t step) {
        if (step < 1) throw Error(ErrorCode::InvalidArgument, "finalization step must be >= 1");
        return Cell(CellKind::Finalized, t, step);
    }

    CellKind kind() const noexcept { return kind_; }
    bool is_masked() const noexcept { return kind_ == CellKind::Masked; }
    TokenId token() const noexcept { return token_; }
    std::uint32_t step() const noexcept { return step_; }

    friend bool operator==(const Cell&, const Cell&) = default;

private:
    Cell(CellKind k, TokenId t, std::uint32_t s) : kind_(k), token_(t), step_(s) {}

    CellKind kind_;
    TokenId token_;
    std::uint32_t step_;
};

/// Prompt followed by gen_len generated cells. Positions are absolute indices
/// into cells(); generated positions live in [prompt_len, prompt_len + gen_len).
class DecodeState {
public:
    DecodeState(std::span<const TokenId> prompt, std::size_t gen_len) : prompt_len_(prompt.size()) {
        if (gen_len == 0) throw Error(ErrorCode::InvalidArgument, "gen_len must be positive");
        cells_.reserve(prompt.size() + gen_len);
        for (TokenId t : prompt) cells_.push_back(Cell::prompt(t));
        cells_.resize(prompt.size() + gen_len, Cell::masked());
    }

    const std::vector<Cell>& cells() const noexcept { return cells_; }
    const Cell& cell(std::size_t pos) const { return cells_.at(pos); }
    std::size_t size() const noexcept { return cells_.size(); }
    std::size_t prompt_len() const noexcept { return prompt_len_; }
    std::size_t gen_len() const noexcept { return cells_.size() - prompt_len_; }
    std::uint32_t step() const noexcept { return step_; }

    bool is_masked(std::size_t pos) const { return cells_.at(pos).is_masked(); }

    std::vector<std::size_t> masked_set() const {
        std::vector<std::size_t> out;
        for (std::size_t i = prompt_len_; i < cells_.size(); ++i)
            if (cells_[i].is_masked()) out.push_back(i);
        return out;
    }

    std::size_t masked_count() const noexcept {
        return static_cast<std::size_t>(
            std::count_if(cells_.begin() + static_cast<std::ptrdiff_t>(prompt_len_), cells_.end(),
                          [](const Cell& c) { return c.is_masked(); }));
    }

    void advance_to(std::uint32_t step) {
        if (step < step_) throw Error(ErrorCode::InvalidArgument, "step index must be non-decreasing");
        step_ = step;
    }

    void finalize(std::size_t pos, TokenId token, std::uint32_t step) {
        if (pos < prompt_len_ || pos >= cells_.size())
            throw Error(ErrorCode::InvalidArgument, "finalize outside the generated region");
        if (!cells_[pos].is_masked())
            throw Error(ErrorCode::InvalidArgument,
                        "position " + std::to_string(pos) + " is not masked");
        cells_[pos] = Cell::finalized(token, step);
    }

    /// Tokens of the generated region; masked cells report `fill`.
    std::vector<TokenId> generated_tokens(TokenId fill = TokenId{}) const {
        std::vector<TokenId> out;
        out.reserve(gen_len());
        for (std::size_t i = prompt_len_; i < cells_.size(); ++i)
            out.push_back(cells_[i].is_masked() ? fill : cells_[i].token());
        return out;
    }

    friend bool operator==(const DecodeState&, const DecodeState&) = default;

private:
    std::vector<Cell> cells_;
    std::size_t prompt_len_;
    std::uint32_t step_ = 0;
};

class LogitRow {
public:
    explicit LogitRow(std::vector<double> logits) : logits_(std::move(logits)) {
        for (double v : logits_)
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidLogits, "non-finite logit");
    }

    std::span<const double> values() const noexcept { return logits_; }
    std::size_t size() const noexcept { return logits_.size(); }

    friend bool operator==(const LogitRow&, const LogitRow&) = default;

private:
    std::vector<double> logits_;
};

struct Top2 {
    double p1 = 0.0;
    double p2 = 0.0;
    TokenId argmax{};

    friend bool operator==(const Top2&, const Top2&) = default;
};

/// Largest and second-largest entries, counting duplicates. Ties on the
/// maximum resolve to the lowest index.
inline Top2 top2(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorCode::VocabTooSmall, "top2 needs at least two entries");
    Top2 t;
    if (values[1] > values[0]) {
        t = {values[1], values[0], TokenId{1}};
    } else {
        t = {values[0], values[1], TokenId{0}};
    }
    for (std::size_t v = 2; v < values.size(); ++v) {
        const double x = values[v];
        if (x > t.p1) {
            t.p2 = t.p1;
            t.p1 = x;
            t.argmax = TokenId{static_cast<std::uint32_t>(v)};
        } else if (x > t.p2) {
            t.p2 = x;
        }
    }
    return t;
}

class ProbRow {
public:
    /// Validates a distribution: non-negative entries summing to 1 within 1e-6.
    static ProbRow from_probs(std::vector<double> probs) {
        double sum = 0.0;
        for (double p : probs) {
            if (!(p >= 0.0) || !std::isfinite(p))
                throw Error(ErrorCode::InvalidArgument, "probabilities must be finite and non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw Error(ErrorCode::InvalidArgument, "probabilities must sum to 1");
        return ProbRow(std::move(probs));
    }

    std::span<const double> probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double p1() const noexcept { return top_.p1; }
    double p2() const noexcept { return top_.p2; }
    TokenId argmax() const noexcept { return top_.argmax; }

    friend bool operator==(const ProbRow&, const ProbRow&) = default;

private:
    explicit ProbRow(std::vector<double> probs) : probs_(std::move(probs)), top_(top2(probs_)) {}

    friend ProbRow softmax(const LogitRow& row);

    std::vector<double> probs_;
    Top2 top_;
};

/// Temperature-free softmax with max subtraction.
inline ProbRow softmax(const LogitRow& row) {
    const auto logits = row.values();
    if (logits.size() < 2) throw Error(ErrorCode::VocabTooSmall, "softmax needs at least two logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        probs[v] = std::exp(logits[v] - m);
        z += probs[v];
    }
    for (double& p : probs) p /= z;
    return ProbRow(std::move(probs));
}

/// r = p1 / (p2 + eps). Near 1 means two candidates are tied; large means committed.
inline double confidence_ratio(const ProbRow& row, double eps = kDefaultEps) {
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be positive");
    return row.p1() / (row.p2() + eps);
}

/// A probability row tagged with its absolute sequence position.
struct PositionRow {
    std::size_t position = 0;
    ProbRow row;
};

} // namespace dlm
