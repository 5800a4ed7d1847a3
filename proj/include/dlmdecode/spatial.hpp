#pragma once

// Geometric-kernel context weights. A generated position i collects
// gamma^|i-j| from every unmasked cell j (prompt or finalized) with
// 1 <= |i-j| <= window, and the normalized weight phi lowers that
// position's exit threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dlmdecode/core.hpp"

namespace dlm {

class SpatialConfig {
public:
    SpatialConfig(double gamma, std::size_t window) : gamma_(gamma), window_(window) {
        if (!(gamma > 0.0 && gamma < 1.0))
            throw Error(ErrorCode::InvalidArgument, "gamma must lie in the open interval (0,1)");
        if (window < 1) throw Error(ErrorCode::InvalidArgument, "window must be >= 1");
    }

    double gamma() const noexcept { return gamma_; }
    std::size_t window() const noexcept { return window_; }

    friend bool operator==(const SpatialConfig&, const SpatialConfig&) = default;

private:
    double gamma_;
    std::size_t window_;
};

/// phi[k] belongs to absolute position first_position + k.
struct SpatialField {
    std::size_t first_position = 0;
    std::vector<double> phi;

    double at(std::size_t position) const { return phi.at(position - first_position); }

    static SpatialField zeros(std::size_t first_position, std::size_t n) {
        return SpatialField{first_position, std::vector<double>(n, 0.0)};
    }
};

namespace detail {

/// Taps gamma^1..gamma^D, index d-1.
inline std::vector<double> geometric_taps(const SpatialConfig& cfg) {
    std::vector<double> taps(cfg.window());
    double g = 1.0;
    for (auto& t : taps) {
        g *= cfg.gamma();
        t = g;
    }
    return taps;
}

inline double one_side_sum(std::span<const double> taps) {
    double s = 0.0;
    for (double t : taps) s += t;
    return s;
}

} // namespace detail

/// Largest attainable weight: both sides of the window fully unmasked.
/// Summed in the same order as spatial_weights so a saturated position
/// reaches exactly w_max.
inline double w_max(const SpatialConfig& cfg) {
    return 2.0 * detail::one_side_sum(detail::geometric_taps(cfg));
}

/// Weight per generated position, computed as a 1D convolution of the
/// unmasked indicator with the precomputed symmetric kernel (no center tap).
inline std::vector<double> spatial_weights(const DecodeState& state, const SpatialConfig& cfg) {
    const auto taps = detail::geometric_taps(cfg);
    const auto& cells = state.cells();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(cells.size());
    const std::ptrdiff_t window = static_cast<std::ptrdiff_t>(cfg.window());

    std::vector<double> unmasked(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) unmasked[j] = cells[j].is_masked() ? 0.0 : 1.0;

    std::vector<double> w(state.gen_len(), 0.0);
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(state.prompt_len()); i < n; ++i) {
        double left = 0.0;
        double right = 0.0;
        const std::ptrdiff_t reach_left = std::min(window, i);
        const std::ptrdiff_t reach_right = std::min(window, n - 1 - i);
        for (std::ptrdiff_t d = 1; d <= reach_left; ++d) left += taps[d - 1] * unmasked[i - d];
        for (std::ptrdiff_t d = 1; d <= reach_right; ++d) right += taps[d - 1] * unmasked[i + d];
        w[static_cast<std::size_t>(i) - state.prompt_len()] = left + right;
    }
    return w;
}

/// phi = min(1, w / w_max). w_max is global, so edges never saturate from one side.
inline SpatialField softening(std::span<const double> weights, const SpatialConfig& cfg,
                              std::size_t first_position = 0) {
    const double wm = w_max(cfg);
    SpatialField field{first_position, std::vector<double>(weights.size())};
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] < 0.0) throw Error(ErrorCode::InvalidArgument, "spatial weights must be >= 0");
        field.phi[k] = std::clamp(weights[k] / wm, 0.0, 1.0);
    }
    return field;
}

inline SpatialField spatial_field(const DecodeState& state, const SpatialConfig& cfg) {
    const auto w = spatial_weights(state, cfg);
    return softening(w, cfg, state.prompt_len());
}

} // namespace dlm
