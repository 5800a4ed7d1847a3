#pragma once

// JSON run configuration. Parsing fills every default, so to_json() of a
// parsed config is the fully resolved form that gets embedded in run
// summaries; feeding it back reproduces the run.
//
//   {
//     "denoiser": {"kind": "oracle" | "coupled" | "replay", ...},
//     "policy":   {"kind": "jot", "tau_max": 90, "tau_min": 1,
//                  "spatial": {"gamma": 0.5, "window": 8} | null, ...},
//     "schedule": {"total_steps": 256, "gen_len": 256, "block_size": null},
//     "seeds":    [0, 1, 2],
//     "output":   "out/run",
//     "sweep":    {"tau_max": [60, 90, 120], "gamma": [0.3, 0.5], ...}   // optional
//   }

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "dlmdecode/core.hpp"
#include "dlmdecode/denoiser.hpp"
#include "dlmdecode/policy.hpp"
#include "dlmdecode/scheduler.hpp"

namespace dlm {

enum class DenoiserKind { Oracle, Coupled, Replay };

struct DenoiserConfig {
    DenoiserKind kind = DenoiserKind::Oracle;
    std::uint32_t vocab_size = 32;
    std::uint32_t mask_id = 31;
    std::size_t prompt_len = 0;

    // oracle
    double pre_ratio = 1.0;
    double post_ratio = 1000.0;
    std::uint32_t stabilize_min = 1;
    std::uint32_t stabilize_max = 0; // 0 resolves to total_steps
    std::vector<std::uint32_t> stabilize_steps; // explicit per-position steps; overrides min/max

    // coupled
    double base_ratio = 50.0;
    double gain = 2.0;
    std::size_t coupling_window = 4;
    double easy_fraction = 0.0;
    double easy_boost = 20.0;

    // replay
    std::string path;
};

struct SweepGrid {
    std::optional<std::vector<double>> tau_max;
    std::optional<std::vector<double>> tau_min;
    std::optional<std::vector<double>> gamma;
    std::optional<std::vector<std::size_t>> window;
    std::optional<bool> spatial;
};

struct RunConfig {
    DenoiserConfig denoiser;
    PolicyConfig policy;
    ScheduleConfig schedule;
    std::vector<std::uint64_t> seeds{0};
    std::string output = "dlmdecode";
    SweepGrid sweep;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::ConfigError, field + ": " + msg);
}

template <typename T>
struct is_unsigned_vector : std::false_type {};
template <typename U>
struct is_unsigned_vector<std::vector<U>> : std::bool_constant<std::is_unsigned_v<U> && !std::is_same_v<U, bool>> {};

inline bool non_negative_integer(const nlohmann::json& v) {
    return v.is_number_integer() && (v.is_number_unsigned() || v.get<std::int64_t>() >= 0);
}

template <typename T>
T field_or(const nlohmann::json& obj, const char* key, const std::string& path, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!non_negative_integer(obj.at(key))) config_fail(path + "." + key, "must be a non-negative integer");
    }
    if constexpr (is_unsigned_vector<T>::value) {
        if (!obj.at(key).is_array()) config_fail(path + "." + key, "must be a list of non-negative integers");
        for (const auto& v : obj.at(key))
            if (!non_negative_integer(v)) config_fail(path + "." + key, "entries must be non-negative integers");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        config_fail(path + "." + key, std::string("wrong type (") + e.what() + ")");
    }
}

inline const nlohmann::json& object_at(const nlohmann::json& obj, const char* key, const std::string& path) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!obj.contains(key) || obj.at(key).is_null()) return empty;
    if (!obj.at(key).is_object()) config_fail(path + "." + key, "must be an object");
    return obj.at(key);
}

inline void check_unknown(const nlohmann::json& obj, const std::string& path,
                          std::initializer_list<const char*> known) {
    for (const auto& [k, v] : obj.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) config_fail(path + "." + k, "unknown field");
    }
}

template <typename T>
std::optional<std::vector<T>> axis(const nlohmann::json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    std::vector<T> v;
    try {
        v = obj.at(key).get<std::vector<T>>();
    } catch (const nlohmann::json::exception&) {
        config_fail(path + "." + key, "must be a list of numbers");
    }
    if (v.empty()) config_fail(path + "." + key, "sweep axis is empty");
    return v;
}

} // namespace detail

inline DenoiserConfig parse_denoiser(const nlohmann::json& j) {
    using detail::config_fail;
    using detail::field_or;
    const std::string p = "denoiser";
    detail::check_unknown(j, p,
                          {"kind", "vocab_size", "mask_id", "prompt_len", "pre_ratio", "post_ratio",
                           "stabilize_min", "stabilize_max", "stabilize_steps", "base_ratio", "gain",
                           "coupling_window", "easy_fraction", "easy_boost", "path"});
    DenoiserConfig d;
    const auto kind = field_or<std::string>(j, "kind", p, "oracle");
    if (kind == "oracle")
        d.kind = DenoiserKind::Oracle;
    else if (kind == "coupled")
        d.kind = DenoiserKind::Coupled;
    else if (kind == "replay")
        d.kind = DenoiserKind::Replay;
    else
        config_fail(p + ".kind", "expected oracle, coupled or replay, got '" + kind + "'");

    d.vocab_size = field_or<std::uint32_t>(j, "vocab_size", p, d.vocab_size);
    if (d.vocab_size < 3) config_fail(p + ".vocab_size", "must be >= 3");
    d.mask_id = field_or<std::uint32_t>(j, "mask_id", p, d.vocab_size - 1);
    if (d.mask_id >= d.vocab_size) config_fail(p + ".mask_id", "must be < vocab_size");
    d.prompt_len = field_or<std::size_t>(j, "prompt_len", p, d.prompt_len);

    d.pre_ratio = field_or<double>(j, "pre_ratio", p, d.pre_ratio);
    d.post_ratio = field_or<double>(j, "post_ratio", p, d.post_ratio);
    if (!(d.pre_ratio >= 1.0)) config_fail(p + ".pre_ratio", "must be >= 1");
    if (!(d.post_ratio > d.pre_ratio)) config_fail(p + ".post_ratio", "must exceed pre_ratio");
    d.stabilize_min = field_or<std::uint32_t>(j, "stabilize_min", p, d.stabilize_min);
    d.stabilize_max = field_or<std::uint32_t>(j, "stabilize_max", p, d.stabilize_max);
    d.stabilize_steps = field_or<std::vector<std::uint32_t>>(j, "stabilize_steps", p, {});
    if (d.stabilize_min < 1) config_fail(p + ".stabilize_min", "must be >= 1");
    if (d.stabilize_max != 0 && d.stabilize_max < d.stabilize_min)
        config_fail(p + ".stabilize_max", "must be >= stabilize_min");
    for (auto s : d.stabilize_steps)
        if (s < 1) config_fail(p + ".stabilize_steps", "entries must be >= 1");

    d.base_ratio = field_or<double>(j, "base_ratio", p, d.base_ratio);
    d.gain = field_or<double>(j, "gain", p, d.gain);
    d.coupling_window = field_or<std::size_t>(j, "coupling_window", p, d.coupling_window);
    d.easy_fraction = field_or<double>(j, "easy_fraction", p, d.easy_fraction);
    d.easy_boost = field_or<double>(j, "easy_boost", p, d.easy_boost);
    if (!(d.base_ratio >= 1.0)) config_fail(p + ".base_ratio", "must be >= 1");
    if (!(d.gain >= 0.0)) config_fail(p + ".gain", "must be >= 0");
    if (d.coupling_window < 1) config_fail(p + ".coupling_window", "must be >= 1");
    if (!(d.easy_fraction >= 0.0 && d.easy_fraction <= 1.0)) config_fail(p + ".easy_fraction", "must lie in [0,1]");
    if (!(d.easy_boost >= 1.0)) config_fail(p + ".easy_boost", "must be >= 1");

    d.path = field_or<std::string>(j, "path", p, "");
    if (d.kind == DenoiserKind::Replay && d.path.empty()) config_fail(p + ".path", "required for replay");
    return d;
}

inline PolicyConfig parse_policy(const nlohmann::json& j) {
    using detail::config_fail;
    using detail::field_or;
    const std::string p = "policy";
    detail::check_unknown(j, p,
                          {"kind", "tau_max", "tau_min", "spatial", "eps", "prophet_gap", "kl_delta", "kl_window"});
    PolicyConfig c;
    const auto kind = field_or<std::string>(j, "kind", p, "jot");
    const auto parsed = parse_policy_kind(kind);
    if (!parsed) config_fail(p + ".kind", "expected jot, prophet, kl or none, got '" + kind + "'");
    c.kind = *parsed;
    c.tau_max = field_or<double>(j, "tau_max", p, c.tau_max);
    c.tau_min = field_or<double>(j, "tau_min", p, c.tau_min);
    c.eps = field_or<double>(j, "eps", p, c.eps);
    c.prophet_gap = field_or<double>(j, "prophet_gap", p, c.prophet_gap);
    c.kl_delta = field_or<double>(j, "kl_delta", p, c.kl_delta);
    c.kl_window = field_or<std::size_t>(j, "kl_window", p, c.kl_window);
    if (!(c.tau_max > 0.0)) config_fail(p + ".tau_max", "must be > 0");
    if (!(c.tau_min > 0.0)) config_fail(p + ".tau_min", "must be > 0");
    if (c.tau_min > c.tau_max) config_fail(p + ".tau_min", "must be <= tau_max");
    if (!(c.eps > 0.0)) config_fail(p + ".eps", "must be > 0");
    if (!(c.prophet_gap >= 0.0)) config_fail(p + ".prophet_gap", "must be >= 0");
    if (!(c.kl_delta >= 0.0)) config_fail(p + ".kl_delta", "must be >= 0");
    if (c.kl_window < 1) config_fail(p + ".kl_window", "must be >= 1");

    if (j.contains("spatial") && j.at("spatial").is_null()) {
        c.spatial.reset();
    } else if (j.contains("spatial") && j.at("spatial").is_boolean()) {
        if (!j.at("spatial").get<bool>()) c.spatial.reset();
    } else {
        const auto& s = detail::object_at(j, "spatial", p);
        detail::check_unknown(s, p + ".spatial", {"gamma", "window"});
        const auto gamma = field_or<double>(s, "gamma", p + ".spatial", 0.5);
        const auto window = field_or<std::size_t>(s, "window", p + ".spatial", 8);
        if (!(gamma > 0.0 && gamma < 1.0))
            config_fail(p + ".spatial.gamma", "must lie in the open interval (0,1)");
        if (window < 1) config_fail(p + ".spatial.window", "must be >= 1");
        c.spatial = SpatialConfig(gamma, window);
    }
    return c;
}

inline ScheduleConfig parse_schedule(const nlohmann::json& j) {
    using detail::config_fail;
    using detail::field_or;
    const std::string p = "schedule";
    detail::check_unknown(j, p, {"total_steps", "gen_len", "block_size"});
    ScheduleConfig s;
    s.total_steps = field_or<std::uint32_t>(j, "total_steps", p, s.total_steps);
    s.gen_len = field_or<std::size_t>(j, "gen_len", p, s.gen_len);
    if (j.contains("block_size") && !j.at("block_size").is_null())
        s.block_size = field_or<std::size_t>(j, "block_size", p, 1);
    if (s.total_steps < 1) config_fail(p + ".total_steps", "must be >= 1");
    if (s.gen_len < 1) config_fail(p + ".gen_len", "must be >= 1");
    if (s.block_size && *s.block_size < 1) config_fail(p + ".block_size", "must be >= 1");
    if (s.block_count() > s.total_steps) config_fail(p + ".total_steps", "must be >= the number of blocks");
    return s;
}

inline SweepGrid parse_sweep(const nlohmann::json& j) {
    const std::string p = "sweep";
    detail::check_unknown(j, p, {"tau_max", "tau_min", "gamma", "window", "spatial"});
    SweepGrid g;
    g.tau_max = detail::axis<double>(j, "tau_max", p);
    g.tau_min = detail::axis<double>(j, "tau_min", p);
    g.gamma = detail::axis<double>(j, "gamma", p);
    g.window = detail::axis<std::size_t>(j, "window", p);
    if (j.contains("spatial")) g.spatial = detail::field_or<bool>(j, "spatial", p, true);
    return g;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) detail::config_fail("<root>", "config must be a JSON object");
    detail::check_unknown(j, "<root>", {"denoiser", "policy", "schedule", "seeds", "output", "sweep"});
    RunConfig c;
    c.denoiser = parse_denoiser(detail::object_at(j, "denoiser", "<root>"));
    c.policy = parse_policy(detail::object_at(j, "policy", "<root>"));
    c.schedule = parse_schedule(detail::object_at(j, "schedule", "<root>"));
    c.seeds = detail::field_or<std::vector<std::uint64_t>>(j, "seeds", "<root>", c.seeds);
    if (c.seeds.empty()) detail::config_fail("seeds", "must be non-empty");
    c.output = detail::field_or<std::string>(j, "output", "<root>", c.output);
    if (c.output.empty()) detail::config_fail("output", "must be non-empty");
    c.sweep = parse_sweep(detail::object_at(j, "sweep", "<root>"));

    const auto& d = c.denoiser;
    if (!d.stabilize_steps.empty() && d.stabilize_steps.size() != c.schedule.gen_len)
        detail::config_fail("denoiser.stabilize_steps", "length must equal schedule.gen_len");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) detail::config_fail("<file>", "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        detail::config_fail("<file>", std::string("invalid JSON: ") + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json to_json(const DenoiserConfig& d) {
    nlohmann::json j;
    switch (d.kind) {
    case DenoiserKind::Oracle: j["kind"] = "oracle"; break;
    case DenoiserKind::Coupled: j["kind"] = "coupled"; break;
    case DenoiserKind::Replay: j["kind"] = "replay"; break;
    }
    j["vocab_size"] = d.vocab_size;
    j["mask_id"] = d.mask_id;
    j["prompt_len"] = d.prompt_len;
    j["pre_ratio"] = d.pre_ratio;
    j["post_ratio"] = d.post_ratio;
    j["stabilize_min"] = d.stabilize_min;
    j["stabilize_max"] = d.stabilize_max;
    j["stabilize_steps"] = d.stabilize_steps;
    j["base_ratio"] = d.base_ratio;
    j["gain"] = d.gain;
    j["coupling_window"] = d.coupling_window;
    j["easy_fraction"] = d.easy_fraction;
    j["easy_boost"] = d.easy_boost;
    j["path"] = d.path;
    return j;
}

inline nlohmann::json to_json(const PolicyConfig& c) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(c.kind));
    j["tau_max"] = c.tau_max;
    j["tau_min"] = c.tau_min;
    if (c.spatial)
        j["spatial"] = {{"gamma", c.spatial->gamma()}, {"window", c.spatial->window()}};
    else
        j["spatial"] = nullptr;
    j["eps"] = c.eps;
    j["prophet_gap"] = c.prophet_gap;
    j["kl_delta"] = c.kl_delta;
    j["kl_window"] = c.kl_window;
    return j;
}

inline nlohmann::json to_json(const ScheduleConfig& s) {
    nlohmann::json j;
    j["total_steps"] = s.total_steps;
    j["gen_len"] = s.gen_len;
    if (s.block_size)
        j["block_size"] = *s.block_size;
    else
        j["block_size"] = nullptr;
    return j;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["denoiser"] = to_json(c.denoiser);
    j["policy"] = to_json(c.policy);
    j["schedule"] = to_json(c.schedule);
    j["seeds"] = c.seeds;
    j["output"] = c.output;
    return j;
}

} // namespace dlm
