#pragma once

// Subcommand bodies for the dlmdecode executable. Each returns the process
// exit code:
//
//   0  success
//   1  configuration error (message names the offending field)
//   2  denoiser or trace error
//   3  replay-verify ran but the replayed tokens differ from the recording
//
// Output files use the config's "output" prefix:
//
//   run       <prefix>.summary.json, <prefix>.seed<S>.trace.csv
//   sweep     <prefix>.sweep.csv, <prefix>.sweep.json
//   dynamics  <prefix>.dynamics.csv, <prefix>.dynamics.json

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlmdecode/config.hpp"
#include "dlmdecode/harness.hpp"
#include "dlmdecode/metrics.hpp"
#include "dlmdecode/tracefmt.hpp"

namespace dlm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDenoiser = 2;
inline constexpr int kExitMismatch = 3;

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::ConfigError, "output: cannot write " + path);
    out << text;
}

inline int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return kExitConfig;
    default: return kExitDenoiser;
    }
}

/// Runs `body`, mapping library errors onto the exit-code contract.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitDenoiser;
    }
}

} // namespace detail

inline int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        const RunConfig cfg = load_run_config(config_path);
        const RunSummary summary = run_experiment(cfg);
        auto j = summary_json(summary);
        for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
            j["sequences"][k]["seed"] = cfg.seeds[k];
            detail::write_text(cfg.output + ".seed" + std::to_string(cfg.seeds[k]) + ".trace.csv",
                               trace_csv(summary.traces[k]));
        }
        detail::write_text(cfg.output + ".summary.json", j.dump(2) + "\n");
        out << "policy=" << summary.policy_id << " step_speedup=" << format_real(step_speedup(summary))
            << " mean_actual_steps=" << format_real(mean_actual_steps(summary)) << '\n';
        return kExitOk;
    });
}

/// Flag overrides replace the matching axes of the config's "sweep" block.
inline int cmd_sweep(const std::string& config_path, const SweepGrid& overrides, std::ostream& out,
                     std::ostream& err) {
    return detail::guarded(err, [&] {
        const RunConfig cfg = load_run_config(config_path);
        SweepGrid grid = cfg.sweep;
        if (overrides.tau_max) grid.tau_max = overrides.tau_max;
        if (overrides.tau_min) grid.tau_min = overrides.tau_min;
        if (overrides.gamma) grid.gamma = overrides.gamma;
        if (overrides.window) grid.window = overrides.window;
        if (overrides.spatial) grid.spatial = overrides.spatial;
        if ((grid.tau_max && grid.tau_max->empty()) || (grid.tau_min && grid.tau_min->empty()) ||
            (grid.gamma && grid.gamma->empty()) || (grid.window && grid.window->empty()))
            throw Error(ErrorCode::ConfigError, "sweep: empty axis");

        const auto summaries = run_sweep(cfg, grid);
        const std::string table = sweep_table(summaries);
        nlohmann::json j = nlohmann::json::array();
        for (const auto& s : summaries) {
            auto row = summary_json(s);
            row.erase("sequences");
            j.push_back(std::move(row));
        }
        detail::write_text(cfg.output + ".sweep.csv", table);
        detail::write_text(cfg.output + ".sweep.json", j.dump(2) + "\n");
        out << table;
        return kExitOk;
    });
}

inline int cmd_dynamics(const std::string& config_path, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        const RunConfig cfg = load_run_config(config_path);
        const auto r = run_dynamics(cfg);
        const std::string csv = dynamics_csv(r.baseline.traces, r.policy.traces);
        nlohmann::json j;
        j["baseline"] = summary_json(r.baseline);
        j["policy"] = summary_json(r.policy);
        detail::write_text(cfg.output + ".dynamics.csv", csv);
        detail::write_text(cfg.output + ".dynamics.json", j.dump(2) + "\n");
        out << csv;
        return kExitOk;
    });
}

struct ReplayVerifyOptions {
    std::string trace_path;
    std::optional<std::string> expected_path; // JSON {"tokens": [...]} of generated tokens
    std::optional<std::uint32_t> steps;       // configured T; defaults to recorded_steps
    std::optional<std::size_t> block_size;
};

struct RecordedRun {
    std::vector<TokenId> tokens;
    std::vector<std::vector<std::size_t>> transfers; // per step, ascending
};

/// Reconstructs a masked-only recording's decisions: a position recorded at
/// step k but absent at step k+1 was unmasked at step k, to the argmax of its
/// recorded logits. Everything in the last block is unmasked at the last step.
inline RecordedRun infer_recorded_run(const trace::TraceFile& t) {
    const auto& h = t.header;
    if (h.all_positions())
        throw Error(ErrorCode::TraceMismatch, "all-positions traces need --expected tokens");
    if (t.blocks.empty()) throw Error(ErrorCode::TraceMismatch, "trace has no recorded steps");
    RecordedRun r;
    r.tokens.assign(h.gen_len, TokenId{});
    std::vector<bool> seen(h.gen_len, false);
    for (std::size_t k = 0; k < t.blocks.size(); ++k) {
        const auto& b = t.blocks[k];
        std::set<std::uint32_t> next;
        if (k + 1 < t.blocks.size()) next.insert(t.blocks[k + 1].positions.begin(), t.blocks[k + 1].positions.end());
        std::vector<std::size_t> unmasked;
        for (std::size_t i = 0; i < b.positions.size(); ++i) {
            if (next.contains(b.positions[i])) continue;
            const auto row = b.row(i, h.vocab_size);
            std::vector<double> logits(row.begin(), row.end());
            r.tokens[b.positions[i] - h.prompt_len] = top2(logits).argmax;
            seen[b.positions[i] - h.prompt_len] = true;
            unmasked.push_back(b.positions[i]);
        }
        r.transfers.push_back(std::move(unmasked));
    }
    for (bool s : seen)
        if (!s) throw Error(ErrorCode::TraceMismatch, "recording leaves some positions masked");
    return r;
}

inline int cmd_replay_verify(const ReplayVerifyOptions& opt, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() -> int {
        auto file = std::make_shared<const trace::TraceFile>(trace::load_trace(opt.trace_path));
        const auto& h = file->header;

        RecordedRun expected;
        if (opt.expected_path) {
            std::ifstream in(*opt.expected_path);
            if (!in) throw Error(ErrorCode::ConfigError, "expected: cannot open " + *opt.expected_path);
            nlohmann::json j;
            try {
                in >> j;
                for (auto v : j.at("tokens").get<std::vector<std::uint32_t>>()) expected.tokens.push_back(TokenId{v});
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::ConfigError, std::string("expected.tokens: ") + e.what());
            }
            if (expected.tokens.size() != h.gen_len)
                throw Error(ErrorCode::TraceMismatch, "expected token count differs from gen_len");
        } else {
            expected = infer_recorded_run(*file);
        }

        ScheduleConfig sched;
        sched.gen_len = h.gen_len;
        sched.total_steps = opt.steps.value_or(std::max<std::uint32_t>(h.recorded_steps, 1));
        sched.block_size = opt.block_size;
        try {
            sched.validate();
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigError, std::string("schedule: ") + e.what());
        }

        // Prompt token values never reach a replay backend.
        const std::vector<TokenId> prompt(h.prompt_len, TokenId{0});
        const auto result = decode(ReplayDenoiser(file), DecodeState(prompt, h.gen_len), PolicyConfig::none(), sched);

        bool ok = result.trace.final_tokens == expected.tokens;
        if (ok && !expected.transfers.empty()) {
            ok = result.trace.steps.size() == expected.transfers.size();
            for (std::size_t k = 0; ok && k < expected.transfers.size(); ++k) {
                auto got = result.trace.steps[k].transferred_positions;
                std::sort(got.begin(), got.end());
                ok = got == expected.transfers[k];
            }
        }
        if (!ok) {
            out << "replay-verify: MISMATCH after " << result.trace.actual_steps << " steps\n";
            return kExitMismatch;
        }
        out << "replay-verify: OK tokens=" << expected.tokens.size() << " steps=" << result.trace.actual_steps
            << '\n';
        return kExitOk;
    });
}

} // namespace dlm::cli
