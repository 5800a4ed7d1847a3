#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dlmdecode/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Masked diffusion decoding engine with token-level early exit"};
    app.require_subcommand(1);

    std::string config;

    auto* run = app.add_subcommand("run", "decode every seed in a config and write a run summary");
    run->add_option("config", config, "JSON run config")->required();

    dlm::SweepGrid grid;
    std::vector<double> tau_max, tau_min, gamma;
    std::vector<std::size_t> window;
    bool no_spatial = false;
    auto* sweep = app.add_subcommand("sweep", "run the Cartesian product of policy parameter axes");
    sweep->add_option("config", config, "JSON run config")->required();
    auto* o_tmax = sweep->add_option("--tau-max", tau_max, "tau_max axis")->delimiter(',');
    auto* o_tmin = sweep->add_option("--tau-min", tau_min, "tau_min axis")->delimiter(',');
    auto* o_gamma = sweep->add_option("--gamma", gamma, "gamma axis")->delimiter(',');
    auto* o_window = sweep->add_option("--window", window, "window axis")->delimiter(',');
    sweep->add_flag("--no-spatial", no_spatial, "sweep scalar thresholds with spatial modulation off");

    auto* dynamics = app.add_subcommand("dynamics", "baseline vs configured policy confidence dynamics");
    dynamics->add_option("config", config, "JSON run config")->required();

    dlm::cli::ReplayVerifyOptions rv;
    std::uint32_t steps = 0;
    std::size_t block = 0;
    auto* verify = app.add_subcommand("replay-verify", "replay a trace with no early exit and compare tokens");
    verify->add_option("trace", rv.trace_path, "trace file")->required();
    verify->add_option("--expected", rv.expected_path, "JSON file with {\"tokens\": [...]}");
    auto* o_steps = verify->add_option("--steps", steps, "configured step count (default: recorded steps)");
    auto* o_block = verify->add_option("--block-size", block, "block size for semi-autoregressive replay");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : dlm::cli::kExitConfig;
    }

    if (*run) return dlm::cli::cmd_run(config, std::cout, std::cerr);
    if (*sweep) {
        if (o_tmax->count()) grid.tau_max = tau_max;
        if (o_tmin->count()) grid.tau_min = tau_min;
        if (o_gamma->count()) grid.gamma = gamma;
        if (o_window->count()) grid.window = window;
        if (no_spatial) grid.spatial = false;
        return dlm::cli::cmd_sweep(config, grid, std::cout, std::cerr);
    }
    if (*dynamics) return dlm::cli::cmd_dynamics(config, std::cout, std::cerr);
    if (*verify) {
        if (o_steps->count()) rv.steps = steps;
        if (o_block->count()) rv.block_size = block;
        return dlm::cli::cmd_replay_verify(rv, std::cout, std::cerr);
    }
    return dlm::cli::kExitConfig;
}
