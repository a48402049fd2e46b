#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "phaselab/commands.hpp"

int main(int argc, char** argv) {
    using namespace phaselab;
    CLI::App app{"phaselab: beta sweeps, hysteresis runs and phase-diagram reports for a toy DPO setup"};
    app.require_subcommand(1);

    std::string config, out, seeds, probe_pack, schedule, log_dir, action;
    std::size_t workers = 0;

    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON plan config");
        cmd->add_option("--out", out, "output directory (overrides output_dir)");
        cmd->add_option("--workers", workers, "concurrent runs")->check(CLI::PositiveNumber);
        cmd->add_option("--seeds", seeds, "comma-separated seed list");
        cmd->add_option("--probe-pack", probe_pack, "builtin, associative, builtin+associative or a JSON path");
        cmd->add_option("--schedule", schedule, "canonical or fast")->check(CLI::IsMember({"canonical", "fast"}));
    };

    auto* sweep = app.add_subcommand("sweep", "run a frozen-configuration beta sweep");
    add_run_flags(sweep);
    auto* hysteresis = app.add_subcommand("hysteresis", "run the quench/anneal path comparison");
    add_run_flags(hysteresis);
    auto* stress = app.add_subcommand("stress", "run a learning-rate x beta grid");
    add_run_flags(stress);
    auto* analyze = app.add_subcommand("analyze", "build tables, correlations and plots from run logs");
    analyze->add_option("log_dir", log_dir, "directory of run logs")->required();
    analyze->add_option("--out", out, "report directory (default <log_dir>/analysis)");
    auto* probes = app.add_subcommand("probes", "list or dump a probe pack");
    probes->add_option("action", action, "list or dump")->required()->check(CLI::IsMember({"list", "dump"}));
    probes->add_option("--probe-pack", probe_pack, "pack id or JSON path");
    probes->add_option("--out", out, "file for dump (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    CommandOptions opts;
    if (!config.empty()) opts.config = config;
    if (!out.empty()) opts.out = out;
    if (workers > 0) opts.workers = workers;
    if (!probe_pack.empty()) opts.probe_pack = probe_pack;
    if (!schedule.empty()) opts.schedule = schedule;
    try {
        if (!seeds.empty()) opts.seeds = parse_seed_list(seeds);
        if (sweep->parsed()) return cmd_sweep(opts, std::cout, std::cerr);
        if (hysteresis->parsed()) return cmd_hysteresis(opts, std::cout, std::cerr);
        if (stress->parsed()) return cmd_stress(opts, std::cout, std::cerr);
        if (analyze->parsed()) return cmd_analyze(log_dir, opts, std::cout, std::cerr);
        if (probes->parsed()) return cmd_probes(action, opts, std::cout, std::cerr);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPartialFailure;
    }
    return kExitConfigError;
}
