// Command-line front end: one JSON config drives every pipeline; the
// subcommand (when given) overrides the config's experiment kind.
//
// Exit codes: 0 success, 2 configuration problems (bad JSON, unknown ids,
// unsamplable ensembles), 3 solver failures.

#include <cstdio>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "homlab/experiment.hpp"
#include "homlab/util.hpp"

using namespace homlab;

int main(int argc, char** argv) {
    CLI::App app{"homlab: numerical laboratory for stochastic homogenization on Lipschitz domains"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string out_dir;
    int workers = 1;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    CLI::Option* out_opt = app.add_option("--out", out_dir, "output directory (overrides config)");
    CLI::Option* workers_opt =
        app.add_option("--workers", workers, "worker threads (overrides config)");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed (overrides config)");

    const std::vector<std::pair<std::string, std::string>> kinds = {
        {"field", "sample and export coefficient fields"},
        {"correctors", "corrector solves and per-sample effective tensors"},
        {"homogenize", "oscillating vs effective solves with rate fits"},
        {"minrad", "minimal-radius fields and moment reports"},
        {"cz", "ball-averaged gradient functionals"},
        {"fluctuation", "commutator samples and variance scaling"},
        {"report", "rebuild reports from existing task files (no solves)"},
    };
    bool kind_set = false;
    ExperimentKind cli_kind = ExperimentKind::all;
    for (const auto& [name, desc] : kinds) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->callback([&kind_set, &cli_kind, name = name]() {
            kind_set = true;
            cli_kind = experiment_kind_from_name(name);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = config_from_file(config_path);
        if (kind_set) cfg.experiment = cli_kind;
        if (out_opt->count() > 0) cfg.outputs = out_dir;
        if (workers_opt->count() > 0) cfg.workers = workers;
        if (seed_opt->count() > 0) cfg.ensemble.master_seed = seed;
        validate_config(cfg);

        const ExperimentResult result = run(cfg);
        std::printf("%s: %d tasks run, %d skipped, %.1f s\n",
                    experiment_kind_name(result.experiment), result.tasks_run,
                    result.tasks_skipped, result.wall_seconds);
        for (const auto& p : result.csv_paths) std::printf("  csv: %s\n", p.c_str());
        for (const auto& p : result.report_paths) std::printf("  report: %s\n", p.c_str());
        return 0;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const embedding_error& e) {
        std::fprintf(stderr, "config error (ensemble not samplable): %s\n", e.what());
        return 2;
    } catch (const solver_error& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
