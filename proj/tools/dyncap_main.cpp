#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "dyncap/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dyncap: dynamic-capacity training experiments"};

    dyncap::exp::ExperimentConfig cfg;
    std::string config_path;
    std::string experiment;
    std::uint64_t seed = 0;
    double beta = 0.0;
    std::size_t steps = 0;
    double lambda_min = 0.0;
    std::string out_dir;
    bool overwrite = false;

    app.add_option("--experiment", experiment,
                   "experiment to run: filterbank, beta_sweep, or acl_chain");
    app.add_option("--config", config_path, "key=value config file, applied before flags");
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--beta", beta, "capacity penalty weight (for sweeps: the single beta)");
    app.add_option("--steps", steps,
                   "total training steps; phase 1 is clipped to fit under this");
    app.add_option("--lambda-min", lambda_min, "lower clamp for the per-unit gates");
    app.add_option("--out-dir", out_dir, "output directory for artifacts");
    app.add_flag("--overwrite", overwrite, "reuse a non-empty output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (!config_path.empty()) {
            dyncap::exp::load_config_file(cfg, config_path);
        }
        // Flags win over the config file.
        if (app.count("--experiment") > 0) {
            cfg.experiment = experiment;
        }
        if (app.count("--seed") > 0) {
            cfg.train.seed = seed;
        }
        if (app.count("--beta") > 0) {
            cfg.train.beta = beta;
            cfg.beta_list = {beta};
        }
        if (app.count("--steps") > 0) {
            cfg.train.total_steps = steps;
            cfg.train.phase1_steps = std::min(cfg.train.phase1_steps, steps);
        }
        if (app.count("--lambda-min") > 0) {
            cfg.train.lambda_min = lambda_min;
        }
        if (app.count("--out-dir") > 0) {
            cfg.out_dir = out_dir;
        }
        if (overwrite) {
            cfg.overwrite = true;
        }

        dyncap::exp::validate_config(cfg);
        std::printf("running %s (seed %llu, %zu steps) -> %s\n", cfg.experiment.c_str(),
                    static_cast<unsigned long long>(cfg.train.seed), cfg.train.total_steps,
                    cfg.out_dir.c_str());
        std::fflush(stdout);
        dyncap::exp::run_experiment(cfg);
        std::printf("done: artifacts in %s\n", cfg.out_dir.c_str());
        return 0;
    } catch (const dyncap::exp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
