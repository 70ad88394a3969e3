#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncap/filterbank.hpp"
#include "dyncap/trainer.hpp"

namespace dyncap::exp {

// Configuration mistakes (unknown keys, bad values, unusable output
// directory). The CLI maps these to exit code 1, runtime failures to 2.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
    std::string experiment = "filterbank";
    fb::FilterBankSpec fb;
    train::TrainConfig train;
    // Unset means the experiment default: 1.0, except beta_sweep's 1e-3.
    std::optional<double> l1_scale;
    std::vector<double> beta_list{0.0, 2e-5, 3e-5, 6e-5};
    std::vector<double> overparam_list{2.0, 4.0, 6.0, 8.0, 10.0};
    std::string out_dir = "out";
    bool overwrite = false;

    ExperimentConfig() { fb.family = fb::Family::bark; }
};

// One key=value assignment; throws ConfigError on unknown keys or bad values.
void apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Plain-text config: one key=value per line, '#' comments. Errors name the line.
void load_config_file(ExperimentConfig& cfg, const std::string& path);
// Checks everything a run will rely on, including the filter bank build,
// before any training starts.
void validate_config(const ExperimentConfig& cfg);

// Single training run estimating a hidden filter bank from white noise with
// a doubly overparameterized gated layer. Artifacts: history.csv,
// filterbank_{initial,final,target}.csv, model.dcm, summary.txt.
void run_filterbank(const ExperimentConfig& cfg);

// Grid of runs over beta_list x overparam_list. Artifacts: sweep.csv
// (beta, in_factor, out_factor, final_l1) and sweep.svg. Grid points may run
// in parallel worker threads (DYNCAP_THREADS caps them) with identical
// results to a serial pass.
void run_beta_sweep(const ExperimentConfig& cfg);

// Gated layer feeding a width-adaptive follower on a low-rank regression
// target; verifies that consolidation preserves evaluation outputs.
// Artifacts: history.csv, model.dcm, summary.txt.
void run_acl_chain(const ExperimentConfig& cfg);

// Dispatches on cfg.experiment. On failure a ".failed" marker with the
// error text is left in the output directory and the exception rethrown.
void run_experiment(const ExperimentConfig& cfg);

}  // namespace dyncap::exp
