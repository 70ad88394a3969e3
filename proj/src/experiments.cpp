#include "dyncap/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>
#include <variant>

#include "dyncap/io.hpp"
#include "dyncap/kernels.hpp"
#include "dyncap/layers.hpp"
#include "dyncap/profiler.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/serialize.hpp"
#include "dyncap/svg.hpp"

namespace dyncap::exp {
namespace fs = std::filesystem;
namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos == value.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a number");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(value, &pos);
        if (pos == value.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as an integer");
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "yes" || value == "on") {
        return true;
    }
    if (value == "0" || value == "false" || value == "no" || value == "off") {
        return false;
    }
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a boolean");
}

std::vector<double> parse_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(value);
    while (std::getline(is, item, ',')) {
        out.push_back(parse_double(key, trim(item)));
    }
    if (out.empty()) {
        throw ConfigError("key '" + key + "': empty list");
    }
    return out;
}

std::size_t worker_count(std::size_t grid_size) {
    std::size_t n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("DYNCAP_THREADS")) {
        const std::uint64_t v = parse_u64("DYNCAP_THREADS", env);
        if (v == 0) {
            throw ConfigError("DYNCAP_THREADS must be a positive integer");
        }
        n = static_cast<std::size_t>(v);
    }
    return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(grid_size, 1));
}

fs::path prepare_out_dir(const ExperimentConfig& cfg) {
    const fs::path dir(cfg.out_dir);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) {
            throw ConfigError("output path '" + cfg.out_dir + "' is not a directory");
        }
        if (!cfg.overwrite && !fs::is_empty(dir)) {
            throw ConfigError("output directory '" + cfg.out_dir +
                              "' is not empty (pass --overwrite to reuse it)");
        }
    } else {
        std::error_code ec;
        if (!fs::create_directories(dir, ec)) {
            throw ConfigError("cannot create output directory '" + cfg.out_dir +
                              "': " + ec.message());
        }
    }
    fs::remove(dir / ".failed");
    return dir;
}

template <typename Fn>
void with_failure_marker(const fs::path& dir, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        try {
            io::write_text_file((dir / ".failed").string(), std::string(e.what()) + "\n");
        } catch (...) {
        }
        throw;
    }
}

void write_matrix_csv(const std::string& path, const Tensor& m, const std::string& col_prefix) {
    std::ostringstream os;
    os << "bin";
    for (std::size_t c = 0; c < m.dim(1); ++c) {
        os << "," << col_prefix << c;
    }
    os << "\n";
    for (std::size_t r = 0; r < m.dim(0); ++r) {
        os << r;
        for (std::size_t c = 0; c < m.dim(1); ++c) {
            os << "," << io::fmt(m.at(r, c));
        }
        os << "\n";
    }
    io::write_text_file(path, os.str());
}

// Filter-bank features of each frame, zero-padded to the gated width so the
// surplus units have nothing to explain but the penalty.
Tensor filter_targets(const Tensor& x, const Tensor& phi, std::size_t width) {
    const std::size_t rows = x.dim(0);
    const std::size_t bins = x.dim(1);
    const std::size_t n = phi.dim(1);
    Tensor feats({rows, n});
    kernels::matmul_nn(x.data().data(), phi.data().data(), feats.data().data(), rows, bins, n);
    Tensor padded = Tensor::zeros({rows, width});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            padded.at(r, j) = feats.at(r, j);
        }
    }
    return padded;
}

train::BatchFn filterbank_batches(fb::FilterBankSpec spec, Tensor phi, std::size_t width,
                                  std::size_t frames, RngStream rng) {
    return [=](std::size_t step) {
        Tensor x = fb::white_noise_spectrum(rng.substream(step), spec, frames);
        Tensor y = filter_targets(x, phi, width);
        return std::pair<Tensor, Tensor>{std::move(x), std::move(y)};
    };
}

void check_nonnegative_list(const std::vector<double>& xs, const char* name, double lo) {
    if (xs.empty()) {
        throw ConfigError(std::string(name) + " must not be empty");
    }
    for (double v : xs) {
        if (!std::isfinite(v) || v < lo) {
            throw ConfigError(std::string(name) + " entries must be finite and >= " +
                              io::fmt(lo));
        }
    }
}

}  // namespace

void apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "experiment") {
        cfg.experiment = value;
    } else if (key == "family") {
        try {
            cfg.fb.family = fb::family_from_string(value);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "n_filters") {
        cfg.fb.n_filters = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "fft_size") {
        cfg.fb.fft_size = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "sample_rate") {
        cfg.fb.sample_rate = parse_double(key, value);
    } else if (key == "steps" || key == "total_steps") {
        cfg.train.total_steps = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "phase1_steps") {
        cfg.train.phase1_steps = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "lr") {
        cfg.train.lr = parse_double(key, value);
    } else if (key == "beta") {
        cfg.train.beta = parse_double(key, value);
    } else if (key == "lambda_min") {
        cfg.train.lambda_min = parse_double(key, value);
    } else if (key == "l1_scale") {
        cfg.l1_scale = parse_double(key, value);
    } else if (key == "weight_decay") {
        cfg.train.weight_decay = parse_double(key, value);
    } else if (key == "seed") {
        cfg.train.seed = parse_u64(key, value);
    } else if (key == "batch_frames") {
        cfg.train.batch_frames = static_cast<std::size_t>(parse_u64(key, value));
    } else if (key == "beta_list") {
        cfg.beta_list = parse_list(key, value);
    } else if (key == "overparam_list") {
        cfg.overparam_list = parse_list(key, value);
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "overwrite") {
        cfg.overwrite = parse_bool(key, value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void load_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::string text;
    try {
        text = io::read_text_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        try {
            apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.experiment != "filterbank" && cfg.experiment != "beta_sweep" &&
        cfg.experiment != "acl_chain") {
        throw ConfigError("unknown experiment '" + cfg.experiment +
                          "' (use filterbank, beta_sweep, or acl_chain)");
    }
    if (cfg.out_dir.empty()) {
        throw ConfigError("out_dir must not be empty");
    }
    if (cfg.l1_scale && (!std::isfinite(*cfg.l1_scale) || *cfg.l1_scale < 0.0)) {
        throw ConfigError("l1_scale must be nonnegative");
    }
    if (cfg.train.total_steps > 0) {
        try {
            train::validate(cfg.train);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    if (cfg.experiment == "filterbank" || cfg.experiment == "beta_sweep") {
        try {
            fb::build_filterbank(cfg.fb);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    if (cfg.experiment == "beta_sweep") {
        check_nonnegative_list(cfg.beta_list, "beta_list", 0.0);
        check_nonnegative_list(cfg.overparam_list, "overparam_list", 1.0);
        worker_count(1);  // rejects a malformed DYNCAP_THREADS before any run
    }
}

void run_filterbank(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const fs::path dir = prepare_out_dir(cfg);
    with_failure_marker(dir, [&] {
        const fb::FilterBankSpec spec = cfg.fb;
        const Tensor phi = fb::build_filterbank(spec);
        const std::size_t n = spec.n_filters;
        const std::size_t width = 2 * n;
        train::TrainConfig tc = cfg.train;
        tc.l1_scale = cfg.l1_scale.value_or(1.0);

        nn::ModelGraph model;
        model.add_dynamic(spec.bins(), width, false);
        model.init_params(RngStream(tc.seed, 0));
        const Tensor initial = std::get<nn::DynamicLinear>(model.layer(0).impl).weight;

        const RngStream data_rng(tc.seed, 1);
        train::TrainHistory history;
        if (tc.total_steps > 0) {
            history = train::train_two_phase(
                model, filterbank_batches(spec, phi, width, tc.batch_frames, data_rng), tc,
                RngStream(tc.seed, 2));
        }

        // Evaluation frames live on the step-0 substream; training batches
        // use steps 1 and up.
        const Tensor eval_x = fb::white_noise_spectrum(data_rng.substream(0), spec, 256);
        const Tensor eval_y = filter_targets(eval_x, phi, width);

        const std::vector<std::size_t> kept = model.kept_units(0);
        const nn::ModelGraph slim = model.consolidate();
        const Tensor slim_out = slim.forward_eval(eval_x);
        Tensor padded_out = Tensor::zeros({eval_x.dim(0), width});
        for (std::size_t r = 0; r < eval_x.dim(0); ++r) {
            for (std::size_t j = 0; j < kept.size(); ++j) {
                padded_out.at(r, kept[j]) = slim_out.at(r, j);
            }
        }
        const double final_l1 = train::l1_loss_value(padded_out, eval_y);
        const double in_factor = fb::overparam_factor(static_cast<double>(width),
                                                      static_cast<double>(n));
        const double out_factor = fb::overparam_factor(static_cast<double>(kept.size()),
                                                       static_cast<double>(n));

        history.write_csv((dir / "history.csv").string());
        write_matrix_csv((dir / "filterbank_initial.csv").string(), initial, "f");
        write_matrix_csv((dir / "filterbank_final.csv").string(),
                         std::get<nn::FixedLinear>(slim.layer(0).impl).weight, "f");
        write_matrix_csv((dir / "filterbank_target.csv").string(), phi, "f");
        ser::save_model(slim, (dir / "model.dcm").string());

        std::ostringstream s;
        s << "filterbank experiment\n"
          << "family: " << fb::family_name(spec.family) << "\n"
          << "filters: " << n << "\n"
          << "fft size: " << spec.fft_size << " (" << spec.bins() << " bins)\n"
          << "gated width: " << width << "\n"
          << "steps: " << tc.total_steps << " (phase 1: " << tc.phase1_steps << ")\n"
          << "beta: " << io::fmt(tc.beta) << "\n"
          << "l1 scale: " << io::fmt(tc.l1_scale) << "\n"
          << "seed: " << tc.seed << "\n"
          << "consolidated width: " << kept.size() << "\n"
          << "final l1 (consolidated, 256 eval frames): " << io::fmt(final_l1) << "\n"
          << "in overparameterization factor: " << io::fmt(in_factor) << "\n"
          << "out overparameterization factor: " << io::fmt(out_factor) << "\n"
          << "capacity reduction: " << io::fmt(100.0 * (1.0 - out_factor / in_factor))
          << "%\n\n"
          << profiler::profile(slim).table();
        io::write_text_file((dir / "summary.txt").string(), s.str());
    });
}

void run_beta_sweep(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const fs::path dir = prepare_out_dir(cfg);
    with_failure_marker(dir, [&] {
        const fb::FilterBankSpec spec = cfg.fb;
        const Tensor phi = fb::build_filterbank(spec);
        const std::size_t n = spec.n_filters;
        const Tensor eval_x = fb::white_noise_spectrum(RngStream(cfg.train.seed, 1).substream(0),
                                                       spec, 256);

        struct GridPoint {
            double beta;
            std::size_t width;
        };
        std::vector<GridPoint> grid;
        for (double beta : cfg.beta_list) {
            for (double factor : cfg.overparam_list) {
                const auto width = static_cast<std::size_t>(
                    std::lround(factor * static_cast<double>(n)));
                grid.push_back({beta, width});
            }
        }

        struct GridResult {
            double beta = 0.0;
            double in_factor = 0.0;
            double out_factor = 0.0;
            double final_l1 = 0.0;
        };
        std::vector<GridResult> results(grid.size());

        const auto run_point = [&](std::size_t idx) {
            const GridPoint& point = grid[idx];
            train::TrainConfig tc = cfg.train;
            tc.beta = point.beta;
            tc.l1_scale = cfg.l1_scale.value_or(1e-3);
            // Each grid point owns its stream family, so any worker layout
            // produces identical numbers.
            const RngStream base(tc.seed, 1 + idx);

            nn::ModelGraph model;
            model.add_dynamic(spec.bins(), point.width, false);
            model.init_params(base.substream(1));
            if (tc.total_steps > 0) {
                train::train_two_phase(
                    model,
                    filterbank_batches(spec, phi, point.width, tc.batch_frames,
                                       base.substream(2)),
                    tc, base.substream(3));
            }
            const Tensor eval_y = filter_targets(eval_x, phi, point.width);
            const double l1 = train::l1_loss_value(model.forward_eval(eval_x), eval_y);
            // Plain ratio rather than overparam_factor: a fully pruned layer
            // legitimately reports 0 here.
            results[idx] = {point.beta,
                            fb::overparam_factor(static_cast<double>(point.width),
                                                 static_cast<double>(n)),
                            static_cast<double>(model.active_units(0)) / static_cast<double>(n),
                            l1};
        };

        const std::size_t n_workers = worker_count(grid.size());
        if (n_workers <= 1) {
            for (std::size_t i = 0; i < grid.size(); ++i) {
                run_point(i);
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::mutex error_mutex;
            std::exception_ptr first_error;
            std::vector<std::thread> pool;
            pool.reserve(n_workers);
            for (std::size_t w = 0; w < n_workers; ++w) {
                pool.emplace_back([&] {
                    kernels::set_serial_in_this_thread(true);
                    while (true) {
                        const std::size_t i = next.fetch_add(1);
                        if (i >= grid.size()) {
                            return;
                        }
                        try {
                            run_point(i);
                        } catch (...) {
                            const std::lock_guard<std::mutex> lock(error_mutex);
                            if (!first_error) {
                                first_error = std::current_exception();
                            }
                            return;
                        }
                    }
                });
            }
            for (auto& t : pool) {
                t.join();
            }
            if (first_error) {
                std::rethrow_exception(first_error);
            }
        }

        std::ostringstream csv;
        csv << "beta,in_factor,out_factor,final_l1\n";
        for (const GridResult& r : results) {
            csv << io::fmt(r.beta) << "," << io::fmt(r.in_factor) << "," << io::fmt(r.out_factor)
                << "," << io::fmt(r.final_l1) << "\n";
        }
        io::write_text_file((dir / "sweep.csv").string(), csv.str());

        std::vector<svg::Series> series;
        std::size_t idx = 0;
        for (double beta : cfg.beta_list) {
            svg::Series s;
            s.label = "beta " + io::fmt(beta);
            for (std::size_t f = 0; f < cfg.overparam_list.size(); ++f, ++idx) {
                s.points.emplace_back(results[idx].in_factor, results[idx].out_factor);
            }
            series.push_back(std::move(s));
        }
        svg::ChartSpec chart;
        chart.title = "capacity kept vs capacity offered";
        chart.x_label = "input overparameterization factor";
        chart.y_label = "output overparameterization factor";
        chart.identity_diagonal = true;
        io::write_text_file((dir / "sweep.svg").string(), svg::line_chart(chart, series));
    });
}

void run_acl_chain(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const fs::path dir = prepare_out_dir(cfg);
    with_failure_marker(dir, [&] {
        constexpr std::size_t kIn = 8;
        constexpr std::size_t kHidden = 16;
        constexpr std::size_t kOut = 8;
        constexpr std::size_t kRank = 4;
        train::TrainConfig tc = cfg.train;
        tc.l1_scale = cfg.l1_scale.value_or(1.0);

        // Rank-limited target map y = x (U V) B: kRank hidden units suffice,
        // the rest of the chain is redundant.
        const RngStream target_rng(tc.seed, 3);
        Tensor u({kIn, kRank});
        Tensor v({kRank, kHidden});
        Tensor b({kHidden, kOut});
        for (std::size_t i = 0; i < u.numel(); ++i) {
            u[i] = target_rng.normal(i) / std::sqrt(static_cast<double>(kIn));
        }
        for (std::size_t i = 0; i < v.numel(); ++i) {
            v[i] = target_rng.normal(1000 + i) / std::sqrt(static_cast<double>(kRank));
        }
        for (std::size_t i = 0; i < b.numel(); ++i) {
            b[i] = target_rng.normal(2000 + i) / std::sqrt(static_cast<double>(kHidden));
        }
        Tensor a({kIn, kHidden});
        kernels::matmul_nn(u.data().data(), v.data().data(), a.data().data(), kIn, kRank,
                           kHidden);

        const auto targets_of = [&](const Tensor& x) {
            const std::size_t rows = x.dim(0);
            Tensor hidden({rows, kHidden});
            kernels::matmul_nn(x.data().data(), a.data().data(), hidden.data().data(), rows, kIn,
                               kHidden);
            Tensor y({rows, kOut});
            kernels::matmul_nn(hidden.data().data(), b.data().data(), y.data().data(), rows,
                               kHidden, kOut);
            return y;
        };
        const RngStream data_rng(tc.seed, 1);
        const train::BatchFn batches = [&, data_rng](std::size_t step) {
            Tensor x({tc.batch_frames, kIn});
            const RngStream sub = data_rng.substream(step);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                x[i] = sub.normal(i);
            }
            Tensor y = targets_of(x);
            return std::pair<Tensor, Tensor>{std::move(x), std::move(y)};
        };

        // tanh on the gated layer breaks the rotational symmetry of a purely
        // linear chain; without it the units are interchangeable and the
        // penalty prunes all or nothing.
        nn::ModelGraph model;
        model.add_dynamic(kIn, kHidden, false, nn::Activation::tanh);
        model.add_adaptive(kOut, false);
        model.init_params(RngStream(tc.seed, 0));

        train::TrainHistory history;
        if (tc.total_steps > 0) {
            history = train::train_two_phase(model, batches, tc, RngStream(tc.seed, 2));
        }

        Tensor eval_x({128, kIn});
        const RngStream eval_rng = data_rng.substream(0);
        for (std::size_t i = 0; i < eval_x.numel(); ++i) {
            eval_x[i] = eval_rng.normal(i);
        }
        const Tensor eval_y = targets_of(eval_x);

        // Zero the sub-threshold gates so dropping those units is exact.
        auto& gate_state = std::get<nn::DynamicLinear>(model.layer(0).impl).gate;
        for (double& l : gate_state.lambdas.data()) {
            if (l <= 0.5) {
                l = 0.0;
            }
        }
        const Tensor gated_out = model.forward_eval(eval_x);
        const nn::ModelGraph slim = model.consolidate();
        const Tensor slim_out = slim.forward_eval(eval_x);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < gated_out.numel(); ++i) {
            max_diff = std::max(max_diff, std::fabs(gated_out[i] - slim_out[i]));
        }
        if (!(max_diff < 1e-6)) {
            throw std::runtime_error("consolidation changed evaluation outputs (max diff " +
                                     io::fmt(max_diff) + ")");
        }
        const std::size_t hidden_width = slim.layer(0).impl.index() == 0
                                             ? std::get<nn::FixedLinear>(slim.layer(0).impl)
                                                   .weight.dim(1)
                                             : 0;
        const double final_l1 = train::l1_loss_value(slim_out, eval_y);

        history.write_csv((dir / "history.csv").string());
        ser::save_model(slim, (dir / "model.dcm").string());

        std::ostringstream s;
        s << "adaptive chain experiment\n"
          << "target rank: " << kRank << "\n"
          << "input width: " << kIn << "\n"
          << "hidden width: " << kHidden << "\n"
          << "output width: " << kOut << "\n"
          << "steps: " << tc.total_steps << " (phase 1: " << tc.phase1_steps << ")\n"
          << "beta: " << io::fmt(tc.beta) << "\n"
          << "seed: " << tc.seed << "\n"
          << "consolidated hidden width: " << hidden_width << "\n"
          << "consolidation max output diff: " << io::fmt(max_diff) << "\n"
          << "final l1 (consolidated, 128 eval rows): " << io::fmt(final_l1) << "\n\n"
          << profiler::profile(slim).table();
        io::write_text_file((dir / "summary.txt").string(), s.str());
    });
}

void run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "filterbank") {
        run_filterbank(cfg);
    } else if (cfg.experiment == "beta_sweep") {
        run_beta_sweep(cfg);
    } else if (cfg.experiment == "acl_chain") {
        run_acl_chain(cfg);
    } else {
        throw ConfigError("unknown experiment '" + cfg.experiment +
                          "' (use filterbank, beta_sweep, or acl_chain)");
    }
}

}  // namespace dyncap::exp
