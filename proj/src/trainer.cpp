#include "dyncap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <variant>

#include "dyncap/gate.hpp"
#include "dyncap/io.hpp"
#include "dyncap/profiler.hpp"

namespace dyncap::train {
namespace {

constexpr double kLambdaGradClip = 1e3;

double gate_penalty_total(const nn::ModelGraph& model, double beta) {
    double total = 0.0;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (const auto* d = std::get_if<nn::DynamicLinear>(&model.layer(i).impl)) {
            total += gate::lambda_penalty_value(d->gate.lambdas, beta);
        }
    }
    return total;
}

double mean_gate_lambda(const nn::ModelGraph& model) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (const auto* d = std::get_if<nn::DynamicLinear>(&model.layer(i).impl)) {
            for (double v : d->gate.lambdas.data()) {
                sum += v;
            }
            count += d->gate.width();
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

Var l1_loss(Var pred, Var target) {
    if (!pred.value().same_shape(target.value())) {
        throw std::invalid_argument("l1_loss: prediction shape (" +
                                    shape_string(pred.value().shape()) +
                                    ") does not match target shape (" +
                                    shape_string(target.value().shape()) + ")");
    }
    return mean(abs(sub(pred, target)));
}

double l1_loss_value(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) {
        throw std::invalid_argument("l1_loss: prediction shape (" + shape_string(pred.shape()) +
                                    ") does not match target shape (" +
                                    shape_string(target.shape()) + ")");
    }
    const auto p = pred.data();
    const auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += std::fabs(p[i] - t[i]);
    }
    return acc / static_cast<double>(p.size());
}

Var composite_loss(Var task, const std::vector<Var>& lambdas, double beta, double l1_scale) {
    Var total = scale(task, l1_scale);
    for (Var l : lambdas) {
        total = add(total, gate::lambda_penalty(l, beta));
    }
    return total;
}

double bce_loss(const std::vector<int>& labels, const std::vector<double>& probs,
                double pos_weight) {
    if (labels.size() != probs.size()) {
        throw std::invalid_argument("bce_loss: " + std::to_string(labels.size()) +
                                    " labels vs " + std::to_string(probs.size()) + " probs");
    }
    if (labels.empty()) {
        throw std::invalid_argument("bce_loss: empty input");
    }
    if (!(pos_weight >= 0.0) || !std::isfinite(pos_weight)) {
        throw std::invalid_argument("bce_loss: pos_weight must be a nonnegative real");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("bce_loss: label at index " + std::to_string(i) +
                                        " is not 0 or 1");
        }
        const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
        acc += labels[i] == 1 ? -pos_weight * std::log(p) : -std::log1p(-p);
    }
    return acc / static_cast<double>(labels.size());
}

std::pair<double, double> eer(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("eer: " + std::to_string(scores.size()) + " scores vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (scores.empty()) {
        throw std::invalid_argument("eer: empty input");
    }
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::vector<std::pair<double, int>> ranked(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw std::invalid_argument("eer: non-finite score at index " + std::to_string(i));
        }
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("eer: label at index " + std::to_string(i) +
                                        " is not 0 or 1");
        }
        ranked[i] = {scores[i], labels[i]};
        (labels[i] == 1 ? n_pos : n_neg) += 1;
    }
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("eer: needs scores from both classes");
    }
    std::sort(ranked.begin(), ranked.end());

    // Threshold candidates are midpoints between distinct adjacent scores.
    // With everything below index i rejected: frr = positives below / positives,
    // far = negatives at or above / negatives.
    double best_diff = std::numeric_limits<double>::infinity();
    double best_far = 0.0;
    double best_frr = 0.0;
    double best_t = 0.0;
    std::size_t pos_below = 0;
    bool found = false;
    for (std::size_t i = 1; i < ranked.size(); ++i) {
        pos_below += static_cast<std::size_t>(ranked[i - 1].second == 1);
        if (ranked[i - 1].first == ranked[i].first) {
            continue;
        }
        const std::size_t neg_below = i - pos_below;
        const double frr = static_cast<double>(pos_below) / static_cast<double>(n_pos);
        const double far = static_cast<double>(n_neg - neg_below) / static_cast<double>(n_neg);
        const double diff = std::fabs(far - frr);
        if (diff < best_diff) {
            best_diff = diff;
            best_far = far;
            best_frr = frr;
            best_t = 0.5 * (ranked[i - 1].first + ranked[i].first);
            found = true;
        }
    }
    if (!found) {
        throw std::invalid_argument("eer: all scores identical, no candidate thresholds");
    }
    return {0.5 * (best_far + best_frr), best_t};
}

void AdamOptimizer::step(const std::string& name, Tensor& param, const Tensor& grad) {
    if (!grad.all_finite()) {
        throw std::runtime_error("non-finite gradient for parameter '" + name + "'");
    }
    if (!param.same_shape(grad)) {
        throw std::invalid_argument("gradient shape (" + shape_string(grad.shape()) +
                                    ") does not match parameter '" + name + "' (" +
                                    shape_string(param.shape()) + ")");
    }
    Slot& slot = state_[name];
    if (slot.t == 0) {
        slot.m = Tensor::zeros(param.shape());
        slot.v = Tensor::zeros(param.shape());
    } else if (!slot.m.same_shape(param)) {
        throw std::invalid_argument("parameter '" + name + "' changed shape mid-training");
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    auto p = param.data();
    const auto g = grad.data();
    auto m = slot.m.data();
    auto v = slot.v.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        p[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p[j]);
    }
}

std::size_t AdamOptimizer::step_count(const std::string& name) const {
    const auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
}

void validate(const TrainConfig& cfg) {
    if (cfg.total_steps == 0) {
        throw std::invalid_argument("total_steps must be positive");
    }
    if (cfg.phase1_steps > cfg.total_steps) {
        throw std::invalid_argument("phase1_steps (" + std::to_string(cfg.phase1_steps) +
                                    ") exceeds total_steps (" + std::to_string(cfg.total_steps) +
                                    ")");
    }
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) {
        throw std::invalid_argument("lr must be positive");
    }
    if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) {
        throw std::invalid_argument("beta must be nonnegative");
    }
    if (!(cfg.l1_scale >= 0.0) || !std::isfinite(cfg.l1_scale)) {
        throw std::invalid_argument("l1_scale must be nonnegative");
    }
    if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay)) {
        throw std::invalid_argument("weight_decay must be nonnegative");
    }
    if (!(cfg.lambda_min >= 0.0) || cfg.lambda_min >= gate::kLambdaMax) {
        throw std::invalid_argument("lambda_min must lie in [0, lambda ceiling)");
    }
    if (cfg.batch_frames == 0) {
        throw std::invalid_argument("batch_frames must be positive");
    }
}

std::string TrainHistory::csv() const {
    std::ostringstream os;
    os << "step,task_loss,lambda_penalty,mean_lambda,active_units,flops_per_frame\n";
    for (const StepRecord& r : steps) {
        os << r.step << "," << io::fmt(r.task_loss) << "," << io::fmt(r.lambda_penalty) << ","
           << io::fmt(r.mean_lambda) << "," << r.active_units << ","
           << io::fmt(r.flops_per_frame) << "\n";
    }
    return os.str();
}

void TrainHistory::write_csv(const std::string& path) const { io::write_text_file(path, csv()); }

TrainHistory train_two_phase(nn::ModelGraph& model, const BatchFn& batch, const TrainConfig& cfg,
                             const RngStream& noise) {
    validate(cfg);
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (auto* d = std::get_if<nn::DynamicLinear>(&model.layer(i).impl)) {
            d->gate.lambda_min = cfg.lambda_min;
        }
    }

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    adam_cfg.weight_decay = cfg.weight_decay;
    AdamOptimizer adam(adam_cfg);

    TrainHistory history;
    history.steps.reserve(cfg.total_steps);
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        const bool phase2 = step > cfg.phase1_steps;
        Tape tape;
        auto [x, target] = batch(step);
        Var out = model.forward(tape, tape.constant(std::move(x)), true, noise, step);
        model.update_sigma_emas();
        Var task = l1_loss(out, tape.constant(std::move(target)));

        const std::vector<nn::ParamRef> params = model.params();
        const std::vector<Var>& bound = model.bound_params();
        std::vector<Var> lambda_vars;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].is_lambda) {
                lambda_vars.push_back(bound[i]);
            }
        }

        Var loss = phase2 ? composite_loss(task, lambda_vars, cfg.beta, cfg.l1_scale) : task;
        if (!std::isfinite(loss.value().item())) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        }
        tape.backward(loss);

        StepRecord rec;
        rec.step = step;
        rec.task_loss = task.value().item();
        rec.lambda_penalty = phase2 ? gate_penalty_total(model, cfg.beta) : 0.0;

        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].is_lambda && !phase2) {
                continue;  // phase 1 keeps every lambda exactly at its start value
            }
            if (params[i].is_lambda) {
                Tensor g = bound[i].grad();
                for (double& gv : g.data()) {
                    gv = std::clamp(gv, -kLambdaGradClip, kLambdaGradClip);
                }
                adam.step(params[i].name, *params[i].tensor, g);
            } else {
                adam.step(params[i].name, *params[i].tensor, bound[i].grad());
            }
        }
        model.clamp_gates();

        rec.mean_lambda = mean_gate_lambda(model);
        rec.active_units = model.total_active_units();
        rec.flops_per_frame = profiler::effective_flops(model);
        history.steps.push_back(rec);
    }
    return history;
}

}  // namespace dyncap::train
