#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dyncap/layers.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tape.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap::train {

// Mean absolute difference. Shapes must match exactly.
Var l1_loss(Var pred, Var target);
double l1_loss_value(const Tensor& pred, const Tensor& target);

// l1_scale * task plus the capacity penalty of every gate, (beta/N) sum l^2.
Var composite_loss(Var task, const std::vector<Var>& lambdas, double beta,
                   double l1_scale = 1.0);

// Binary cross-entropy over probabilities, clamped to [1e-7, 1 - 1e-7]
// before the logs. pos_weight multiplies the positive-class term. Labels
// must be 0 or 1.
double bce_loss(const std::vector<int>& labels, const std::vector<double>& probs,
                double pos_weight = 1.0);

// Equal error rate of accept scores: accept when score >= threshold.
// Candidate thresholds are the midpoints of adjacent sorted unique scores;
// returns ((far + frr) / 2, threshold) at the smallest threshold where
// |far - frr| is minimal. Needs both classes present.
std::pair<double, double> eer(const std::vector<double>& scores, const std::vector<int>& labels);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled: subtracts lr * wd * w each step
};

// Adam with bias correction. State lives per parameter name, so a parameter
// that starts training late gets fresh moments and its own step count, and
// the update order across parameters never matters.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    // One in-place update. Throws on a non-finite gradient, naming the
    // parameter.
    void step(const std::string& name, Tensor& param, const Tensor& grad);
    std::size_t step_count(const std::string& name) const;
    const AdamConfig& config() const { return cfg_; }

  private:
    struct Slot {
        Tensor m;
        Tensor v;
        std::size_t t = 0;
    };
    AdamConfig cfg_;
    std::map<std::string, Slot> state_;
};

struct TrainConfig {
    std::size_t total_steps = 3000;
    std::size_t phase1_steps = 1000;
    double lr = 1e-3;
    double beta = 0.5;
    double lambda_min = 0.0625;
    double l1_scale = 1.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
    std::size_t batch_frames = 32;  // consumed by batch generators, not the loop
};

// Throws std::invalid_argument on an unusable configuration.
void validate(const TrainConfig& cfg);

struct StepRecord {
    std::size_t step = 0;  // 1-based
    double task_loss = 0.0;
    double lambda_penalty = 0.0;  // 0 while the regularizer is off
    double mean_lambda = 0.0;
    std::size_t active_units = 0;
    double flops_per_frame = 0.0;  // lambda-weighted effective count
};

struct TrainHistory {
    std::vector<StepRecord> steps;

    std::string csv() const;
    void write_csv(const std::string& path) const;
};

// Supplies the (input, target) batch for a step. Must be a pure function of
// the step index so a rerun reproduces training exactly.
using BatchFn = std::function<std::pair<Tensor, Tensor>(std::size_t step)>;

// Two-phase schedule: steps 1..phase1_steps minimize the task loss with
// every lambda pinned at its ceiling; the remaining steps minimize the
// composite loss with lambdas trainable, clamped after each update. Sigma
// estimates update on every forward. Loss values and lambda gradients are
// checked finite; lambda gradients are clipped to magnitude 1e3. `noise`
// addresses the gate noise; pass a stream derived from cfg.seed.
TrainHistory train_two_phase(nn::ModelGraph& model, const BatchFn& batch,
                             const TrainConfig& cfg, const RngStream& noise);

}  // namespace dyncap::train
