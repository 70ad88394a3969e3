#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dyncap/gate.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tape.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap::nn {

enum class Activation : std::uint8_t { identity = 0, tanh = 1, sigmoid = 2 };

// Plain dense layer with immutable dimensions. output_scale multiplies the
// pre-activation output; it exists so a constant-scale baseline can mirror
// a full-capacity gated layer exactly.
struct FixedLinear {
    Tensor weight;  // (in, out)
    Tensor bias;    // (out), meaningful only when has_bias
    bool has_bias = false;
    double output_scale = 1.0;
};

// Dense layer whose output units are individually gated. Width stays n_max
// during training; consolidation shrinks it.
struct DynamicLinear {
    Tensor weight;  // (in, n_max)
    Tensor bias;
    bool has_bias = false;
    gate::GateState gate;
    Tensor last_features;  // pre-gate outputs of the latest training forward
};

// Dense layer that follows a dynamic layer and adapts to its width. Holds
// full-width weights during training; consolidation drops the rows of
// pruned units.
struct AdaptiveLinear {
    Tensor weight;  // (n_max of linked layer, out)
    Tensor bias;
    bool has_bias = false;
    std::size_t link = 0;  // index of the dynamic layer it follows
};

struct Layer {
    std::variant<FixedLinear, DynamicLinear, AdaptiveLinear> impl;
    Activation act = Activation::identity;
};

// Named handle to one trainable tensor inside the graph. Valid until the
// graph's layer list changes.
struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    bool is_lambda = false;
};

// Sequential stack of fixed, dynamic, and adaptive layers. Each layer
// computes act(gate(x W + b)); the gate is present only on dynamic layers.
class ModelGraph {
  public:
    std::size_t add_fixed(std::size_t in, std::size_t out, bool bias,
                          Activation act = Activation::identity, double output_scale = 1.0);
    std::size_t add_dynamic(std::size_t in, std::size_t n_max, bool bias,
                            Activation act = Activation::identity, double lambda_min = 0.0625);
    // Must directly follow the dynamic layer it adapts to.
    std::size_t add_adaptive(std::size_t out, bool bias, Activation act = Activation::identity);

    // Weights to N(0, 1/in), biases to zero, gates to full capacity.
    void init_params(const RngStream& rng);

    // Records the whole forward pass on the tape, binding every parameter
    // as a trainable leaf first (readable via bound_params()). Training
    // mode injects gate noise addressed by (step, layer, batch row, unit)
    // and snapshots pre-gate features for sigma tracking.
    Var forward(Tape& tape, Var x, bool training, const RngStream& noise, std::uint64_t step);

    // Tape-free evaluation forward (gates collapse to sqrt-lambda scaling).
    // Accepts (B, in) or (in).
    Tensor forward_eval(const Tensor& x) const;

    // One entry per trainable tensor, in a stable order matching
    // bound_params() after a forward call.
    std::vector<ParamRef> params();
    const std::vector<Var>& bound_params() const { return bound_; }

    // Keeps gated units with lambda above the threshold, scales their
    // columns and bias entries by sqrt(lambda), drops the rest together
    // with the matching rows of any adaptive follower. Result contains
    // only fixed layers. Throws on a layer with nothing left to keep.
    ModelGraph consolidate(double threshold = 0.5) const;

    std::size_t active_units(std::size_t layer_idx, double threshold = 0.5) const;
    std::size_t total_active_units(double threshold = 0.5) const;
    std::vector<std::size_t> kept_units(std::size_t layer_idx, double threshold = 0.5) const;

    // Feeds each dynamic layer's snapshotted pre-gate features into its
    // sigma estimate. Call once per training step, after forward.
    void update_sigma_emas();
    // Projects every gate's lambdas back into bounds after an optimizer step.
    void clamp_gates();

    std::size_t param_count() const;
    std::size_t layer_count() const { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    Layer& layer(std::size_t i) { return layers_.at(i); }
    const std::vector<Layer>& layers() const { return layers_; }

    std::size_t input_width() const;
    std::size_t output_width() const;

  private:
    std::vector<Layer> layers_;
    std::vector<Var> bound_;
};

}  // namespace dyncap::nn
