#include "dyncap/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dyncap/kernels.hpp"

namespace dyncap::nn {

namespace {

std::size_t layer_in(const Layer& l) {
    return std::visit([](const auto& v) { return v.weight.dim(0); }, l.impl);
}

std::size_t layer_out(const Layer& l) {
    return std::visit([](const auto& v) { return v.weight.dim(1); }, l.impl);
}

Var apply_act(Var z, Activation a) {
    switch (a) {
        case Activation::identity: return z;
        case Activation::tanh: return tanh(z);
        case Activation::sigmoid: return sigmoid(z);
    }
    throw std::logic_error("unknown activation");
}

void apply_act_eval(Tensor& z, Activation a) {
    if (a == Activation::identity) return;
    for (std::size_t i = 0; i < z.numel(); ++i) {
        z[i] = a == Activation::tanh ? std::tanh(z[i]) : 1.0 / (1.0 + std::exp(-z[i]));
    }
}

[[noreturn]] void width_error(std::size_t layer_idx, std::size_t got, std::size_t want) {
    throw std::invalid_argument("layer " + std::to_string(layer_idx) + ": input width " +
                                std::to_string(got) + " does not match " + std::to_string(want));
}

}  // namespace

std::size_t ModelGraph::add_fixed(std::size_t in, std::size_t out, bool bias, Activation act,
                                  double output_scale) {
    if (!layers_.empty()) {
        if (std::holds_alternative<DynamicLinear>(layers_.back().impl)) {
            throw std::invalid_argument("a dynamic layer must be followed by an adaptive layer");
        }
        if (layer_out(layers_.back()) != in) width_error(layers_.size(), in, layer_out(layers_.back()));
    }
    FixedLinear l;
    l.weight = Tensor::zeros({in, out});
    l.bias = Tensor::zeros({out});
    l.has_bias = bias;
    l.output_scale = output_scale;
    layers_.push_back(Layer{std::move(l), act});
    return layers_.size() - 1;
}

std::size_t ModelGraph::add_dynamic(std::size_t in, std::size_t n_max, bool bias, Activation act,
                                    double lambda_min) {
    if (!layers_.empty()) {
        if (std::holds_alternative<DynamicLinear>(layers_.back().impl)) {
            throw std::invalid_argument("a dynamic layer must be followed by an adaptive layer");
        }
        if (layer_out(layers_.back()) != in) width_error(layers_.size(), in, layer_out(layers_.back()));
    }
    DynamicLinear l;
    l.weight = Tensor::zeros({in, n_max});
    l.bias = Tensor::zeros({n_max});
    l.has_bias = bias;
    l.gate = gate::GateState::full(n_max, lambda_min);
    layers_.push_back(Layer{std::move(l), act});
    return layers_.size() - 1;
}

std::size_t ModelGraph::add_adaptive(std::size_t out, bool bias, Activation act) {
    if (layers_.empty() || !std::holds_alternative<DynamicLinear>(layers_.back().impl)) {
        throw std::invalid_argument("adaptive layer requires a directly preceding dynamic layer");
    }
    AdaptiveLinear l;
    l.link = layers_.size() - 1;
    l.weight = Tensor::zeros({layer_out(layers_.back()), out});
    l.bias = Tensor::zeros({out});
    l.has_bias = bias;
    layers_.push_back(Layer{std::move(l), act});
    return layers_.size() - 1;
}

void ModelGraph::init_params(const RngStream& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const RngStream sub = rng.substream(i);
        std::visit([&](auto& l) {
            const double s = 1.0 / std::sqrt(static_cast<double>(l.weight.dim(0)));
            for (std::size_t j = 0; j < l.weight.numel(); ++j) l.weight[j] = s * sub.normal(j);
            for (std::size_t j = 0; j < l.bias.numel(); ++j) l.bias[j] = 0.0;
        }, layers_[i].impl);
        if (auto* d = std::get_if<DynamicLinear>(&layers_[i].impl)) {
            d->gate = gate::GateState::full(d->gate.width(), d->gate.lambda_min);
        }
    }
}

std::vector<ParamRef> ModelGraph::params() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i);
        std::visit([&](auto& l) {
            out.push_back({prefix + ".weight", &l.weight, false});
            if (l.has_bias) out.push_back({prefix + ".bias", &l.bias, false});
        }, layers_[i].impl);
        if (auto* d = std::get_if<DynamicLinear>(&layers_[i].impl)) {
            out.push_back({prefix + ".lambda", &d->gate.lambdas, true});
        }
    }
    return out;
}

Var ModelGraph::forward(Tape& tape, Var x, bool training, const RngStream& noise,
                        std::uint64_t step) {
    if (x.value().rank() != 2) {
        throw std::invalid_argument("forward expects a (batch, features) input, got shape " +
                                    shape_string(x.value().shape()));
    }
    bound_.clear();
    Var cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        const std::size_t want = layer_in(layer);
        if (cur.value().dim(1) != want) width_error(i, cur.value().dim(1), want);

        Var w = tape.leaf(std::visit([](auto& l) { return l.weight; }, layer.impl), true);
        bound_.push_back(w);
        Var z = matmul(cur, w);
        const bool has_bias = std::visit([](const auto& l) { return l.has_bias; }, layer.impl);
        if (has_bias) {
            Var b = tape.leaf(std::visit([](auto& l) { return l.bias; }, layer.impl), true);
            bound_.push_back(b);
            z = coladd(z, b);
        }

        if (auto* f = std::get_if<FixedLinear>(&layer.impl)) {
            if (f->output_scale != 1.0) z = scale(z, f->output_scale);
        } else if (auto* d = std::get_if<DynamicLinear>(&layer.impl)) {
            Var lam = tape.leaf(d->gate.lambdas, true);
            bound_.push_back(lam);
            if (training) d->last_features = z.value();
            z = gate::gate_per_unit(z, lam, d->gate, noise.substream(i),
                                    step << 32, training);
        }

        cur = apply_act(z, layer.act);
    }
    return cur;
}

Tensor ModelGraph::forward_eval(const Tensor& x) const {
    const bool vector_in = x.rank() == 1;
    if (x.rank() > 2) {
        throw std::invalid_argument("forward_eval expects rank 1 or 2 input, got shape " +
                                    shape_string(x.shape()));
    }
    const std::size_t rows = vector_in ? 1 : x.dim(0);
    Tensor cur(std::vector<std::size_t>{rows, vector_in ? x.numel() : x.dim(1)},
               std::vector<double>(x.data().begin(), x.data().end()));

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        const std::size_t in = layer_in(layer), out = layer_out(layer);
        if (cur.dim(1) != in) width_error(i, cur.dim(1), in);

        const Tensor& w = std::visit([](const auto& l) -> const Tensor& { return l.weight; }, layer.impl);
        Tensor z({rows, out});
        kernels::matmul_nn(cur.data().data(), w.data().data(), z.data().data(), rows, in, out);
        std::visit([&](const auto& l) {
            if (l.has_bias) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < out; ++c) z.at(r, c) += l.bias[c];
            }
        }, layer.impl);

        if (auto* f = std::get_if<FixedLinear>(&layer.impl)) {
            if (f->output_scale != 1.0) {
                for (std::size_t j = 0; j < z.numel(); ++j) z[j] *= f->output_scale;
            }
        } else if (auto* d = std::get_if<DynamicLinear>(&layer.impl)) {
            z = gate::gate_eval(z, d->gate.lambdas);
        }

        apply_act_eval(z, layer.act);
        cur = std::move(z);
    }

    if (vector_in) return Tensor({cur.numel()}, std::vector<double>(cur.data().begin(), cur.data().end()));
    return cur;
}

ModelGraph ModelGraph::consolidate(double threshold) const {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("consolidation threshold must lie in (0,1), got " +
                                    std::to_string(threshold));
    }
    ModelGraph out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        Layer next;
        next.act = layer.act;
        if (const auto* f = std::get_if<FixedLinear>(&layer.impl)) {
            next.impl = *f;
        } else if (const auto* d = std::get_if<DynamicLinear>(&layer.impl)) {
            const std::vector<std::size_t> kept = kept_units(i, threshold);
            if (kept.empty()) {
                throw std::runtime_error("degenerate consolidation: layer " + std::to_string(i) +
                                         " keeps no units at threshold " + std::to_string(threshold));
            }
            FixedLinear g;
            const std::size_t in = d->weight.dim(0);
            g.weight = Tensor({in, kept.size()});
            g.bias = Tensor({kept.size()});
            g.has_bias = d->has_bias;
            for (std::size_t j = 0; j < kept.size(); ++j) {
                const std::size_t n = kept[j];
                const double s = std::sqrt(d->gate.lambdas[n]);
                for (std::size_t r = 0; r < in; ++r) g.weight.at(r, j) = s * d->weight.at(r, n);
                g.bias[j] = s * d->bias[n];
            }
            next.impl = std::move(g);
        } else {
            const auto& a = std::get<AdaptiveLinear>(layer.impl);
            const std::vector<std::size_t> kept = kept_units(a.link, threshold);
            FixedLinear g;
            const std::size_t cols = a.weight.dim(1);
            g.weight = Tensor({kept.size(), cols});
            g.bias = a.bias;
            g.has_bias = a.has_bias;
            for (std::size_t j = 0; j < kept.size(); ++j) {
                for (std::size_t c = 0; c < cols; ++c) g.weight.at(j, c) = a.weight.at(kept[j], c);
            }
            next.impl = std::move(g);
        }
        out.layers_.push_back(std::move(next));
    }
    return out;
}

std::vector<std::size_t> ModelGraph::kept_units(std::size_t layer_idx, double threshold) const {
    const auto* d = std::get_if<DynamicLinear>(&layers_.at(layer_idx).impl);
    if (d == nullptr) {
        throw std::invalid_argument("layer " + std::to_string(layer_idx) + " is not dynamic");
    }
    std::vector<std::size_t> kept;
    for (std::size_t n = 0; n < d->gate.width(); ++n) {
        if (d->gate.lambdas[n] > threshold) kept.push_back(n);
    }
    return kept;
}

std::size_t ModelGraph::active_units(std::size_t layer_idx, double threshold) const {
    return kept_units(layer_idx, threshold).size();
}

std::size_t ModelGraph::total_active_units(double threshold) const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (std::holds_alternative<DynamicLinear>(layers_[i].impl)) {
            total += active_units(i, threshold);
        }
    }
    return total;
}

void ModelGraph::update_sigma_emas() {
    for (Layer& layer : layers_) {
        if (auto* d = std::get_if<DynamicLinear>(&layer.impl)) {
            gate::update_sigma_ema(d->gate, d->last_features);
        }
    }
}

void ModelGraph::clamp_gates() {
    for (Layer& layer : layers_) {
        if (auto* d = std::get_if<DynamicLinear>(&layer.impl)) gate::clamp_lambdas(d->gate);
    }
}

std::size_t ModelGraph::param_count() const {
    std::size_t total = 0;
    for (const Layer& layer : layers_) {
        std::visit([&](const auto& l) {
            total += l.weight.numel();
            if (l.has_bias) total += l.bias.numel();
        }, layer.impl);
        if (const auto* d = std::get_if<DynamicLinear>(&layer.impl)) {
            total += d->gate.lambdas.numel();
        }
    }
    return total;
}

std::size_t ModelGraph::input_width() const {
    if (layers_.empty()) throw std::logic_error("empty model");
    return layer_in(layers_.front());
}

std::size_t ModelGraph::output_width() const {
    if (layers_.empty()) throw std::logic_error("empty model");
    return layer_out(layers_.back());
}

}  // namespace dyncap::nn
