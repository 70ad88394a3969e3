#pragma once

#include <cstdint>
#include <cstddef>

#include "dyncap/rng.hpp"
#include "dyncap/tape.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap::gate {

// Upper clamp for capacity fractions. Kept strictly below 1 so the
// d/dlambda sqrt(1-lambda) factor in the gate stays finite.
inline constexpr double kLambdaMax = 1.0 - 1e-3;

// Per-unit gate state for a dynamic layer of width N. lambdas[n] is the
// retained-capacity fraction of unit n: 1 means full signal, the noise
// floor takes over as it falls. sigma_ema[n] tracks the unit's feature
// standard deviation so injected noise is scaled to the signal.
struct GateState {
    Tensor lambdas;
    Tensor sigma_ema;
    double lambda_min = 0.0625;
    bool noise_enabled = true;

    // All units at full capacity (lambda_max), sigma estimates at 1.
    static GateState full(std::size_t n, double lambda_min = 0.0625);

    std::size_t width() const { return lambdas.numel(); }
};

// Single continuous dimensionality K for the ordered gate.
struct OrderedKState {
    double k = 1.0;
    std::size_t n_min = 1;
    std::size_t n_max = 1;
};

// Ordered gate: units below floor(K) pass clean, the boundary unit gets a
// variance-preserving signal/noise mix weighted by the fractional part of
// K, units above are zeroed. Differentiable in k within a cell; at integer
// k the graph is a pure truncation and dk is zero.
//
// x rank-1 of length n_max; k scalar; sigma rank-1 per-unit stds.
// Boundary noise is noise.normal(counter).
Var gate_ordered_k(Var x, Var k, const OrderedKState& bounds, const Tensor& sigma,
                   const RngStream& noise, std::uint64_t counter);

// Per-unit gate. Training: y[i,n] = sqrt(l_n) x[i,n] + sqrt(1-l_n) s_n v[i,n]
// with v[i,n] = noise.normal(counter_base + i*N + n). Evaluation drops the
// noise term, keeping the expected signal path. x rank-1 (N) or rank-2 (B,N);
// lambdas must hold the same values as state.lambdas.
Var gate_per_unit(Var x, Var lambdas, const GateState& state, const RngStream& noise,
                  std::uint64_t counter_base, bool training);

// Tape-free evaluation gate: y[i,n] = sqrt(lambdas[n]) x[i,n].
Tensor gate_eval(const Tensor& x, const Tensor& lambdas);

// Optimal linear estimate of the boundary signal from the gate output.
double wiener_estimate(double eta, double lambda);

// Monte Carlo estimate of the normalized squared estimation error
// E[(xi - xi_hat)^2] / sigma^2 at mix fraction lambda. Converges to lambda.
// Deterministic for fixed (lambda, n_samples, seed) at any thread count.
double mc_normalized_error(double lambda, std::size_t n_samples, std::uint64_t seed);

// Capacity regularizer (beta/N) * sum_n lambda_n^2.
Var lambda_penalty(Var lambdas, double beta);
double lambda_penalty_value(const Tensor& lambdas, double beta);

// EMA update of per-unit feature std from a (B,N) pre-gate batch.
// Momentum 0.99, floored at 1e-6. Carries no gradient.
void update_sigma_ema(GateState& state, const Tensor& batch_features);

// Projects every lambda back into [lambda_min, kLambdaMax]. Called after
// each optimizer step.
void clamp_lambdas(GateState& state);

}  // namespace dyncap::gate
