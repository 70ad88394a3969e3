#include "dyncap/gate.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncap/kernels.hpp"

namespace dyncap::gate {

GateState GateState::full(std::size_t n, double lambda_min) {
    if (n == 0) throw std::invalid_argument("gate width must be positive");
    if (!(lambda_min > 0.0 && lambda_min < 1.0)) {
        throw std::invalid_argument("lambda_min must lie in (0,1), got " + std::to_string(lambda_min));
    }
    GateState s;
    s.lambdas = Tensor::full({n}, kLambdaMax);
    s.sigma_ema = Tensor::full({n}, 1.0);
    s.lambda_min = lambda_min;
    return s;
}

Var gate_ordered_k(Var x, Var k, const OrderedKState& bounds, const Tensor& sigma,
                   const RngStream& noise, std::uint64_t counter) {
    const Tensor& xv = x.value();
    if (xv.rank() != 1 || xv.numel() != bounds.n_max) {
        throw std::invalid_argument("gate_ordered_k: input shape " + shape_string(xv.shape()) +
                                    " does not match width " + std::to_string(bounds.n_max));
    }
    if (bounds.n_min < 1 || bounds.n_min > bounds.n_max) {
        throw std::invalid_argument("gate_ordered_k: invalid bounds");
    }
    if (sigma.numel() != bounds.n_max) {
        throw std::invalid_argument("gate_ordered_k: sigma length " + std::to_string(sigma.numel()) +
                                    " does not match width " + std::to_string(bounds.n_max));
    }
    for (std::size_t i = 0; i < sigma.numel(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("gate_ordered_k: sigma must be positive");
    }
    const double kv = k.value().item();
    if (!(kv >= static_cast<double>(bounds.n_min) && kv <= static_cast<double>(bounds.n_max))) {
        throw std::invalid_argument("gate_ordered_k: K=" + std::to_string(kv) + " outside [" +
                                    std::to_string(bounds.n_min) + ", " + std::to_string(bounds.n_max) + "]");
    }

    Tape& tape = *x.tape;
    const std::size_t n = bounds.n_max;
    const std::size_t fl = static_cast<std::size_t>(std::floor(kv));
    const double lam = kv - static_cast<double>(fl);

    if (lam == 0.0) {
        // Integer K: exact truncation, no dependence on k.
        Tensor mask({n});
        for (std::size_t i = 0; i < fl; ++i) mask[i] = 1.0;
        return mul(x, tape.constant(std::move(mask)));
    }

    Tensor keep_mask({n}), border_mask({n}), border_noise({n});
    for (std::size_t i = 0; i + 1 < fl; ++i) keep_mask[i] = 1.0;
    border_mask[fl - 1] = 1.0;
    border_noise[fl - 1] = sigma[fl - 1] * noise.normal(counter);

    Var lam_var = sub(k, tape.constant(Tensor::scalar(static_cast<double>(fl))));
    Var signal_w = sqrt(sub(tape.constant(Tensor::scalar(1.0)), lam_var));
    Var noise_w = sqrt(lam_var);

    Var kept = mul(x, tape.constant(std::move(keep_mask)));
    Var border_signal = mul(mul(x, tape.constant(std::move(border_mask))), signal_w);
    Var border_mix = mul(tape.constant(std::move(border_noise)), noise_w);
    return add(add(kept, border_signal), border_mix);
}

Var gate_per_unit(Var x, Var lambdas, const GateState& state, const RngStream& noise,
                  std::uint64_t counter_base, bool training) {
    // Shape facts are copied out up front; node storage may grow below.
    const std::vector<std::size_t> xshape = x.value().shape();
    const std::size_t n = state.width();
    if (lambdas.value().rank() != 1 || lambdas.value().numel() != n) {
        throw std::invalid_argument("gate_per_unit: lambda shape " +
                                    shape_string(lambdas.value().shape()) +
                                    " does not match gate width " + std::to_string(n));
    }
    const std::size_t cols = xshape.size() == 1 ? xshape[0] : xshape[1];
    if (xshape.size() > 2 || cols != n) {
        throw std::invalid_argument("gate_per_unit: input shape " + shape_string(xshape) +
                                    " does not match gate width " + std::to_string(n));
    }

    Tape& tape = *x.tape;
    Var y = colmul(x, sqrt(lambdas));
    if (training && state.noise_enabled) {
        const std::size_t rows = xshape.size() == 1 ? 1 : xshape[0];
        Tensor nz(xshape);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                nz[i * n + j] = state.sigma_ema[j] *
                                noise.normal(counter_base + static_cast<std::uint64_t>(i) * n + j);
            }
        }
        Var ones = tape.constant(Tensor::full({n}, 1.0));
        Var noise_w = sqrt(sub(ones, lambdas));
        y = add(y, colmul(tape.constant(std::move(nz)), noise_w));
    }
    return y;
}

Tensor gate_eval(const Tensor& x, const Tensor& lambdas) {
    const std::size_t n = lambdas.numel();
    const std::size_t cols = x.rank() == 1 ? x.numel() : x.dim(1);
    if (x.rank() > 2 || cols != n) {
        throw std::invalid_argument("gate_eval: input shape " + shape_string(x.shape()) +
                                    " does not match gate width " + std::to_string(n));
    }
    Tensor y(x.shape());
    const std::size_t rows = x.numel() / n;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = std::sqrt(lambdas[j]) * x[i * n + j];
    }
    return y;
}

double wiener_estimate(double eta, double lambda) {
    if (!(lambda >= 0.0 && lambda < 1.0)) {
        throw std::invalid_argument("wiener_estimate: lambda must lie in [0,1), got " +
                                    std::to_string(lambda));
    }
    return eta * std::sqrt(1.0 - lambda);
}

double mc_normalized_error(double lambda, std::size_t n_samples, std::uint64_t seed) {
    if (!(lambda >= 0.0 && lambda < 1.0)) {
        throw std::invalid_argument("mc_normalized_error: lambda must lie in [0,1), got " +
                                    std::to_string(lambda));
    }
    if (n_samples < 10'000) {
        throw std::invalid_argument("mc_normalized_error: need at least 1e4 samples, got " +
                                    std::to_string(n_samples));
    }

    const double sigma = 1.5;
    const double sw = std::sqrt(1.0 - lambda);
    const double nw = std::sqrt(lambda);
    RngStream base(seed);
    const RngStream xi = base.substream(1);
    const RngStream nu = base.substream(2);

    // Fixed-size chunks with an ordered final reduction keep the sum
    // bitwise identical whether or not chunks run in parallel.
    constexpr std::size_t kChunk = 8192;
    const std::size_t n_chunks = (n_samples + kChunk - 1) / kChunk;
    std::vector<double> partial(n_chunks, 0.0);

    const bool parallel = !kernels::serial_in_this_thread() && n_chunks > 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
    for (std::size_t c = 0; c < n_chunks; ++c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = begin + kChunk < n_samples ? begin + kChunk : n_samples;
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double s = sigma * xi.normal(i);
            const double eta = sw * s + nw * sigma * nu.normal(i);
            const double err = s - wiener_estimate(eta, lambda);
            acc += err * err;
        }
        partial[c] = acc;
    }
#ifndef _OPENMP
    (void)parallel;
#endif

    double total = 0.0;
    for (double p : partial) total += p;
    return total / (static_cast<double>(n_samples) * sigma * sigma);
}

Var lambda_penalty(Var lambdas, double beta) {
    if (beta < 0.0) throw std::invalid_argument("lambda_penalty: beta must be nonnegative");
    const double n = static_cast<double>(lambdas.value().numel());
    return scale(sum(square(lambdas)), beta / n);
}

double lambda_penalty_value(const Tensor& lambdas, double beta) {
    if (beta < 0.0) throw std::invalid_argument("lambda_penalty: beta must be nonnegative");
    double s = 0.0;
    for (std::size_t i = 0; i < lambdas.numel(); ++i) s += lambdas[i] * lambdas[i];
    return beta * s / static_cast<double>(lambdas.numel());
}

void update_sigma_ema(GateState& state, const Tensor& batch_features) {
    const std::size_t n = state.width();
    if (batch_features.rank() != 2 || batch_features.dim(1) != n) {
        throw std::invalid_argument("update_sigma_ema: batch shape " +
                                    shape_string(batch_features.shape()) +
                                    " does not match gate width " + std::to_string(n));
    }
    const std::size_t rows = batch_features.dim(0);
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < rows; ++i) mean += batch_features.at(i, j);
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double d = batch_features.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(rows);
        double ema = 0.99 * state.sigma_ema[j] + 0.01 * std::sqrt(var);
        state.sigma_ema[j] = ema < 1e-6 ? 1e-6 : ema;
    }
}

void clamp_lambdas(GateState& state) {
    for (std::size_t i = 0; i < state.width(); ++i) {
        double v = state.lambdas[i];
        if (v < state.lambda_min) v = state.lambda_min;
        if (v > kLambdaMax) v = kLambdaMax;
        state.lambdas[i] = v;
    }
}

}  // namespace dyncap::gate
