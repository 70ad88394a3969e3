#include "dyncap/filterbank.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dyncap/fft.hpp"

namespace dyncap::fb {

Family family_from_string(const std::string& name) {
    if (name == "bark") return Family::bark;
    if (name == "mel") return Family::mel;
    if (name == "erb") return Family::erb;
    throw std::invalid_argument("unknown filter bank family '" + name + "'");
}

std::string family_name(Family f) {
    switch (f) {
        case Family::bark: return "bark";
        case Family::mel: return "mel";
        case Family::erb: return "erb";
    }
    throw std::logic_error("unknown family");
}

double warp(Family f, double hz) {
    switch (f) {
        case Family::bark: return 26.81 * hz / (1960.0 + hz) - 0.53;
        case Family::mel: return 2595.0 * std::log10(1.0 + hz / 700.0);
        case Family::erb: return 21.4 * std::log10(1.0 + 0.00437 * hz);
    }
    throw std::logic_error("unknown family");
}

namespace {

double unwarp(Family f, double v) {
    switch (f) {
        case Family::bark: return 1960.0 * (v + 0.53) / (26.28 - v);
        case Family::mel: return 700.0 * (std::pow(10.0, v / 2595.0) - 1.0);
        case Family::erb: return (std::pow(10.0, v / 21.4) - 1.0) / 0.00437;
    }
    throw std::logic_error("unknown family");
}

void validate(const FilterBankSpec& spec) {
    if (spec.n_filters < 2) throw std::invalid_argument("filter bank needs at least 2 filters");
    if (spec.fft_size == 0 || (spec.fft_size & (spec.fft_size - 1)) != 0) {
        throw std::invalid_argument("fft_size must be a power of two, got " +
                                    std::to_string(spec.fft_size));
    }
    if (!(spec.sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
}

// n_filters + 2 equally spaced break points on the warped scale.
std::vector<double> break_points(const FilterBankSpec& spec) {
    const double lo = warp(spec.family, 0.0);
    const double hi = warp(spec.family, spec.sample_rate / 2.0);
    std::vector<double> pts(spec.n_filters + 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pts[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(spec.n_filters + 1);
    }
    return pts;
}

}  // namespace

Tensor build_filterbank(const FilterBankSpec& spec) {
    validate(spec);
    const std::size_t bins = spec.bins();
    const std::vector<double> pts = break_points(spec);

    std::vector<double> warped_bins(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        const double hz = static_cast<double>(b) * spec.sample_rate / static_cast<double>(spec.fft_size);
        warped_bins[b] = warp(spec.family, hz);
    }

    Tensor fbm({bins, spec.n_filters});
    for (std::size_t j = 0; j < spec.n_filters; ++j) {
        const double left = pts[j], center = pts[j + 1], right = pts[j + 2];
        double peak = 0.0;
        for (std::size_t b = 0; b < bins; ++b) {
            const double w = warped_bins[b];
            double v = 0.0;
            if (w > left && w < center) v = (w - left) / (center - left);
            else if (w >= center && w < right) v = (right - w) / (right - center);
            if (v > 0.0) fbm.at(b, j) = v;
            peak = std::max(peak, v);
        }
        if (peak <= 0.0) {
            throw std::invalid_argument("degenerate filter " + std::to_string(j) + ": " +
                                        std::to_string(spec.n_filters) +
                                        " filters cover no bins at fft_size " +
                                        std::to_string(spec.fft_size));
        }
        for (std::size_t b = 0; b < bins; ++b) fbm.at(b, j) /= peak;
    }
    return fbm;
}

std::vector<double> center_frequencies(const FilterBankSpec& spec) {
    validate(spec);
    const std::vector<double> pts = break_points(spec);
    std::vector<double> centers(spec.n_filters);
    for (std::size_t j = 0; j < spec.n_filters; ++j) centers[j] = unwarp(spec.family, pts[j + 1]);
    return centers;
}

Tensor white_noise_spectrum(const RngStream& rng, const FilterBankSpec& spec, std::size_t n_frames) {
    validate(spec);
    if (n_frames < 1) throw std::invalid_argument("n_frames must be at least 1");
    const std::size_t n = spec.fft_size;
    const std::vector<double> window = fft::hann(n);

    Tensor out({n_frames, spec.bins()});
    std::vector<double> frame(n);
    for (std::size_t f = 0; f < n_frames; ++f) {
        for (std::size_t i = 0; i < n; ++i) {
            frame[i] = window[i] * rng.normal(static_cast<std::uint64_t>(f) * n + i);
        }
        const std::vector<double> mag = fft::magnitude(frame);
        for (std::size_t b = 0; b < mag.size(); ++b) out.at(f, b) = mag[b];
    }
    return out;
}

double overparam_factor(double capacity, double min_capacity) {
    if (!(capacity > 0.0) || !(min_capacity > 0.0)) {
        throw std::invalid_argument("overparam_factor: capacities must be positive");
    }
    return capacity / min_capacity;
}

}  // namespace dyncap::fb
