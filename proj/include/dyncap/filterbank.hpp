#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap::fb {

enum class Family : std::uint8_t { bark = 0, mel = 1, erb = 2 };

Family family_from_string(const std::string& name);
std::string family_name(Family f);

struct FilterBankSpec {
    Family family = Family::mel;
    std::size_t n_filters = 32;
    std::size_t fft_size = 512;
    double sample_rate = 16000.0;

    std::size_t bins() const { return fft_size / 2 + 1; }
};

// Frequency in Hz mapped onto the family's auditory scale.
double warp(Family f, double hz);

// Triangular filters with peaks equally spaced on the warped scale between
// 0 Hz and Nyquist, each column peak-normalized to 1. Shape (bins, n_filters).
// Throws if any filter covers no bins.
Tensor build_filterbank(const FilterBankSpec& spec);

// Center frequency of each filter in Hz, strictly increasing.
std::vector<double> center_frequencies(const FilterBankSpec& spec);

// Magnitude spectra of Hann-windowed Gaussian noise frames, shape
// (n_frames, bins). Frame f, sample i draws rng.normal(f*fft_size + i).
Tensor white_noise_spectrum(const RngStream& rng, const FilterBankSpec& spec, std::size_t n_frames);

// Ratio of a model's capacity to the smallest capacity that can represent
// the task.
double overparam_factor(double capacity, double min_capacity);

}  // namespace dyncap::fb
