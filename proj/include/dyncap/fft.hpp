#pragma once

#include <cstddef>
#include <vector>

namespace dyncap::fft {

// In-place radix-2 complex transform. Lengths must match and be a power
// of two. Purely sequential and bitwise deterministic.
void transform(std::vector<double>& re, std::vector<double>& im);

// Periodic Hann window of length n.
std::vector<double> hann(std::size_t n);

// Magnitudes of the one-sided spectrum of a real frame: bins 0..n/2.
// Frame length must be a power of two.
std::vector<double> magnitude(const std::vector<double>& frame);

}  // namespace dyncap::fft
