#pragma once

#include <cstdint>

namespace dyncap {

// Counter-based random stream: draw(seed, stream, counter) is a pure
// function, so every noise value in a training run is addressable by
// (step, layer, unit) and independent of evaluation order.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Derived stream with an independent value sequence.
    RngStream substream(std::uint64_t id) const;

    // Uniform in the open interval (0, 1).
    double uniform(std::uint64_t counter) const;

    // Standard normal via Box-Muller on two hashed uniforms.
    double normal(std::uint64_t counter) const;

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

// 64-bit finalizer used for all counter hashing (SplitMix64).
std::uint64_t mix64(std::uint64_t z);

}  // namespace dyncap
