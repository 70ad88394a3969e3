#include "dyncap/rng.hpp"

#include <cmath>
#include <numbers>

namespace dyncap {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

std::uint64_t hash3(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return mix64(mix64(mix64(seed) ^ stream) ^ counter);
}

// Map to (0, 1), never exactly 0 or 1, so log() below is safe.
double to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

RngStream RngStream::substream(std::uint64_t id) const {
    return RngStream(seed_, mix64(stream_ ^ (id + 0x5851f42d4c957f2dULL)));
}

double RngStream::uniform(std::uint64_t counter) const {
    return to_unit(hash3(seed_, stream_, counter));
}

double RngStream::normal(std::uint64_t counter) const {
    const std::uint64_t h = hash3(seed_, stream_, counter);
    const double u1 = to_unit(h);
    const double u2 = to_unit(mix64(h ^ 0xda3e39cb94b95bdbULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace dyncap
