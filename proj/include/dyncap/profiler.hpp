#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dyncap/layers.hpp"

namespace dyncap::profiler {

struct LayerProfile {
    std::string name;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t params = 0;
    std::size_t flops_per_frame = 0;
};

// Static complexity accounting. All counts use the 1 MAC = 2 FLOPs
// convention, stated in every rendered header.
struct ProfileReport {
    std::vector<LayerProfile> layers;
    std::size_t total_params = 0;
    std::size_t total_flops_per_frame = 0;
    double frame_rate = 62.5;
    double flops_per_second = 0.0;

    std::string table() const;
    std::string csv() const;
};

// Counts parameters and per-frame FLOPs from layer shapes alone. Gated
// layers count at their structural width, so consolidation shows up as a
// smaller profile. frame_rate only scales the FLOP/s line.
ProfileReport profile(const nn::ModelGraph& model, double frame_rate = 62.5);

// Continuous complexity proxy for training curves: each gated output unit
// and the matching adaptive-layer input row counts in proportion to its
// lambda. Equals the profile total when every lambda is 1.
double effective_flops(const nn::ModelGraph& model);

}  // namespace dyncap::profiler
