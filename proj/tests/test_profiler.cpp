#include <cmath>
#include <string>

#include "doctest.h"
#include "dyncap/gate.hpp"
#include "dyncap/layers.hpp"
#include "dyncap/profiler.hpp"
#include "dyncap/rng.hpp"

using namespace dyncap;

namespace {

nn::ModelGraph gated_model() {
    nn::ModelGraph m;
    m.add_fixed(4, 6, true, nn::Activation::tanh);
    m.add_dynamic(6, 8, true, nn::Activation::identity);
    m.add_adaptive(3, false);
    m.init_params(RngStream(11, 0));
    return m;
}

void set_all_lambdas(nn::ModelGraph& m, double v) {
    for (std::size_t i = 0; i < m.layer_count(); ++i) {
        if (auto* d = std::get_if<nn::DynamicLinear>(&m.layer(i).impl)) {
            for (double& l : d->gate.lambdas.data()) {
                l = v;
            }
        }
    }
}

}  // namespace

TEST_CASE("single dense layer counts match the closed form") {
    nn::ModelGraph m;
    m.add_fixed(257, 32, false);
    m.init_params(RngStream(1, 0));
    const auto report = profiler::profile(m, 62.5);
    REQUIRE(report.layers.size() == 1);
    CHECK(report.layers[0].in_dim == 257);
    CHECK(report.layers[0].out_dim == 32);
    CHECK(report.layers[0].params == 8224);
    CHECK(report.layers[0].flops_per_frame == 16448);
    CHECK(report.total_params == 8224);
    CHECK(report.total_flops_per_frame == 16448);
    CHECK(report.flops_per_second == 1028000.0);
}

TEST_CASE("bias adds one parameter and one flop per output") {
    nn::ModelGraph m;
    m.add_fixed(10, 4, true);
    m.init_params(RngStream(2, 0));
    const auto report = profiler::profile(m);
    CHECK(report.total_params == 44);
    CHECK(report.total_flops_per_frame == 84);
}

TEST_CASE("empty model profiles to zeros") {
    nn::ModelGraph m;
    const auto report = profiler::profile(m);
    CHECK(report.layers.empty());
    CHECK(report.total_params == 0);
    CHECK(report.total_flops_per_frame == 0);
    CHECK(report.flops_per_second == 0.0);
    CHECK(profiler::effective_flops(m) == 0.0);
}

TEST_CASE("totals are sums over layers and scale with frame rate") {
    auto m = gated_model();
    const auto report = profiler::profile(m, 62.5);
    std::size_t params = 0;
    std::size_t flops = 0;
    for (const auto& e : report.layers) {
        params += e.params;
        flops += e.flops_per_frame;
    }
    CHECK(report.total_params == params);
    CHECK(report.total_flops_per_frame == flops);
    CHECK(report.total_params == m.param_count() - 8);  // lambdas are not counted here

    const auto doubled = profiler::profile(m, 125.0);
    CHECK(doubled.flops_per_second == 2.0 * report.flops_per_second);
}

TEST_CASE("flops scale exactly linearly in the output width") {
    nn::ModelGraph a;
    a.add_fixed(13, 5, false);
    nn::ModelGraph b;
    b.add_fixed(13, 10, false);
    CHECK(profiler::profile(b).total_flops_per_frame ==
          2 * profiler::profile(a).total_flops_per_frame);
}

TEST_CASE("consolidation never increases the profile, equality iff nothing pruned") {
    auto m = gated_model();
    const auto before = profiler::profile(m);

    auto kept = m.consolidate(0.5);
    CHECK(profiler::profile(kept).total_flops_per_frame == before.total_flops_per_frame);
    CHECK(profiler::profile(kept).total_params == before.total_params);

    auto* d = std::get_if<nn::DynamicLinear>(&m.layer(1).impl);
    REQUIRE(d != nullptr);
    d->gate.lambdas.data()[0] = 0.1;
    d->gate.lambdas.data()[3] = 0.2;
    auto pruned = m.consolidate(0.5);
    CHECK(profiler::profile(pruned).total_flops_per_frame < before.total_flops_per_frame);
    CHECK(profiler::profile(pruned).total_params < before.total_params);
}

TEST_CASE("effective flops interpolate between zero and the full profile") {
    auto m = gated_model();

    set_all_lambdas(m, 1.0);
    const auto full = profiler::profile(m);
    CHECK(profiler::effective_flops(m) == doctest::Approx(full.total_flops_per_frame).epsilon(1e-12));

    // Halving every lambda halves the gated layer and its follower's matmul.
    set_all_lambdas(m, 0.5);
    const double fixed_part = 2.0 * 4 * 6 + 6;
    const double gate_part = 2.0 * 6 * 8 + 8;
    const double follow_part = 2.0 * 8 * 3;
    const double expect = fixed_part + 0.5 * gate_part + 0.5 * follow_part;
    CHECK(profiler::effective_flops(m) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("profile is a pure function of the model") {
    auto m = gated_model();
    const auto a = profiler::profile(m, 62.5);
    const auto b = profiler::profile(m, 62.5);
    CHECK(a.table() == b.table());
    CHECK(a.csv() == b.csv());
}

TEST_CASE("rendered reports state the MAC convention and the exact counts") {
    nn::ModelGraph m;
    m.add_fixed(257, 32, false);
    m.init_params(RngStream(1, 0));
    const auto report = profiler::profile(m, 62.5);

    const std::string table = report.table();
    CHECK(table.find("1 MAC = 2 FLOPs") != std::string::npos);
    CHECK(table.find("16448") != std::string::npos);
    CHECK(table.find("1028000") != std::string::npos);

    const std::string csv = report.csv();
    CHECK(csv.find("1 MAC = 2 FLOPs") != std::string::npos);
    CHECK(csv.find("layer,in_dim,out_dim,params,flops_per_frame") != std::string::npos);
    CHECK(csv.find("layer0:fixed,257,32,8224,16448") != std::string::npos);
}
