#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dyncap/gate.hpp"
#include "dyncap/layers.hpp"
#include "dyncap/profiler.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tape.hpp"
#include "dyncap/tensor.hpp"
#include "dyncap/trainer.hpp"

using namespace dyncap;

namespace {

// Batches drawn from a fixed random linear map, pure in the step index.
train::BatchFn linear_task(std::size_t in, std::size_t out, std::size_t batch,
                           std::uint64_t seed) {
    Tensor w({in, out});
    const RngStream wr(seed, 1000);
    for (std::size_t j = 0; j < w.numel(); ++j) {
        w[j] = wr.normal(j) / std::sqrt(static_cast<double>(in));
    }
    const RngStream xr(seed, 2000);
    return [=](std::size_t step) {
        Tensor x({batch, in});
        const RngStream sub = xr.substream(step);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            x[i] = sub.normal(i);
        }
        Tensor y({batch, out});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out; ++o) {
                double acc = 0.0;
                for (std::size_t k = 0; k < in; ++k) {
                    acc += x.at(b, k) * w.at(k, o);
                }
                y.at(b, o) = acc;
            }
        }
        return std::pair<Tensor, Tensor>{std::move(x), std::move(y)};
    };
}

nn::ModelGraph small_gated_mlp(std::uint64_t seed) {
    nn::ModelGraph m;
    m.add_fixed(6, 16, true, nn::Activation::tanh);
    m.add_dynamic(16, 12, true);
    m.add_adaptive(3, true);
    m.init_params(RngStream(seed, 0));
    return m;
}

}  // namespace

TEST_CASE("l1 loss is the mean absolute difference") {
    Tape tape;
    Var p = tape.constant(Tensor({3}, {1.0, 2.0, 3.0}));
    Var t = tape.constant(Tensor({3}, {2.0, 2.0, 5.0}));
    CHECK(train::l1_loss(p, t).value().item() == 1.0);
    CHECK(train::l1_loss_value(Tensor({3}, {1.0, 2.0, 3.0}), Tensor({3}, {2.0, 2.0, 5.0})) == 1.0);
}

TEST_CASE("l1 loss gradient is the scaled sign of the difference") {
    Tape tape;
    Var p = tape.leaf(Tensor({3}, {1.0, 3.0, -2.0}), true);
    Var t = tape.constant(Tensor({3}, {2.0, 1.0, -4.0}));
    tape.backward(train::l1_loss(p, t));
    const auto g = p.grad().data();
    CHECK(g[0] == doctest::Approx(-1.0 / 3).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("l1 loss rejects mismatched shapes") {
    Tape tape;
    Var p = tape.constant(Tensor({3}, {1.0, 2.0, 3.0}));
    Var t = tape.constant(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(train::l1_loss(p, t), std::invalid_argument);
    CHECK_THROWS_AS(train::l1_loss_value(Tensor({3}), Tensor({4})), std::invalid_argument);
}

TEST_CASE("binary cross-entropy oracles") {
    CHECK(train::bce_loss({1}, {0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(train::bce_loss({1, 0}, {0.5, 0.5}, 1.5) ==
          doctest::Approx(1.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(train::bce_loss({1, 0}, {0.5, 0.5}, 1.5) == doctest::Approx(0.8664).epsilon(1e-4));

    // Perfect predictions cost only the clamp.
    CHECK(train::bce_loss({1, 0, 1}, {1.0, 0.0, 1.0}) <= 1e-6);

    // The clamp keeps confident mistakes finite.
    const double worst = train::bce_loss({1}, {0.0});
    CHECK(std::isfinite(worst));
    CHECK(worst == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));

    CHECK_THROWS_AS(train::bce_loss({1, 0}, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS(train::bce_loss({2}, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS(train::bce_loss({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(train::bce_loss({1}, {0.5}, -1.0), std::invalid_argument);
}

TEST_CASE("equal error rate on separable and chance-level scores") {
    const auto perfect = train::eer({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(perfect.first == 0.0);
    CHECK(perfect.second > 0.2);
    CHECK(perfect.second < 0.8);

    const auto coin = train::eer({0.9, 0.8, 0.2, 0.1}, {1, 0, 1, 0});
    CHECK(coin.first == 0.5);
    CHECK(coin.second == 0.5);
}

TEST_CASE("equal error rate of random scores sits near one half") {
    const RngStream rng(123, 9);
    const std::size_t n = 10000;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.uniform(i);
        labels[i] = rng.uniform(n + i) < 0.5 ? 0 : 1;
    }
    const auto r = train::eer(scores, labels);
    CHECK(r.first > 0.48);
    CHECK(r.first < 0.52);
}

TEST_CASE("equal error rate is invariant under strictly increasing transforms") {
    const RngStream rng(7, 4);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < 400; ++i) {
        const int y = rng.uniform(i) < 0.5 ? 0 : 1;
        scores.push_back(rng.normal(1000 + i) + (y == 1 ? 1.0 : 0.0));
        labels.push_back(y);
    }
    const auto base = train::eer(scores, labels);

    std::vector<double> affine(scores.size());
    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        affine[i] = 2.0 * scores[i] + 3.0;
        warped[i] = std::exp(scores[i]);
    }
    CHECK(train::eer(affine, labels).first == base.first);
    CHECK(train::eer(warped, labels).first == base.first);
}

TEST_CASE("equal error rate input validation") {
    CHECK_THROWS_AS(train::eer({0.5, 0.7}, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(train::eer({0.5}, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(train::eer({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(train::eer({0.5, 0.5}, {1, 0}), std::invalid_argument);
}

TEST_CASE("adam first step moves a quadratic weight by about the learning rate") {
    train::AdamOptimizer opt;
    Tensor w({1}, {1.0});
    Tensor g({1}, {2.0});  // gradient of w^2 at w = 1
    opt.step("w", w, g);
    CHECK(std::fabs(w[0] - 0.999) < 1e-9);
    CHECK(opt.step_count("w") == 1);
}

TEST_CASE("adam leaves a parameter with zero gradient untouched") {
    train::AdamOptimizer opt;
    Tensor w({2}, {1.0, -2.5});
    const Tensor zero = Tensor::zeros({2});
    opt.step("w", w, zero);
    opt.step("w", w, zero);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.5);
    CHECK(opt.step_count("w") == 2);
    CHECK(opt.step_count("other") == 0);
}

TEST_CASE("decoupled weight decay shrinks a zero-gradient weight") {
    train::AdamConfig cfg;
    cfg.weight_decay = 1e-2;
    train::AdamOptimizer opt(cfg);
    Tensor w({1}, {1.0});
    opt.step("w", w, Tensor::zeros({1}));
    CHECK(w[0] == doctest::Approx(1.0 - 1e-5).epsilon(1e-12));
}

TEST_CASE("adam rejects non-finite gradients by parameter name") {
    train::AdamOptimizer opt;
    Tensor w({2}, {1.0, 2.0});
    Tensor g({2}, {0.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_WITH_AS(opt.step("layer0.weight", w, g),
                         doctest::Contains("layer0.weight"), std::runtime_error);
    CHECK_THROWS_AS(opt.step("layer0.weight", w, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("adam updates are invariant to parameter ordering") {
    train::AdamOptimizer first;
    train::AdamOptimizer second;
    Tensor a1({3}, {0.5, -1.0, 2.0});
    Tensor b1({2}, {1.5, 0.25});
    Tensor a2 = a1;
    Tensor b2 = b1;
    for (int it = 0; it < 3; ++it) {
        Tensor ga({3}, {0.1 * it, -0.2, 0.3});
        Tensor gb({2}, {-0.05, 0.4 * it});
        first.step("a", a1, ga);
        first.step("b", b1, gb);
        second.step("b", b2, gb);
        second.step("a", a2, ga);
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a1[i] == a2[i]);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(b1[i] == b2[i]);
    }
}

TEST_CASE("composite loss adds exactly the capacity penalty gradient") {
    const RngStream noise(42, 3);
    const double beta = 0.7;
    for (double l1_scale : {1.0, 0.5}) {
        nn::ModelGraph m;
        m.add_dynamic(4, 5, false);
        m.init_params(RngStream(19, 0));

        const auto batch = linear_task(4, 5, 3, 91)(7);

        Tape ta;
        Var out_a = m.forward(ta, ta.constant(batch.first), true, noise, 7);
        Var task_a = train::l1_loss(out_a, ta.constant(batch.second));
        ta.backward(task_a);
        const std::vector<nn::ParamRef> params_a = m.params();
        Tensor task_grad;
        Tensor lambdas;
        for (std::size_t i = 0; i < params_a.size(); ++i) {
            if (params_a[i].is_lambda) {
                task_grad = m.bound_params()[i].grad();
                lambdas = *params_a[i].tensor;
            }
        }

        Tape tb;
        Var out_b = m.forward(tb, tb.constant(batch.first), true, noise, 7);
        Var task_b = train::l1_loss(out_b, tb.constant(batch.second));
        const std::vector<nn::ParamRef> params_b = m.params();
        std::vector<Var> lambda_vars;
        for (std::size_t i = 0; i < params_b.size(); ++i) {
            if (params_b[i].is_lambda) {
                lambda_vars.push_back(m.bound_params()[i]);
            }
        }
        REQUIRE(lambda_vars.size() == 1);
        tb.backward(train::composite_loss(task_b, lambda_vars, beta, l1_scale));
        const Tensor comp_grad = lambda_vars[0].grad();

        const double n = static_cast<double>(lambdas.numel());
        for (std::size_t j = 0; j < lambdas.numel(); ++j) {
            const double expect = l1_scale * task_grad[j] + 2.0 * beta * lambdas[j] / n;
            CHECK(std::fabs(comp_grad[j] - expect) < 1e-6);
        }
    }
}

TEST_CASE("phase one pins every lambda to the ceiling") {
    auto m = small_gated_mlp(5);
    train::TrainConfig cfg;
    cfg.total_steps = 10;
    cfg.phase1_steps = 10;
    cfg.lr = 1e-2;
    const auto history = train::train_two_phase(m, linear_task(6, 3, 4, 17), cfg, RngStream(5, 1));
    REQUIRE(history.steps.size() == 10);
    const auto& d = std::get<nn::DynamicLinear>(m.layer(1).impl);
    for (double l : d.gate.lambdas.data()) {
        CHECK(l == gate::kLambdaMax);
    }
    for (const auto& rec : history.steps) {
        CHECK(rec.mean_lambda == doctest::Approx(gate::kLambdaMax).epsilon(1e-12));
        CHECK(rec.lambda_penalty == 0.0);
    }
}

TEST_CASE("pure penalty dynamics drive lambdas down to the floor") {
    nn::ModelGraph m;
    m.add_dynamic(4, 6, false);
    m.init_params(RngStream(21, 0));

    train::TrainConfig cfg;
    cfg.total_steps = 40;
    cfg.phase1_steps = 0;
    cfg.lr = 0.05;
    cfg.beta = 1.0;
    cfg.l1_scale = 0.0;  // silences the task term, leaving penalty-only descent
    cfg.lambda_min = 0.3;
    const auto history = train::train_two_phase(m, linear_task(4, 6, 2, 33), cfg, RngStream(21, 1));

    double prev = gate::kLambdaMax;
    for (const auto& rec : history.steps) {
        CHECK(rec.mean_lambda <= prev);
        prev = rec.mean_lambda;
    }
    const auto& d = std::get<nn::DynamicLinear>(m.layer(0).impl);
    for (double l : d.gate.lambdas.data()) {
        CHECK(l == 0.3);  // clamped exactly at the configured floor
    }
}

TEST_CASE("training histories are deterministic in the seed") {
    train::TrainConfig cfg;
    cfg.total_steps = 25;
    cfg.phase1_steps = 10;
    cfg.lr = 5e-3;
    cfg.beta = 1.0;

    auto m1 = small_gated_mlp(9);
    const auto h1 = train::train_two_phase(m1, linear_task(6, 3, 4, 55), cfg, RngStream(9, 1));
    auto m2 = small_gated_mlp(9);
    const auto h2 = train::train_two_phase(m2, linear_task(6, 3, 4, 55), cfg, RngStream(9, 1));

    CHECK(h1.csv() == h2.csv());
    for (std::size_t i = 0; i < m1.layer_count(); ++i) {
        if (const auto* d1 = std::get_if<nn::DynamicLinear>(&m1.layer(i).impl)) {
            const auto& d2 = std::get<nn::DynamicLinear>(m2.layer(i).impl);
            for (std::size_t j = 0; j < d1->weight.numel(); ++j) {
                CHECK(d1->weight[j] == d2.weight[j]);
            }
            for (std::size_t j = 0; j < d1->gate.width(); ++j) {
                CHECK(d1->gate.lambdas[j] == d2.gate.lambdas[j]);
            }
        }
    }
}

TEST_CASE("a frozen noiseless gate trains exactly like a scaled fixed layer") {
    const std::uint64_t seed = 31;
    nn::ModelGraph gated;
    gated.add_dynamic(5, 7, true);
    gated.init_params(RngStream(seed, 0));
    std::get<nn::DynamicLinear>(gated.layer(0).impl).gate.noise_enabled = false;

    nn::ModelGraph fixed;
    fixed.add_fixed(5, 7, true, nn::Activation::identity, std::sqrt(gate::kLambdaMax));
    fixed.init_params(RngStream(seed, 0));

    train::TrainConfig cfg;
    cfg.total_steps = 40;
    cfg.phase1_steps = 40;  // lambdas never move
    cfg.lr = 1e-2;
    const auto task = linear_task(5, 7, 4, 77);
    const auto hg = train::train_two_phase(gated, task, cfg, RngStream(seed, 1));
    const auto hf = train::train_two_phase(fixed, task, cfg, RngStream(seed, 1));

    REQUIRE(hg.steps.size() == hf.steps.size());
    for (std::size_t i = 0; i < hg.steps.size(); ++i) {
        CHECK(std::fabs(hg.steps[i].task_loss - hf.steps[i].task_loss) <= 1e-9);
    }
    const auto& dw = std::get<nn::DynamicLinear>(gated.layer(0).impl).weight;
    const auto& fw = std::get<nn::FixedLinear>(fixed.layer(0).impl).weight;
    for (std::size_t j = 0; j < dw.numel(); ++j) {
        CHECK(std::fabs(dw[j] - fw[j]) <= 1e-9);
    }
}

TEST_CASE("without gates the two-phase schedule degenerates to plain training") {
    train::TrainConfig plain;
    plain.total_steps = 20;
    plain.phase1_steps = 20;
    plain.lr = 1e-2;
    train::TrainConfig composite = plain;
    composite.phase1_steps = 0;
    composite.beta = 0.0;
    composite.l1_scale = 1.0;

    nn::ModelGraph m1;
    m1.add_fixed(4, 8, true, nn::Activation::tanh);
    m1.add_fixed(8, 3, true);
    m1.init_params(RngStream(13, 0));
    nn::ModelGraph m2;
    m2.add_fixed(4, 8, true, nn::Activation::tanh);
    m2.add_fixed(8, 3, true);
    m2.init_params(RngStream(13, 0));

    const auto task = linear_task(4, 3, 4, 29);
    const auto h1 = train::train_two_phase(m1, task, plain, RngStream(13, 1));
    const auto h2 = train::train_two_phase(m2, task, composite, RngStream(13, 1));
    CHECK(h1.csv() == h2.csv());
}

TEST_CASE("two-phase training shrinks capacity on a redundant model") {
    auto m = small_gated_mlp(3);
    train::TrainConfig cfg;
    cfg.total_steps = 160;
    cfg.phase1_steps = 60;
    cfg.lr = 5e-3;
    cfg.beta = 2.0;
    const auto history = train::train_two_phase(m, linear_task(6, 3, 8, 111), cfg, RngStream(3, 1));

    REQUIRE(history.steps.size() == 160);
    for (const auto& rec : history.steps) {
        CHECK(std::isfinite(rec.task_loss));
        CHECK(rec.active_units <= 12);
    }
    CHECK(history.steps[59].mean_lambda == doctest::Approx(gate::kLambdaMax).epsilon(1e-12));
    CHECK(history.steps[60].lambda_penalty > 0.0);
    CHECK(history.steps.back().mean_lambda < 0.9);
    CHECK(history.steps.back().flops_per_frame < history.steps.front().flops_per_frame);

    // Task loss falls over the noise-light first phase.
    double early = 0.0;
    double settled = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        early += history.steps[i].task_loss;
        settled += history.steps[50 + i].task_loss;
    }
    CHECK(settled < early);

    const std::string csv = history.csv();
    CHECK(csv.rfind("step,task_loss,lambda_penalty,mean_lambda,active_units,flops_per_frame\n",
                    0) == 0);
}

TEST_CASE("a non-finite loss aborts with the step index") {
    auto m = small_gated_mlp(6);
    const auto task = linear_task(6, 3, 4, 44);
    const train::BatchFn poisoned = [&](std::size_t step) {
        auto b = task(step);
        if (step == 3) {
            b.second[0] = std::numeric_limits<double>::quiet_NaN();
        }
        return b;
    };
    train::TrainConfig cfg;
    cfg.total_steps = 10;
    cfg.phase1_steps = 5;
    CHECK_THROWS_WITH_AS(train::train_two_phase(m, poisoned, cfg, RngStream(6, 1)),
                         doctest::Contains("step 3"), std::runtime_error);
}

TEST_CASE("training configuration validation") {
    train::TrainConfig cfg;
    CHECK_NOTHROW(train::validate(cfg));

    train::TrainConfig bad = cfg;
    bad.total_steps = 0;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.phase1_steps = bad.total_steps + 1;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.beta = -0.1;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.l1_scale = -1.0;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.lambda_min = 1.0;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.batch_frames = 0;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
    bad = cfg;
    bad.weight_decay = -1e-3;
    CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
}
