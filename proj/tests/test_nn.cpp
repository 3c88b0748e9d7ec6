#include <cmath>
#include <memory>

#include "doctest.h"
#include "patchseg/errors.hpp"
#include "patchseg/nn/gradcheck.hpp"
#include "patchseg/nn/graph.hpp"
#include "patchseg/nn/loss.hpp"
#include "patchseg/nn/optim.hpp"
#include "patchseg/rng.hpp"

using namespace patchseg;
using namespace patchseg::nn;

namespace {

template <typename T>
void fill_random(Tensor<T>& t, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Prng rng(seed, 3);
    for (auto& v : t.v) v = static_cast<T>(rng.next_uniform(lo, hi));
}

// Builds a single-layer graph, runs forward + seeded backward with a simple
// weighted-sum loss, and finite-difference-checks every parameter and input.
template <typename T>
double check_layer_gradients(std::unique_ptr<Layer<T>> layer, const std::vector<Shape>& in_shapes,
                             std::size_t nb, std::uint64_t seed, Mode mode = Mode::eval) {
    Graph<T> g;
    std::vector<int> inputs;
    for (std::size_t i = 0; i < in_shapes.size(); ++i)
        inputs.push_back(g.add_input("x" + std::to_string(i), in_shapes[i]));
    const int out = g.add(std::move(layer), inputs);
    for (int i : inputs) {
        g.tensor(i).set_batch(nb, g.sample_shape(i));
        fill_random(g.tensor(i), seed + i);
    }
    g.init_params(seed);
    for (auto& p : g.params()) fill_random(*p.tensor, seed ^ fnv1a(p.name));

    // Loss: fixed random projection of the output (exposes every element).
    Tensor<T> proj;
    auto loss = [&]() {
        g.forward(nb, mode, /*dropout_seed=*/77);
        const auto& y = g.tensor(out);
        if (proj.v.size() != y.size()) {
            proj.resize(y.shape);
            fill_random(proj, seed + 999);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            s += static_cast<double>(proj.v[i]) * static_cast<double>(y.v[i]);
        return s;
    };
    loss();
    auto& yt = g.tensor(out);
    yt.zero_grad();
    for (std::size_t i = 0; i < yt.size(); ++i) yt.g[i] = proj.v[i];
    g.backward({out}, mode, 77);

    auto params = g.params();
    // Inputs participate as checked "parameters" too.
    for (int i : inputs)
        params.push_back({"input" + std::to_string(i), &g.tensor(i), 1, false});
    return grad_check<T>(params, loss, 1e-5).max_rel_err;
}

} // namespace

TEST_CASE("conv2d 1x1 identity kernel") {
    Graph<float> g;
    const int in = g.add_input("x", {1, 3, 3});
    const int conv = g.add(std::make_unique<Conv2d<float>>("c", 1, 1, 1), {in});
    g.tensor(in).set_batch(1, {1, 3, 3});
    for (int i = 0; i < 9; ++i) g.tensor(in).v[i] = static_cast<float>(i);
    auto params = g.layer(conv)->params();
    params[0].tensor->v[0] = 1.0f; // weight 1
    params[1].tensor->v[0] = 0.0f; // bias 0
    g.forward(1, Mode::eval, 0);
    for (int i = 0; i < 9; ++i) CHECK(g.tensor(conv).v[i] == static_cast<float>(i));
}

TEST_CASE("conv2d hand correlation: [[1,2],[3,4]] with kernel [[1,0],[0,1]] gives 5") {
    Graph<float> g;
    const int in = g.add_input("x", {1, 2, 2});
    const int conv = g.add(std::make_unique<Conv2d<float>>("c", 1, 1, 2), {in});
    g.tensor(in).set_batch(1, {1, 2, 2});
    g.tensor(in).v = {1, 2, 3, 4};
    auto params = g.layer(conv)->params();
    params[0].tensor->v = {1, 0, 0, 1};
    params[1].tensor->v = {0};
    g.forward(1, Mode::eval, 0);
    REQUIRE(g.tensor(conv).size() == 1);
    CHECK(g.tensor(conv).v[0] == 5.0f);
}

TEST_CASE("conv2d output size is in - kernel + 1") {
    Graph<float> g;
    const int in = g.add_input("x", {2, 25, 25});
    const int conv = g.add(std::make_unique<Conv2d<float>>("c", 2, 4, 5), {in});
    CHECK(g.sample_shape(conv) == Shape{4, 21, 21});
}

TEST_CASE("relu forward/backward definition") {
    Graph<float> g;
    const int in = g.add_input("x", {4});
    const int relu = g.add(std::make_unique<Relu<float>>("r"), {in});
    g.tensor(in).set_batch(1, {4});
    g.tensor(in).v = {-3.0f, 0.0f, 2.0f, 3.0f};
    g.forward(1, Mode::eval, 0);
    CHECK(g.tensor(relu).v == std::vector<float>{0, 0, 2, 3});
    auto& out = g.tensor(relu);
    out.g = {1.0f, 1.0f, 1.0f, 0.5f};
    g.backward({relu});
    CHECK(g.tensor(in).g == std::vector<float>{0, 0, 1.0f, 0.5f});
}

TEST_CASE("dropout eval mode is the identity; train mode preserves expectation") {
    Graph<float> g;
    const int in = g.add_input("x", {64});
    const int drop = g.add(std::make_unique<Dropout<float>>("d", 0.3), {in});
    g.tensor(in).set_batch(1, {64});
    for (int i = 0; i < 64; ++i) g.tensor(in).v[i] = 1.0f;
    g.forward(1, Mode::eval, 123);
    for (float v : g.tensor(drop).v) CHECK(v == 1.0f);

    // Inverted dropout: mean over many seeded passes returns the input
    // within 2% relative.
    double sum = 0.0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        g.forward(1, Mode::train, 1000 + t);
        for (float v : g.tensor(drop).v) sum += v;
    }
    const double mean = sum / (trials * 64.0);
    CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("dropout masks repeat with the seed") {
    Graph<float> g;
    const int in = g.add_input("x", {32});
    const int drop = g.add(std::make_unique<Dropout<float>>("d", 0.5), {in});
    g.tensor(in).set_batch(2, {32});
    fill_random(g.tensor(in), 5);
    g.forward(2, Mode::train, 42);
    const auto a = g.tensor(drop).v;
    g.forward(2, Mode::train, 42);
    CHECK(a == g.tensor(drop).v);
    g.forward(2, Mode::train, 43);
    CHECK(a != g.tensor(drop).v);
}

TEST_CASE("softmax rows sum to one for any magnitude") {
    Graph<float> g;
    const int in = g.add_input("x", {8});
    const int sm = g.add(std::make_unique<Softmax<float>>("s"), {in});
    Prng rng(3, 1);
    for (double mag : {1.0, 100.0, 1e4}) {
        g.tensor(in).set_batch(16, {8});
        for (auto& v : g.tensor(in).v)
            v = static_cast<float>(rng.next_uniform(-mag, mag));
        g.forward(16, Mode::eval, 0);
        const auto& y = g.tensor(sm);
        for (std::size_t n = 0; n < 16; ++n) {
            double s = 0.0;
            for (int c = 0; c < 8; ++c) {
                const float p = y.v[n * 8 + c];
                CHECK(p >= 0.0f);
                s += p;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("shape mismatch diagnostics name the layer") {
    Graph<float> g;
    const int in = g.add_input("x", {7});
    CHECK_THROWS_WITH_AS(g.add(std::make_unique<Dense<float>>("fc_bad", 9, 3), {in}),
                         doctest::Contains("fc_bad"), ValidationError);
}

TEST_CASE("gradient check per layer kind at 5 seeds (double precision)") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        CHECK(check_layer_gradients<double>(std::make_unique<Dense<double>>("fc", 6, 4),
                                            {{6}}, 3, seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Conv2d<double>>("c2", 2, 3, 3),
                                            {{2, 6, 6}}, 2, seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Conv3d<double>>("c3", 1, 2, 3),
                                            {{1, 5, 5, 5}}, 2, seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Relu<double>>("r"), {{10}}, 4, seed) <
              1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Softmax<double>>("s"), {{5}}, 3,
                                            seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Concat<double>>("cat"),
                                            {{3}, {4}, {2}}, 3, seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Add<double>>("add"), {{6}, {6}}, 3,
                                            seed) < 1e-6);
        CHECK(check_layer_gradients<double>(std::make_unique<Flatten<double>>("fl"), {{2, 3, 4}},
                                            2, seed) < 1e-6);
        // Train-mode dropout with a fixed seed is deterministic across the
        // finite-difference evaluations.
        CHECK(check_layer_gradients<double>(std::make_unique<Dropout<double>>("dr", 0.4), {{12}},
                                            3, seed, Mode::train) < 1e-6);
    }
}

TEST_CASE("dense layer with zero weights and inputs still differentiates cleanly") {
    Graph<double> g;
    const int in = g.add_input("x", {5});
    const int fc = g.add(std::make_unique<Dense<double>>("fc", 5, 3), {in});
    g.tensor(in).set_batch(1, {5});
    // all zeros
    auto loss = [&]() {
        g.forward(1, Mode::eval, 0);
        double s = 0.0;
        for (auto v : g.tensor(fc).v) s += v;
        return s;
    };
    loss();
    auto& out = g.tensor(fc);
    out.zero_grad();
    for (auto& gv : out.g) gv = 1.0;
    g.backward({fc});
    const auto report = grad_check<double>(g.params(), loss, 1e-5);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("softmax cross entropy hand values") {
    // uniform scores, 4 classes -> ln 4
    const auto [loss, grad] = softmax_cross_entropy<double>({0.0, 0.0, 0.0, 0.0}, 2, nullptr);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(std::abs(loss - 1.386294) < 1e-6);
    for (int c = 0; c < 4; ++c)
        CHECK(grad[c] == doctest::Approx(0.25 - (c == 2 ? 1.0 : 0.0)).epsilon(1e-12));

    // saturated target logit -> loss ~ 0
    const auto [sat, sat_grad] =
        softmax_cross_entropy<double>({1000.0, 0.0, 0.0, 0.0}, 0, nullptr);
    CHECK(sat == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(sat_grad[0]) < 1e-9);

    // unit weights match the unweighted loss exactly
    std::vector<double> unit{1.0, 1.0, 1.0, 1.0};
    const auto [wl, wg] = softmax_cross_entropy<double>({0.3, -0.7, 1.1, 0.0}, 1, &unit);
    const auto [ul, ug] = softmax_cross_entropy<double>({0.3, -0.7, 1.1, 0.0}, 1, nullptr);
    CHECK(wl == ul);
    CHECK(wg == ug);

    // doubling a class weight doubles its loss
    std::vector<double> w2{1.0, 2.0, 1.0, 1.0};
    const auto [dl, dg] = softmax_cross_entropy<double>({0.3, -0.7, 1.1, 0.0}, 1, &w2);
    CHECK(dl == doctest::Approx(2.0 * ul).epsilon(1e-12));
    CHECK(dg[1] == doctest::Approx(2.0 * ug[1]).epsilon(1e-12));

    CHECK_THROWS_AS(softmax_cross_entropy<double>({0.0, 0.0}, 2, nullptr), ValidationError);
    CHECK_THROWS_AS(softmax_cross_entropy<double>({0.0, 0.0}, -1, nullptr), ValidationError);
}

TEST_CASE("stabilized loss survives magnitude 1e4 logits") {
    Prng rng(9, 2);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> scores(6);
        for (auto& s : scores) s = rng.next_uniform(-1e4, 1e4);
        const auto [loss, grad] = softmax_cross_entropy<double>(scores, t % 6, nullptr);
        CHECK(std::isfinite(loss));
        double gs = 0.0;
        for (double gv : grad) {
            CHECK(std::isfinite(gv));
            gs += gv;
        }
        CHECK(std::abs(gs) < 1e-9); // gradient sums to zero
    }
}

TEST_CASE("poly schedule closed form") {
    OptimConfig cfg;
    cfg.lr0 = 1e-3;
    cfg.poly_power = 0.9;
    cfg.max_iter = 100;
    CHECK(poly_lr(0, cfg) == 1e-3);
    CHECK(poly_lr(100, cfg) == 0.0);
    CHECK(poly_lr(50, cfg) == doctest::Approx(5.35887e-4).epsilon(1e-5));
    CHECK(poly_lr(50, cfg) == doctest::Approx(1e-3 * std::pow(0.5, 0.9)).epsilon(1e-15));
    CHECK_THROWS_AS(poly_lr(101, cfg), ValidationError);
}

TEST_CASE("sgd step formulas through the optimizer") {
    Graph<float> g;
    const int in = g.add_input("x", {2});
    const int fc = g.add(std::make_unique<Dense<float>>("fc", 2, 1, false), {in});
    (void)fc;
    auto params = g.params();
    REQUIRE(params.size() == 1);
    auto& w = *params[0].tensor;
    w.v = {1.0f, 2.0f};

    OptimConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    SgdOptimizer<float> opt(cfg, params);

    // g = 0 -> fixed point
    w.zero_grad();
    opt.step(params, 1e-3);
    CHECK(w.v == std::vector<float>{1.0f, 2.0f});

    // plain SGD: w - lr*g
    w.g = {1.0f, -2.0f};
    opt.step(params, 0.5);
    CHECK(w.v[0] == doctest::Approx(0.5f));
    CHECK(w.v[1] == doctest::Approx(3.0f));

    // non-finite gradient aborts
    w.g = {std::nanf(""), 0.0f};
    CHECK_THROWS_WITH_AS(opt.step(params, 0.1), doctest::Contains("non-finite"),
                         ValidationError);
}

TEST_CASE("weight decay adds exactly lambda*w to the weight update, biases exempt") {
    Graph<float> g;
    const int in = g.add_input("x", {1});
    g.add(std::make_unique<Dense<float>>("fc", 1, 1, true), {in});
    auto params = g.params();
    REQUIRE(params.size() == 2);
    auto& w = *params[0].tensor;
    auto& b = *params[1].tensor;
    w.v = {2.0f};
    b.v = {3.0f};
    w.zero_grad();
    b.zero_grad();

    OptimConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.1;
    SgdOptimizer<float> opt(cfg, params);
    opt.step(params, 1.0);
    CHECK(w.v[0] == doctest::Approx(2.0f - 0.1f * 2.0f));
    CHECK(b.v[0] == 3.0f); // decay never touches biases
}

TEST_CASE("init is per-tensor seeded and name-stable") {
    Graph<float> a, b;
    const int ia = a.add_input("x", {4});
    a.add(std::make_unique<Dense<float>>("fc1", 4, 3), {ia});
    const int ib = b.add_input("x", {4});
    const int fb = b.add(std::make_unique<Dense<float>>("fc1", 4, 3), {ib});
    b.add(std::make_unique<Dense<float>>("fc_extra", 3, 2), {fb});
    a.init_params(11);
    b.init_params(11);
    CHECK(a.params()[0].tensor->v == b.params()[0].tensor->v);
}
