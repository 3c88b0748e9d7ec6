#include <cmath>

#include "doctest.h"
#include "patchseg/errors.hpp"
#include "patchseg/model.hpp"
#include "patchseg/nn/gradcheck.hpp"
#include "patchseg/nn/loss.hpp"
#include "patchseg/rng.hpp"

using namespace patchseg;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.num_classes = 4;
    cfg.landmarks_per_axis = 3;
    cfg.conv1_ch = 2;
    cfg.conv2_ch = 2;
    cfg.mix_ch = 2;
    cfg.fc1_units = 8;
    cfg.fc2_units = 8;
    cfg.dist_conv_ch = 2;
    cfg.dist_fc_units = 8;
    cfg.c3d_ch1 = cfg.c3d_ch2 = cfg.c3d_ch3 = cfg.c3d_ch4 = 1;
    return cfg;
}

PatchSample random_sample(const NetworkConfig& cfg, std::uint64_t seed) {
    Prng rng(seed, 4);
    PatchSample s;
    auto fill2d = [&](Patch2d& p) {
        for (auto& v : p) v = static_cast<float>(rng.next_uniform(-1, 1));
    };
    fill2d(s.p25);
    fill2d(s.p51s);
    fill2d(s.p71s);
    if (cfg.use_3d) {
        s.p3d.resize(kPatch3d * kPatch3d * kPatch3d);
        for (auto& v : s.p3d) v = static_cast<float>(rng.next_uniform(-1, 1));
    }
    if (cfg.use_dist) {
        const int k = cfg.landmarks_per_axis;
        s.dist.resize(static_cast<std::size_t>(k) * k * k);
        for (auto& v : s.dist) v = static_cast<float>(rng.next_uniform(0, 60));
    }
    if (cfg.use_prob) {
        s.atlas_prob.assign(cfg.num_classes, 1.0f / cfg.num_classes);
    }
    s.target = static_cast<std::uint16_t>(seed % cfg.num_classes);
    return s;
}

template <typename T>
void zero_params_matching(Model<T>& m, const std::string& prefix) {
    for (auto& p : m.graph.params())
        if (p.name.rfind(prefix, 0) == 0)
            std::fill(p.tensor->v.begin(), p.tensor->v.end(), T(0));
}

} // namespace

TEST_CASE("a dense 10->5 layer with bias has 55 parameters") {
    nn::Dense<float> fc("fc", 10, 5, true);
    std::size_t n = 0;
    for (auto& p : fc.params()) n += p.tensor->size();
    CHECK(n == 55);
}

TEST_CASE("ProbBranch adds exactly 3*l^2 parameters: 54675 at l=135") {
    NetworkConfig cfg = tiny_config();
    cfg.num_classes = 135;
    const std::size_t base = count_params(cfg);
    cfg.use_prob = true;
    const std::size_t with_prob = count_params(cfg);
    CHECK(with_prob - base == 54675);
    CHECK(with_prob - base == 3u * 135 * 135);
    CHECK(with_prob - base == 1304090u - 1249415u);
    CHECK(with_prob - base == 1563186u - 1508511u);
}

TEST_CASE("parameter count grows strictly in the cumulative enabling order") {
    NetworkConfig cfg = tiny_config();
    cfg.num_classes = 135;
    std::vector<std::size_t> counts;
    counts.push_back(count_params(cfg)); // BaseNet
    cfg.use_dist = true;
    counts.push_back(count_params(cfg)); // + DistBranch
    cfg.use_prob = true;
    counts.push_back(count_params(cfg)); // + ProbBranch
    cfg.use_3d = true;
    counts.push_back(count_params(cfg)); // + 3dBranch
    cfg.use_aux = true;
    counts.push_back(count_params(cfg)); // Full adds the auxiliary heads
    for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] > counts[i - 1]);
}

TEST_CASE("enabling any single branch strictly increases the count") {
    const NetworkConfig base = tiny_config();
    const std::size_t n0 = count_params(base);
    for (int which = 0; which < 3; ++which) {
        NetworkConfig cfg = base;
        if (which == 0) cfg.use_3d = true;
        if (which == 1) cfg.use_dist = true;
        if (which == 2) cfg.use_prob = true;
        CHECK(count_params(cfg) > n0);
    }
}

TEST_CASE("count is reproducible across builds and seeds") {
    NetworkConfig cfg = tiny_config();
    cfg.use_dist = cfg.use_3d = cfg.use_prob = cfg.use_aux = true;
    CHECK(count_params(cfg) == count_params(cfg));
    auto a = build_model<float>(cfg, 1);
    auto b = build_model<float>(cfg, 999);
    CHECK(count_params(a) == count_params(b));
}

TEST_CASE("same config and seed build bit-identical parameters") {
    NetworkConfig cfg = tiny_config();
    cfg.use_dist = true;
    auto a = build_model<float>(cfg, 42);
    auto b = build_model<float>(cfg, 42);
    auto pa = a.graph.params(), pb = b.graph.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor->v == pb[i].tensor->v);
    }
}

TEST_CASE("all toggles off builds BaseNet only") {
    auto m = build_model<float>(tiny_config(), 1);
    CHECK(m.in_p3d == -1);
    CHECK(m.in_dist == -1);
    CHECK(m.in_prob == -1);
    CHECK(m.aux_base_logits == -1);
    for (auto& p : m.graph.params()) {
        CHECK(p.name.rfind("b3d", 0) != 0);
        CHECK(p.name.rfind("dist", 0) != 0);
        CHECK(p.name.rfind("prob", 0) != 0);
        CHECK(p.name.rfind("aux", 0) != 0);
    }
}

TEST_CASE("softmax output sums to one; eval mode is deterministic") {
    NetworkConfig cfg = tiny_config();
    cfg.use_dist = cfg.use_3d = cfg.use_prob = true;
    auto m = build_model<float>(cfg, 7);
    const auto s = random_sample(cfg, 3);
    const auto r1 = model_forward(m, s, nn::Mode::eval);
    const auto r2 = model_forward(m, s, nn::Mode::eval);
    CHECK(r1.probs == r2.probs);
    double sum = 0.0;
    for (double p : r1.probs) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("zeroed final FC gives the uniform distribution") {
    NetworkConfig cfg = tiny_config();
    auto m = build_model<float>(cfg, 5);
    zero_params_matching(m, "fc3.");
    const auto r = model_forward(m, random_sample(cfg, 8), nn::Mode::eval);
    for (double p : r.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("zero-weight ProbBranch leaves the BaseNet output unchanged") {
    NetworkConfig cfg = tiny_config();
    auto base = build_model<float>(cfg, 21);
    cfg.use_prob = true;
    auto with_prob = build_model<float>(cfg, 21);
    zero_params_matching(with_prob, "prob.");
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto sample = random_sample(cfg, 100 + s);
        const auto a = model_forward(base, sample, nn::Mode::eval);
        const auto b = model_forward(with_prob, sample, nn::Mode::eval);
        for (std::size_t c = 0; c < a.probs.size(); ++c) CHECK(a.probs[c] == b.probs[c]);
    }
}

TEST_CASE("branch-off equivalence: zeroed DistBranch matches the dist-free model") {
    NetworkConfig cfg = tiny_config();
    auto plain = build_model<float>(cfg, 33);
    NetworkConfig dcfg = cfg;
    dcfg.use_dist = true;
    auto dist = build_model<float>(dcfg, 33);

    zero_params_matching(dist, "dist.");
    // fc2 consumes [fc1 output | dist features]; rewrite its weight rows so
    // the fc1 block matches the dist-free model and the dist block is zero.
    nn::Tensor<float>*plain_w = nullptr, *dist_w = nullptr;
    for (auto& p : plain.graph.params())
        if (p.name == "fc2.w") plain_w = p.tensor;
    for (auto& p : dist.graph.params())
        if (p.name == "fc2.w") dist_w = p.tensor;
    REQUIRE(plain_w != nullptr);
    REQUIRE(dist_w != nullptr);
    const std::size_t fc1_units = cfg.fc1_units, out = cfg.fc2_units;
    REQUIRE(plain_w->shape == nn::Shape{fc1_units, out});
    std::fill(dist_w->v.begin(), dist_w->v.end(), 0.0f);
    for (std::size_t r = 0; r < fc1_units; ++r)
        for (std::size_t c = 0; c < out; ++c)
            dist_w->v[r * out + c] = plain_w->v[r * out + c];

    for (std::uint64_t s = 0; s < 5; ++s) {
        auto sample = random_sample(dcfg, 500 + s);
        const auto a = model_forward(plain, sample, nn::Mode::eval);
        const auto b = model_forward(dist, sample, nn::Mode::eval);
        for (std::size_t c = 0; c < a.probs.size(); ++c) CHECK(a.probs[c] == b.probs[c]);
    }
}

TEST_CASE("missing optional sample fields are rejected per enabled branch") {
    NetworkConfig cfg = tiny_config();
    cfg.use_3d = true;
    auto m = build_model<float>(cfg, 2);
    PatchSample s = random_sample(tiny_config(), 1); // built without the 3d field
    CHECK_THROWS_WITH_AS(model_forward(m, s, nn::Mode::eval), doctest::Contains("3D patch"),
                         ValidationError);

    NetworkConfig dcfg = tiny_config();
    dcfg.use_dist = true;
    auto dm = build_model<float>(dcfg, 2);
    CHECK_THROWS_WITH_AS(model_forward(dm, s, nn::Mode::eval),
                         doctest::Contains("distance image"), ValidationError);
}

TEST_CASE("rbf squashing is applied inside the model when configured") {
    NetworkConfig cfg = tiny_config();
    cfg.use_dist = true;
    cfg.dist_mode = DistMode::vector_fc;
    auto raw_model = build_model<float>(cfg, 4);
    cfg.use_rbf = true;
    auto rbf_model = build_model<float>(cfg, 4);

    auto s = random_sample(cfg, 9);
    model_forward(raw_model, s, nn::Mode::eval);
    model_forward(rbf_model, s, nn::Mode::eval);
    const auto& raw_in = raw_model.graph.tensor(raw_model.in_dist).v;
    const auto& rbf_in = rbf_model.graph.tensor(rbf_model.in_dist).v;
    for (std::size_t i = 0; i < raw_in.size(); ++i) {
        const double d = raw_in[i];
        CHECK(rbf_in[i] == doctest::Approx(std::exp(-cfg.alpha * d * d)).epsilon(1e-6));
    }
}

TEST_CASE("full all-branches model passes a double-precision gradient check") {
    NetworkConfig cfg = tiny_config();
    cfg.use_3d = cfg.use_dist = cfg.use_prob = cfg.use_aux = true;
    for (std::uint64_t seed : {1ull, 2ull}) {
        auto m = build_model<double>(cfg, seed);
        std::vector<PatchSample> batch{random_sample(cfg, seed * 10),
                                       random_sample(cfg, seed * 10 + 1)};
        std::vector<std::uint16_t> targets{1, 3};

        auto global_loss = [&]() {
            forward_batch(m, std::span<const PatchSample>(batch), nn::Mode::eval, 0);
            std::vector<double> scores(cfg.num_classes);
            auto head_loss = [&](int node) {
                const auto& t = m.graph.tensor(node);
                double sum = 0.0;
                for (std::size_t n = 0; n < batch.size(); ++n) {
                    std::copy(t.v.begin() + n * cfg.num_classes,
                              t.v.begin() + (n + 1) * cfg.num_classes, scores.begin());
                    sum += nn::softmax_cross_entropy<double>(scores, targets[n], nullptr).first;
                }
                return sum / static_cast<double>(batch.size());
            };
            double loss = head_loss(m.logits);
            loss += cfg.aux_w_base * head_loss(m.aux_base_logits);
            loss += cfg.aux_w_dist * head_loss(m.aux_dist_logits);
            return loss;
        };

        global_loss();
        auto params = m.graph.params();
        for (auto& p : params) p.tensor->zero_grad();
        nn::softmax_cross_entropy_batch(m.graph.tensor(m.logits), targets, nullptr, 1.0);
        nn::softmax_cross_entropy_batch(m.graph.tensor(m.aux_base_logits), targets, nullptr,
                                        cfg.aux_w_base);
        nn::softmax_cross_entropy_batch(m.graph.tensor(m.aux_dist_logits), targets, nullptr,
                                        cfg.aux_w_dist);
        m.graph.backward({m.logits, m.aux_base_logits, m.aux_dist_logits}, nn::Mode::eval, 0);

        const auto report = nn::grad_check<double>(params, global_loss, 1e-5);
        CHECK(report.max_rel_err < 1e-4);
    }
}
