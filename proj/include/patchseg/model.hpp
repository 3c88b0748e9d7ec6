#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchseg/nn/graph.hpp"
#include "patchseg/sampling.hpp"
#include "patchseg/spatial.hpp"

namespace patchseg {

enum class DistMode { vector_fc, conv2d };

// Branch toggles, distance-integration mode and desk-scale layer widths.
// Widths are deliberately small so the whole network trains on one CPU core
// in minutes.
struct NetworkConfig {
    int num_classes = 8;
    int landmarks_per_axis = 7; // k; the distance field enters as k planes of k x k

    bool use_3d = false;
    bool use_dist = false;
    bool use_prob = false;
    bool use_aux = false;

    DistMode dist_mode = DistMode::conv2d;
    bool use_rbf = false;
    double alpha = 0.01;

    double aux_w_base = 0.3;
    double aux_w_dist = 0.3;
    double dropout_p = 0.0;
    double weight_decay = 0.0;

    // BaseNet widths: per-scale conv stack 5x5 then 3x3, channel concat,
    // 1x1 mixing conv, three fully connected layers.
    int conv1_ch = 4;
    int conv2_ch = 8;
    int mix_ch = 6;
    int fc1_units = 48;
    int fc2_units = 48;

    // DistBranch widths.
    int dist_conv_ch = 4;   // channels of each parallel conv path (conv2d mode)
    int dist_fc_units = 32; // vector_fc mode

    // 3dBranch: four 3x3x3 convs take the 15^3 patch down to 7^3.
    int c3d_ch1 = 2, c3d_ch2 = 2, c3d_ch3 = 2, c3d_ch4 = 2;
};

// The assembled network. Dataflow:
//   three 25x25 patches -> per-scale conv stacks -> channel concat -> 1x1 conv
//   -> flatten; optional 3dBranch conv stack features are concatenated with
//   the flattened BaseNet features to form FC1's input; optional DistBranch
//   features are concatenated with FC1's output to form FC2's input; FC3 makes
//   the class scores; the optional ProbBranch (three bias-free FCs of size
//   num_classes) is summed onto the scores just before the softmax.
// Auxiliary heads (one FC + softmax) attach to FC1's input and, when the
// distance branch is active, to the DistBranch output.
template <typename T>
struct Model {
    NetworkConfig cfg;
    nn::Graph<T> graph;

    int in_p25 = -1, in_p51 = -1, in_p71 = -1;
    int in_p3d = -1, in_dist = -1, in_prob = -1;
    int dist_features = -1; // DistBranch output node
    int logits = -1;        // pre-softmax scores (after the ProbBranch sum)
    int probs = -1;         // softmax output
    int aux_base_logits = -1, aux_base_probs = -1;
    int aux_dist_logits = -1, aux_dist_probs = -1;
};

template <typename T>
Model<T> build_model(const NetworkConfig& cfg, std::uint64_t seed);

// Total scalar parameters, auxiliary heads included.
template <typename T>
std::size_t count_params(Model<T>& model);

std::size_t count_params(const NetworkConfig& cfg);

// Loads a batch of samples into the input nodes (applying the RBF squashing
// to the distance field when configured) and runs one forward pass.
// Throws if a sample lacks a field required by an enabled branch.
template <typename T>
void forward_batch(Model<T>& model, std::span<const PatchSample> batch, nn::Mode mode,
                   std::uint64_t dropout_seed);

struct ForwardResult {
    std::vector<double> probs;                  // main softmax output
    std::vector<std::vector<double>> aux_probs; // aux heads in wiring order
};

// Single-sample convenience wrapper.
template <typename T>
ForwardResult model_forward(Model<T>& model, const PatchSample& sample, nn::Mode mode,
                            std::uint64_t dropout_seed = 0);

// ----------------------------------------------------------------------------

template <typename T>
Model<T> build_model(const NetworkConfig& cfg, std::uint64_t seed) {
    using namespace nn;
    if (cfg.num_classes < 2) throw ValidationError("build_model: need at least 2 classes");
    if (cfg.landmarks_per_axis < 2 && cfg.use_dist)
        throw ValidationError("build_model: landmarks_per_axis must be at least 2");
    if (cfg.use_rbf && !(cfg.alpha > 0.0))
        throw ValidationError("build_model: rbf requires alpha > 0");
    if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0)
        throw ValidationError("build_model: dropout must be in [0, 1)");
    for (int w : {cfg.conv1_ch, cfg.conv2_ch, cfg.mix_ch, cfg.fc1_units, cfg.fc2_units,
                  cfg.dist_conv_ch, cfg.dist_fc_units, cfg.c3d_ch1, cfg.c3d_ch2, cfg.c3d_ch3,
                  cfg.c3d_ch4})
        if (w < 1) throw ValidationError("build_model: layer widths must be positive");

    Model<T> m;
    m.cfg = cfg;
    auto& g = m.graph;
    const std::size_t ell = cfg.num_classes;
    const std::size_t k = cfg.landmarks_per_axis;
    const std::size_t ps = kPatchSize;

    m.in_p25 = g.add_input("in.p25", {1, ps, ps});
    m.in_p51 = g.add_input("in.p51", {1, ps, ps});
    m.in_p71 = g.add_input("in.p71", {1, ps, ps});

    auto conv_stack_2d = [&](const std::string& prefix, int input) {
        int c1 = g.add(std::make_unique<Conv2d<T>>(prefix + ".conv1", 1, cfg.conv1_ch, 5),
                       {input});
        int r1 = g.add(std::make_unique<Relu<T>>(prefix + ".relu1"), {c1});
        int c2 = g.add(std::make_unique<Conv2d<T>>(prefix + ".conv2", cfg.conv1_ch, cfg.conv2_ch,
                                                   3),
                       {r1});
        return g.add(std::make_unique<Relu<T>>(prefix + ".relu2"), {c2});
    };
    const int s0 = conv_stack_2d("base.s0", m.in_p25);
    const int s1 = conv_stack_2d("base.s1", m.in_p51);
    const int s2 = conv_stack_2d("base.s2", m.in_p71);
    const int cat = g.add(std::make_unique<Concat<T>>("base.concat"), {s0, s1, s2});
    const int mix = g.add(
        std::make_unique<Conv2d<T>>("base.mix", 3 * cfg.conv2_ch, cfg.mix_ch, 1), {cat});
    const int mixr = g.add(std::make_unique<Relu<T>>("base.mix_relu"), {mix});
    const int base_flat = g.add(std::make_unique<Flatten<T>>("base.flat"), {mixr});

    // 3dBranch features enter at the flattened trunk concatenation feeding FC1
    // (the 7^3 conv output cannot tile a 19x19 channel plane, so the merge
    // happens at the nearest vector junction).
    int fc1_in = base_flat;
    if (cfg.use_3d) {
        m.in_p3d = g.add_input("in.p3d", {1, kPatch3d, kPatch3d, kPatch3d});
        const int chans[4] = {cfg.c3d_ch1, cfg.c3d_ch2, cfg.c3d_ch3, cfg.c3d_ch4};
        int prev = m.in_p3d;
        int cin = 1;
        for (int i = 0; i < 4; ++i) {
            const std::string nm = "b3d.conv" + std::to_string(i + 1);
            int c = g.add(std::make_unique<Conv3d<T>>(nm, cin, chans[i], 3), {prev});
            prev = g.add(std::make_unique<Relu<T>>(nm + "_relu"), {c});
            cin = chans[i];
        }
        const int flat3d = g.add(std::make_unique<Flatten<T>>("b3d.flat"), {prev});
        fc1_in = g.add(std::make_unique<Concat<T>>("trunk.concat"), {base_flat, flat3d});
    }

    const std::size_t fc1_in_width = g.sample_shape(fc1_in)[0];
    int fc1_src = fc1_in;
    if (cfg.dropout_p > 0.0)
        fc1_src = g.add(std::make_unique<Dropout<T>>("fc1.drop", cfg.dropout_p), {fc1_in});
    const int fc1 = g.add(std::make_unique<Dense<T>>("fc1", fc1_in_width, cfg.fc1_units), {fc1_src});
    const int fc1r = g.add(std::make_unique<Relu<T>>("fc1.relu"), {fc1});

    int fc2_in = fc1r;
    if (cfg.use_dist) {
        m.in_dist = g.add_input("in.dist", {k, k, k});
        if (cfg.dist_mode == DistMode::conv2d) {
            // Parallel valid convolutions over the k-plane distance field;
            // the 5x5 path only exists once k leaves it a valid extent.
            int c1 = g.add(std::make_unique<Conv2d<T>>("dist.c1", k, cfg.dist_conv_ch, 1),
                           {m.in_dist});
            int r1 = g.add(std::make_unique<Relu<T>>("dist.c1_relu"), {c1});
            int f1 = g.add(std::make_unique<Flatten<T>>("dist.c1_flat"), {r1});
            int c3 = g.add(std::make_unique<Conv2d<T>>("dist.c3", k, cfg.dist_conv_ch, 3),
                           {m.in_dist});
            int r3 = g.add(std::make_unique<Relu<T>>("dist.c3_relu"), {c3});
            int f3 = g.add(std::make_unique<Flatten<T>>("dist.c3_flat"), {r3});
            std::vector<int> paths{f1, f3};
            if (k >= 9) {
                int c5 = g.add(std::make_unique<Conv2d<T>>("dist.c5", k, cfg.dist_conv_ch, 5),
                               {m.in_dist});
                int r5 = g.add(std::make_unique<Relu<T>>("dist.c5_relu"), {c5});
                paths.push_back(g.add(std::make_unique<Flatten<T>>("dist.c5_flat"), {r5}));
            }
            m.dist_features = g.add(std::make_unique<Concat<T>>("dist.concat"), paths);
        } else {
            const int flat = g.add(std::make_unique<Flatten<T>>("dist.flat"), {m.in_dist});
            const int fc = g.add(
                std::make_unique<Dense<T>>("dist.fc", k * k * k, cfg.dist_fc_units), {flat});
            m.dist_features = g.add(std::make_unique<Relu<T>>("dist.fc_relu"), {fc});
        }
        fc2_in = g.add(std::make_unique<Concat<T>>("fc2.concat"), {fc1r, m.dist_features});
    }

    const std::size_t fc2_in_width = g.sample_shape(fc2_in)[0];
    int fc2_src = fc2_in;
    if (cfg.dropout_p > 0.0)
        fc2_src = g.add(std::make_unique<Dropout<T>>("fc2.drop", cfg.dropout_p), {fc2_in});
    const int fc2 = g.add(std::make_unique<Dense<T>>("fc2", fc2_in_width, cfg.fc2_units), {fc2_src});
    const int fc2r = g.add(std::make_unique<Relu<T>>("fc2.relu"), {fc2});
    const int fc3 = g.add(std::make_unique<Dense<T>>("fc3", cfg.fc2_units, ell), {fc2r});

    m.logits = fc3;
    if (cfg.use_prob) {
        m.in_prob = g.add_input("in.prob", {ell});
        // Three bias-free size-ell layers; their output is summed onto the
        // scores pre-softmax, so zero weights leave the network unchanged.
        int p1 = g.add(std::make_unique<Dense<T>>("prob.fc1", ell, ell, false), {m.in_prob});
        int p1r = g.add(std::make_unique<Relu<T>>("prob.relu1"), {p1});
        int p2 = g.add(std::make_unique<Dense<T>>("prob.fc2", ell, ell, false), {p1r});
        int p2r = g.add(std::make_unique<Relu<T>>("prob.relu2"), {p2});
        int p3 = g.add(std::make_unique<Dense<T>>("prob.fc3", ell, ell, false), {p2r});
        m.logits = g.add(std::make_unique<Add<T>>("logits.add"), {fc3, p3});
    }
    m.probs = g.add(std::make_unique<Softmax<T>>("softmax"), {m.logits});

    if (cfg.use_aux) {
        m.aux_base_logits =
            g.add(std::make_unique<Dense<T>>("aux_base.fc", fc1_in_width, ell), {fc1_in});
        m.aux_base_probs =
            g.add(std::make_unique<Softmax<T>>("aux_base.softmax"), {m.aux_base_logits});
        if (cfg.use_dist) {
            const std::size_t dw = g.sample_shape(m.dist_features)[0];
            m.aux_dist_logits =
                g.add(std::make_unique<Dense<T>>("aux_dist.fc", dw, ell), {m.dist_features});
            m.aux_dist_probs =
                g.add(std::make_unique<Softmax<T>>("aux_dist.softmax"), {m.aux_dist_logits});
        }
    }

    g.init_params(seed);
    return m;
}

template <typename T>
std::size_t count_params(Model<T>& model) {
    std::size_t n = 0;
    for (const auto& p : model.graph.params()) n += p.tensor->size();
    return n;
}

inline std::size_t count_params(const NetworkConfig& cfg) {
    Model<float> m = build_model<float>(cfg, 0);
    return count_params(m);
}

template <typename T>
void forward_batch(Model<T>& model, std::span<const PatchSample> batch, nn::Mode mode,
                   std::uint64_t dropout_seed) {
    const auto& cfg = model.cfg;
    const std::size_t nb = batch.size();
    if (nb == 0) throw ValidationError("forward_batch: empty batch");
    auto& g = model.graph;

    auto fill_patch = [&](int node, auto member) {
        auto& t = g.tensor(node);
        t.set_batch(nb, g.sample_shape(node));
        for (std::size_t n = 0; n < nb; ++n) {
            const auto& src = batch[n].*member;
            for (std::size_t i = 0; i < src.size(); ++i)
                t.v[n * src.size() + i] = static_cast<T>(src[i]);
        }
    };
    fill_patch(model.in_p25, &PatchSample::p25);
    fill_patch(model.in_p51, &PatchSample::p51s);
    fill_patch(model.in_p71, &PatchSample::p71s);

    if (cfg.use_3d) {
        auto& t = g.tensor(model.in_p3d);
        const std::size_t len = nn::shape_size(g.sample_shape(model.in_p3d));
        t.set_batch(nb, g.sample_shape(model.in_p3d));
        for (std::size_t n = 0; n < nb; ++n) {
            if (batch[n].p3d.size() != len)
                throw ValidationError("forward_batch: sample lacks the 3D patch "
                                      "required by the enabled 3d branch");
            for (std::size_t i = 0; i < len; ++i) t.v[n * len + i] = static_cast<T>(batch[n].p3d[i]);
        }
    }
    if (cfg.use_dist) {
        auto& t = g.tensor(model.in_dist);
        const std::size_t len = nn::shape_size(g.sample_shape(model.in_dist));
        t.set_batch(nb, g.sample_shape(model.in_dist));
        for (std::size_t n = 0; n < nb; ++n) {
            if (batch[n].dist.size() != len)
                throw ValidationError("forward_batch: sample lacks the distance image "
                                      "required by the enabled distance branch");
            if (cfg.use_rbf) {
                for (std::size_t i = 0; i < len; ++i) {
                    const double d = batch[n].dist[i];
                    t.v[n * len + i] = static_cast<T>(std::exp(-cfg.alpha * d * d));
                }
            } else {
                for (std::size_t i = 0; i < len; ++i)
                    t.v[n * len + i] = static_cast<T>(batch[n].dist[i]);
            }
        }
    }
    if (cfg.use_prob) {
        auto& t = g.tensor(model.in_prob);
        const std::size_t len = nn::shape_size(g.sample_shape(model.in_prob));
        t.set_batch(nb, g.sample_shape(model.in_prob));
        for (std::size_t n = 0; n < nb; ++n) {
            if (batch[n].atlas_prob.size() != len)
                throw ValidationError("forward_batch: sample lacks the atlas vector "
                                      "required by the enabled probability branch");
            for (std::size_t i = 0; i < len; ++i)
                t.v[n * len + i] = static_cast<T>(batch[n].atlas_prob[i]);
        }
    }
    g.forward(nb, mode, dropout_seed);
}

template <typename T>
ForwardResult model_forward(Model<T>& model, const PatchSample& sample, nn::Mode mode,
                            std::uint64_t dropout_seed) {
    forward_batch(model, std::span<const PatchSample>(&sample, 1), mode, dropout_seed);
    ForwardResult r;
    const auto& probs = model.graph.tensor(model.probs).v;
    r.probs.assign(probs.begin(), probs.end());
    if (model.aux_base_probs >= 0) {
        const auto& a = model.graph.tensor(model.aux_base_probs).v;
        r.aux_probs.emplace_back(a.begin(), a.end());
    }
    if (model.aux_dist_probs >= 0) {
        const auto& a = model.graph.tensor(model.aux_dist_probs).v;
        r.aux_probs.emplace_back(a.begin(), a.end());
    }
    return r;
}

} // namespace patchseg
