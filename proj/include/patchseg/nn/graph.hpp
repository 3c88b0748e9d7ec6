#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "patchseg/nn/layers.hpp"

namespace patchseg::nn {

// A fixed DAG of layers built once from a configuration; node ids are
// insertion-ordered and topological by construction. Input nodes carry no
// layer and are filled by the caller before forward().
template <typename T>
class Graph {
public:
    int add_input(std::string name, Shape per_sample) {
        nodes_.push_back({std::move(name), nullptr, {}, std::move(per_sample), {}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add(std::unique_ptr<Layer<T>> layer, std::vector<int> inputs) {
        std::vector<Shape> in_shapes;
        in_shapes.reserve(inputs.size());
        for (int i : inputs) in_shapes.push_back(nodes_.at(i).per_sample);
        Shape out = layer->out_shape(in_shapes);
        std::string name = layer->name();
        nodes_.push_back({std::move(name), std::move(layer), std::move(inputs), std::move(out), {}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t node_count() const { return nodes_.size(); }
    Tensor<T>& tensor(int node) { return nodes_.at(node).out; }
    const Tensor<T>& tensor(int node) const { return nodes_.at(node).out; }
    const Shape& sample_shape(int node) const { return nodes_.at(node).per_sample; }
    Layer<T>* layer(int node) { return nodes_.at(node).layer.get(); }

    // Caller must have filled every input node with batch size nb.
    void forward(std::size_t nb, Mode mode, std::uint64_t dropout_seed) {
        LayerCtx ctx{mode, dropout_seed};
        for (auto& node : nodes_) {
            if (!node.layer) {
                if (node.out.batch() != nb)
                    throw ValidationError("graph input '" + node.name +
                                          "' not filled for this batch");
                continue;
            }
            node.out.set_batch(nb, node.per_sample);
            std::vector<const Tensor<T>*> in;
            in.reserve(node.inputs.size());
            for (int i : node.inputs) in.push_back(&nodes_[i].out);
            node.layer->forward(ctx, in, node.out);
        }
    }

    // Backpropagates from the given nodes, whose gradient buffers the caller
    // has already seeded. Only ancestors of seeded nodes run; their activation
    // gradients are zeroed first. Parameter gradients accumulate.
    void backward(const std::vector<int>& seeded, Mode mode = Mode::train,
                  std::uint64_t dropout_seed = 0) {
        std::vector<char> needed(nodes_.size(), 0);
        for (int s : seeded) needed.at(s) = 1;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (needed[i])
                for (int j : nodes_[i].inputs) needed[j] = 1;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (needed[i] && std::find(seeded.begin(), seeded.end(), static_cast<int>(i)) ==
                                 seeded.end())
                nodes_[i].out.zero_grad();

        LayerCtx ctx{mode, dropout_seed};
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            auto& node = nodes_[i];
            if (!needed[i] || !node.layer) continue;
            std::vector<const Tensor<T>*> in;
            std::vector<Tensor<T>*> in_grads;
            in.reserve(node.inputs.size());
            for (int j : node.inputs) {
                in.push_back(&nodes_[j].out);
                in_grads.push_back(&nodes_[j].out);
            }
            node.layer->backward(ctx, in, node.out, in_grads);
        }
    }

    // Stable, insertion-ordered parameter list.
    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (auto& node : nodes_)
            if (node.layer)
                for (auto& p : node.layer->params()) out.push_back(p);
        return out;
    }

    // Fan-in-scaled uniform weights, zero biases. Each tensor draws from its
    // own name-keyed stream, so shared layers initialize identically across
    // configurations that add or remove other branches.
    void init_params(std::uint64_t seed) {
        for (auto& p : params()) {
            if (p.is_bias) {
                std::fill(p.tensor->v.begin(), p.tensor->v.end(), T(0));
                continue;
            }
            Prng rng(seed, fnv1a(p.name));
            const double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in));
            for (auto& w : p.tensor->v)
                w = static_cast<T>(rng.next_uniform(-limit, limit));
        }
    }

private:
    struct Node {
        std::string name;
        std::unique_ptr<Layer<T>> layer; // null for inputs
        std::vector<int> inputs;
        Shape per_sample;
        Tensor<T> out;
    };
    std::vector<Node> nodes_;
};

} // namespace patchseg::nn
