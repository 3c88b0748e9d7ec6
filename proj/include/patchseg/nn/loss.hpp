#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "patchseg/errors.hpp"
#include "patchseg/nn/tensor.hpp"

namespace patchseg::nn {

// Weighted softmax cross-entropy of one score vector, stabilized by
// max-subtraction. Returns the loss and the gradient with respect to the
// scores: w_target * (softmax - onehot).
template <typename T>
std::pair<double, std::vector<T>> softmax_cross_entropy(const std::vector<T>& scores, int target,
                                                        const std::vector<T>* class_weights) {
    const int c = static_cast<int>(scores.size());
    if (target < 0 || target >= c)
        throw ValidationError("softmax_cross_entropy: target " + std::to_string(target) +
                              " out of range [0, " + std::to_string(c) + ")");
    if (class_weights && static_cast<int>(class_weights->size()) != c)
        throw ValidationError("softmax_cross_entropy: weight vector length mismatch");
    double m = scores[0];
    for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(scores[j]));
    double sum = 0.0;
    std::vector<double> e(c);
    for (int j = 0; j < c; ++j) {
        e[j] = std::exp(static_cast<double>(scores[j]) - m);
        sum += e[j];
    }
    const double w = class_weights ? static_cast<double>((*class_weights)[target]) : 1.0;
    // -w * ln softmax_target with the shift folded in for stability
    const double loss = w * (std::log(sum) - (static_cast<double>(scores[target]) - m));
    std::vector<T> grad(c);
    for (int j = 0; j < c; ++j) {
        const double p = e[j] / sum;
        grad[j] = static_cast<T>(w * (p - (j == target ? 1.0 : 0.0)));
    }
    return {loss, std::move(grad)};
}

// Batch mean loss over a logits tensor (nb x classes); accumulates
// grad_scale/nb * w_t * (softmax - onehot) into logits.g. Returns the mean of
// the per-sample weighted losses.
template <typename T>
double softmax_cross_entropy_batch(Tensor<T>& logits, const std::vector<std::uint16_t>& targets,
                                   const std::vector<std::type_identity_t<T>>* class_weights,
                                   double grad_scale) {
    const std::size_t nb = logits.batch(), c = logits.sample_size();
    if (targets.size() != nb)
        throw ValidationError("softmax_cross_entropy_batch: target count mismatch");
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(nb);
    for (std::size_t n = 0; n < nb; ++n) {
        const T* row = logits.v.data() + n * c;
        const int target = targets[n];
        if (target < 0 || static_cast<std::size_t>(target) >= c)
            throw ValidationError("softmax_cross_entropy_batch: target out of range");
        double m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - m);
        const double w =
            class_weights ? static_cast<double>((*class_weights)[target]) : 1.0;
        total += w * (std::log(sum) - (static_cast<double>(row[target]) - m));
        T* grad = logits.g.data() + n * c;
        const double gs = grad_scale * inv * w;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(static_cast<double>(row[j]) - m) / sum;
            grad[j] += static_cast<T>(gs * (p - (static_cast<std::size_t>(target) == j ? 1. : 0.)));
        }
    }
    return total * inv;
}

} // namespace patchseg::nn
