#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patchseg/errors.hpp"
#include "patchseg/kernels.hpp"
#include "patchseg/nn/layers.hpp"

namespace patchseg::nn {

struct OptimConfig {
    double lr0 = 1e-3;
    double momentum = 0.9;
    double weight_decay = 0.0; // applied to weights only, never biases
    double poly_power = 0.9;
    std::size_t max_iter = 1; // epochs; the schedule counts epochs, not steps
};

// lr0 * (1 - iter/max_iter)^power.
inline double poly_lr(std::size_t iter, const OptimConfig& cfg) {
    if (cfg.max_iter == 0) throw ValidationError("poly_lr: max_iter must be positive");
    if (iter > cfg.max_iter)
        throw ValidationError("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " +
                              std::to_string(cfg.max_iter));
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
    return cfg.lr0 * std::pow(frac, cfg.poly_power);
}

// SGD with momentum: v <- mu*v - lr*(g + wd*w); w <- w + v.
template <typename T>
class SgdOptimizer {
public:
    SgdOptimizer(OptimConfig cfg, const std::vector<ParamRef<T>>& params) : cfg_(cfg) {
        if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
            throw ValidationError("sgd: momentum must be in [0, 1)");
        if (cfg.weight_decay < 0.0) throw ValidationError("sgd: weight decay must be nonnegative");
        velocity_.reserve(params.size());
        for (const auto& p : params) velocity_.emplace_back(p.tensor->size(), T(0));
    }

    const OptimConfig& config() const { return cfg_; }

    void zero_grads(const std::vector<ParamRef<T>>& params) {
        for (auto& p : params) p.tensor->zero_grad();
    }

    // Throws on any non-finite gradient (training abort signal).
    void step(const std::vector<ParamRef<T>>& params, double lr) {
        const auto& k = kern::table_for(T{});
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& p = params[i];
            for (const T g : p.tensor->g)
                if (!std::isfinite(static_cast<double>(g)))
                    throw ValidationError("sgd: non-finite gradient in " + p.name);
            const T wd = p.is_bias ? T(0) : static_cast<T>(cfg_.weight_decay);
            k.sgd_update(p.tensor->size(), p.tensor->v.data(), velocity_[i].data(),
                         p.tensor->g.data(), static_cast<T>(lr), static_cast<T>(cfg_.momentum),
                         wd);
        }
    }

    std::vector<std::vector<T>>& velocities() { return velocity_; }
    const std::vector<std::vector<T>>& velocities() const { return velocity_; }

private:
    OptimConfig cfg_;
    std::vector<std::vector<T>> velocity_;
};

} // namespace patchseg::nn
