#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "patchseg/nn/layers.hpp"

namespace patchseg::nn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Central finite differences against analytic gradients, every parameter
// element. The caller supplies the analytic gradients (already accumulated in
// the tensors' g buffers) and a loss closure that re-evaluates the forward
// pass without touching gradients. Meant to run in double precision with any
// stochastic layer disabled or fixed-seeded.
template <typename T, typename LossFn>
GradCheckReport grad_check(const std::vector<ParamRef<T>>& params, LossFn&& loss_fn, double eps) {
    GradCheckReport report;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.tensor->size(); ++i) {
            const T saved = p.tensor->v[i];
            p.tensor->v[i] = saved + static_cast<T>(eps);
            const double lp = loss_fn();
            p.tensor->v[i] = saved - static_cast<T>(eps);
            const double lm = loss_fn();
            p.tensor->v[i] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = static_cast<double>(p.tensor->g[i]);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

} // namespace patchseg::nn
