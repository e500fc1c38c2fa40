#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "invreg/tensor.hpp"

namespace invreg {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    int64_t t = 0;

    explicit AdamState(size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// Standard bias-corrected Adam update, in place.
template <typename T>
void adam_step(AdamState<T>& state, std::vector<T>& params, const std::vector<T>& grads,
               const AdamConfig& cfg) {
    require(params.size() == grads.size() && params.size() == state.m.size() &&
                params.size() == state.v.size(),
            "adam_step: shape mismatch");
    state.t += 1;
    double b1t = 1.0 - std::pow(cfg.beta1, (double)state.t);
    double b2t = 1.0 - std::pow(cfg.beta2, (double)state.t);
    for (size_t i = 0; i < params.size(); ++i) {
        double g = (double)grads[i];
        double m = cfg.beta1 * (double)state.m[i] + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * (double)state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = (T)m;
        state.v[i] = (T)v;
        double mhat = m / b1t;
        double vhat = v / b2t;
        params[i] = (T)((double)params[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace invreg
