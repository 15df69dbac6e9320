// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/nn/parameters.hpp"

namespace srm::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW)
    double clip_norm = 1.0;     // <= 0 disables clipping
};

template <std::floating_point T>
struct BasicAdamState {
    AdamConfig config;
    std::vector<BasicTensor<T>> m;
    std::vector<BasicTensor<T>> v;
    std::uint64_t step = 0;

    BasicAdamState() = default;

    BasicAdamState(const BasicParameterStore<T>& params, AdamConfig cfg) : config(cfg) {
        for (const auto& p : params) {
            m.emplace_back(p.value.shape(), T(0));
            v.emplace_back(p.value.shape(), T(0));
        }
    }
};

using AdamState = BasicAdamState<real>;

/// Clips `grads` to the configured global norm, then applies one bias-corrected
/// Adam update with optional decoupled weight decay. Returns the pre-clip norm.
template <std::floating_point T>
T adam_step(BasicParameterStore<T>& params, BasicGradients<T> grads, BasicAdamState<T>& state) {
    const AdamConfig& c = state.config;
    require(c.lr >= 0.0, "learning rate must be non-negative");
    require(grads.tensors.size() == params.size() && state.m.size() == params.size(),
            "adam_step: parameter/gradient/moment counts disagree");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(grads.tensors[i].size() == params[i].value.size() && state.m[i].size() == params[i].value.size(),
                "adam_step: shape mismatch for '", params[i].name, "'");
        if (!grads.tensors[i].all_finite())
            throw DivergenceError("non-finite gradient for parameter '" + params[i].name + "'");
    }

    const T norm = grads.global_norm();
    if (c.clip_norm > 0.0 && norm > static_cast<T>(c.clip_norm)) grads.scale(static_cast<T>(c.clip_norm) / norm);

    state.step += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].value.data();
        auto g = grads.tensors[i].data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = static_cast<T>(c.beta1 * m[j] + (1.0 - c.beta1) * g[j]);
            v[j] = static_cast<T>(c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j]);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            double upd = mhat / (std::sqrt(vhat) + c.eps);
            if (c.weight_decay > 0.0) upd += c.weight_decay * w[j];
            w[j] = static_cast<T>(w[j] - c.lr * upd);
        }
    }
    return norm;
}

}  // namespace srm::nn
