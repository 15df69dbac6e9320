// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/nn/parameters.hpp"

namespace srm::nn {

/// Central differences over a flat coordinate vector: f reads `x` in place.
inline std::vector<double> finite_diff_gradient(const std::function<double()>& f, std::span<real> x,
                                                double eps = 1e-4) {
    require(eps > 0.0, "finite-difference step must be positive");
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const real saved = x[i];
        x[i] = static_cast<real>(saved + eps);
        const double fp = f();
        x[i] = static_cast<real>(saved - eps);
        const double fm = f();
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) fail("objective is non-finite at coordinate ", i);
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

/// Same, over every parameter of a store; result is aligned with the store.
inline Gradients finite_diff_gradient(const std::function<double()>& f, ParameterStore& params,
                                      double eps = 1e-4) {
    Gradients out = Gradients::zeros_like(params);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto g = finite_diff_gradient(f, params[p].value.data(), eps);
        std::copy(g.begin(), g.end(), out.tensors[p].data().begin());
    }
    return out;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from dominating on rounding noise.
inline double max_relative_error(std::span<const real> a, std::span<const real> b, double floor = 1e-6) {
    require(a.size() == b.size(), "relative error over mismatched sizes");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(double(a[i])), std::abs(double(b[i])), floor});
        worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / scale);
    }
    return worst;
}

inline double max_relative_error(const Gradients& a, const Gradients& b, double floor = 1e-6) {
    require(a.tensors.size() == b.tensors.size(), "gradient sets differ in size");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        worst = std::max(worst, max_relative_error(a.tensors[i].data(), b.tensors[i].data(), floor));
    return worst;
}

}  // namespace srm::nn
