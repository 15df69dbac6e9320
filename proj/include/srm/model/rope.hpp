// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/nn/graph.hpp"

namespace srm::model {

/// Applies the block-diagonal rotary rotation for `position`: pair t of the
/// vector is rotated by position * base^(-2t/d).
template <std::floating_point T>
std::vector<T> rope_rotate(std::span<const T> v, std::size_t position, double base) {
    require(v.size() % 2 == 0, "rope_rotate needs an even dimension, got ", v.size());
    std::vector<T> out(v.size());
    for (std::size_t t = 0; t < v.size() / 2; ++t) {
        const double ang = nn::rope_angle(position, t, v.size(), base);
        const T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
        out[2 * t] = v[2 * t] * c - v[2 * t + 1] * s;
        out[2 * t + 1] = v[2 * t] * s + v[2 * t + 1] * c;
    }
    return out;
}

template <std::floating_point T>
std::vector<T> rope_rotate(const std::vector<T>& v, std::size_t position, double base) {
    return rope_rotate(std::span<const T>(v), position, base);
}

}  // namespace srm::model
