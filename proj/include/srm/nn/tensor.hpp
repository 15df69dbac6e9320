// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/core/random.hpp"

namespace srm::nn {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_volume(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor. The autodiff ops only use rank <= 2; a rank-1
/// tensor of length n is treated as a 1 x n row.
template <std::floating_point T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(shape_volume(shape_) == data_.size(), "tensor shape ", shape_string(shape_),
                " does not match data length ", data_.size());
    }

    static BasicTensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
        return BasicTensor({rows, cols}, fill);
    }

    static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
        return BasicTensor({rows, cols}, std::move(data));
    }

    static BasicTensor scalar(T v) { return BasicTensor({1, 1}, std::vector<T>{v}); }

    static BasicTensor row(std::vector<T> v) {
        const std::size_t n = v.size();
        return BasicTensor({1, n}, std::move(v));
    }

    static BasicTensor column(std::vector<T> v) {
        const std::size_t n = v.size();
        return BasicTensor({n, 1}, std::move(v));
    }

    static BasicTensor identity(std::size_t n) {
        BasicTensor t = matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
        return t;
    }

    static BasicTensor randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
        BasicTensor t = matrix(rows, cols);
        for (auto& v : t.data_) v = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const noexcept {
        if (shape_.empty()) return 1;
        return shape_.size() == 1 ? 1 : shape_[0];
    }
    std::size_t cols() const noexcept {
        if (shape_.empty()) return 1;
        return shape_.size() == 1 ? shape_[0] : shape_[1];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<T> row_span(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row_span(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    T item() const {
        require(data_.size() == 1, "item() on tensor of shape ", shape_string(shape_));
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool same_shape(const BasicTensor& o) const noexcept {
        return rows() == o.rows() && cols() == o.cols();
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<real>;

template <std::floating_point T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require(a.size() == b.size(), "max_abs_diff on mismatched sizes");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace srm::nn
