// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "srm/nn/tensor.hpp"

namespace srm::nn {

template <std::floating_point T>
struct BasicParameter {
    std::string name;
    BasicTensor<T> value;
};

/// Named, ordered collection of trainable leaf tensors. Order is insertion
/// order and is what checkpoints and optimizers iterate over.
template <std::floating_point T>
class BasicParameterStore {
public:
    std::size_t add(std::string name, BasicTensor<T> value) {
        require(!index_.contains(name), "duplicate parameter name '", name, "'");
        index_.emplace(name, params_.size());
        params_.push_back({std::move(name), std::move(value)});
        return params_.size() - 1;
    }

    std::size_t size() const noexcept { return params_.size(); }

    BasicParameter<T>& operator[](std::size_t i) { return params_[i]; }
    const BasicParameter<T>& operator[](std::size_t i) const { return params_[i]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter '", name, "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    BasicTensor<T>& value(const std::string& name) { return params_[index_of(name)].value; }
    const BasicTensor<T>& value(const std::string& name) const { return params_[index_of(name)].value; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    friend bool operator==(const BasicParameterStore& a, const BasicParameterStore& b) {
        if (a.params_.size() != b.params_.size()) return false;
        for (std::size_t i = 0; i < a.params_.size(); ++i) {
            if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value))
                return false;
        }
        return true;
    }

private:
    std::vector<BasicParameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

/// Gradient tensors aligned index-for-index with a parameter store.
template <std::floating_point T>
struct BasicGradients {
    std::vector<std::string> names;
    std::vector<BasicTensor<T>> tensors;

    static BasicGradients zeros_like(const BasicParameterStore<T>& store) {
        BasicGradients g;
        for (const auto& p : store) {
            g.names.push_back(p.name);
            g.tensors.emplace_back(p.value.shape(), T(0));
        }
        return g;
    }

    const BasicTensor<T>& at(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return tensors[i];
        fail("no gradient for '", name, "'");
    }

    void accumulate(const BasicGradients& other) {
        require(other.tensors.size() == tensors.size(), "gradient set size mismatch");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            auto dst = tensors[i].data();
            auto src = other.tensors[i].data();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }

    void scale(T s) {
        for (auto& t : tensors)
            for (auto& v : t.data()) v *= s;
    }

    T global_norm() const {
        long double acc = 0;
        for (const auto& t : tensors)
            for (T v : t.data()) acc += static_cast<long double>(v) * v;
        return static_cast<T>(std::sqrt(acc));
    }
};

using ParameterStore = BasicParameterStore<real>;
using Gradients = BasicGradients<real>;

}  // namespace srm::nn
