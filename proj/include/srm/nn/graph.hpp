// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "srm/core/error.hpp"
#include "srm/nn/parameters.hpp"
#include "srm/nn/tensor.hpp"

namespace srm::nn {

enum class OpKind : std::uint8_t {
    Input,
    Parameter,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale,
    AddScalar,
    Exp,
    Log,
    Sigmoid,
    LogSigmoid,
    Tanh,
    Gelu,
    SoftmaxRows,
    CausalSoftmaxRows,
    LogSoftmaxRows,
    LayerNorm,
    Embedding,
    GatherRows,
    Pick,
    SliceCols,
    ConcatCols,
    Rope,
    Sum,
    Mean,
    MeanRows,
    Clip,
    Minimum,
    Maximum,
};

constexpr std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::Input: return "input";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::AddRow: return "add_row";
        case OpKind::MulRow: return "mul_row";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::LogSigmoid: return "log_sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Gelu: return "gelu";
        case OpKind::SoftmaxRows: return "softmax_rows";
        case OpKind::CausalSoftmaxRows: return "causal_softmax_rows";
        case OpKind::LogSoftmaxRows: return "log_softmax_rows";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Embedding: return "embedding";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::Pick: return "pick";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::Rope: return "rope";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::MeanRows: return "mean_rows";
        case OpKind::Clip: return "clip";
        case OpKind::Minimum: return "minimum";
        case OpKind::Maximum: return "maximum";
    }
    return "?";
}

struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
};

// Numerically stable scalar helpers shared with the plain (non-graph) code paths.
template <std::floating_point T>
T stable_sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <std::floating_point T>
T stable_log_sigmoid(T x) {
    return std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
}

template <std::floating_point T>
T gelu_tanh(T x) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <std::floating_point T>
T gelu_tanh_grad(T x) {
    constexpr T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

/// Rotation angle of pair `pair` (0-based) for a `dim`-wide vector at `position`.
/// theta_t = base^(-2t/dim), t = 0 .. dim/2-1.
inline double rope_angle(std::size_t position, std::size_t pair, std::size_t dim, double base) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(pair) / static_cast<double>(dim));
    return static_cast<double>(position) * theta;
}

/// Define-by-run reverse-mode graph over a fixed op vocabulary.
///
/// Every op appends a node and computes its value immediately. `evaluate`
/// replays the recorded nodes in order with freshly bound inputs and the
/// current parameter values, which is what finite-difference checks use.
/// `backward` walks the tape in reverse.
template <std::floating_point T>
class BasicGraph {
public:
    using TensorT = BasicTensor<T>;
    using Store = BasicParameterStore<T>;

    BasicGraph() = default;
    explicit BasicGraph(const Store& store) : store_(&store) {}

    // ---- leaves -------------------------------------------------------------

    Var input(std::string name, TensorT value, bool requires_grad = false) {
        require(value.all_finite(), "graph input '", name, "' contains non-finite values");
        Node n;
        n.op = OpKind::Input;
        n.name = std::move(name);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    Var constant(TensorT value) { return input("", std::move(value), false); }

    Var param(std::size_t index) {
        require(store_ != nullptr, "graph has no parameter store");
        require(index < store_->size(), "parameter index ", index, " out of range");
        if (param_nodes_.size() < store_->size()) param_nodes_.resize(store_->size(), npos);
        if (param_nodes_[index] != npos) return Var{param_nodes_[index]};
        Node n;
        n.op = OpKind::Parameter;
        n.param_index = index;
        n.value = (*store_)[index].value;
        n.requires_grad = true;
        const Var v = push(std::move(n));
        param_nodes_[index] = v.id;
        return v;
    }

    Var param(const std::string& name) {
        require(store_ != nullptr, "graph has no parameter store");
        return param(store_->index_of(name));
    }

    // ---- linear algebra -----------------------------------------------------

    Var matmul(Var a, Var b) { return op2(OpKind::MatMul, a, b); }
    Var transpose(Var a) { return op1(OpKind::Transpose, a); }
    Var add(Var a, Var b) { return op2(OpKind::Add, a, b); }
    Var sub(Var a, Var b) { return op2(OpKind::Sub, a, b); }
    Var mul(Var a, Var b) { return op2(OpKind::Mul, a, b); }
    Var add_row(Var x, Var row) { return op2(OpKind::AddRow, x, row); }
    Var mul_row(Var x, Var row) { return op2(OpKind::MulRow, x, row); }

    Var scale(Var x, double s) {
        Node n = make(OpKind::Scale, {x.id});
        n.a = s;
        return emit(std::move(n));
    }

    Var add_scalar(Var x, double s) {
        Node n = make(OpKind::AddScalar, {x.id});
        n.a = s;
        return emit(std::move(n));
    }

    Var neg(Var x) { return scale(x, -1.0); }

    // ---- pointwise ----------------------------------------------------------

    Var exp(Var x) { return op1(OpKind::Exp, x); }
    Var log(Var x) { return op1(OpKind::Log, x); }
    Var sigmoid(Var x) { return op1(OpKind::Sigmoid, x); }
    Var log_sigmoid(Var x) { return op1(OpKind::LogSigmoid, x); }
    Var tanh(Var x) { return op1(OpKind::Tanh, x); }
    Var gelu(Var x) { return op1(OpKind::Gelu, x); }

    Var clip(Var x, double lo, double hi) {
        require(lo <= hi, "clip bounds reversed");
        Node n = make(OpKind::Clip, {x.id});
        n.a = lo;
        n.b = hi;
        return emit(std::move(n));
    }

    Var minimum(Var a, Var b) { return op2(OpKind::Minimum, a, b); }
    Var maximum(Var a, Var b) { return op2(OpKind::Maximum, a, b); }

    // ---- row-wise -----------------------------------------------------------

    Var softmax_rows(Var x) { return op1(OpKind::SoftmaxRows, x); }

    /// Softmax where row i only sees columns j <= i + (cols - rows).
    Var causal_softmax_rows(Var x) { return op1(OpKind::CausalSoftmaxRows, x); }

    Var log_softmax_rows(Var x) { return op1(OpKind::LogSoftmaxRows, x); }

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        Node n = make(OpKind::LayerNorm, {x.id, gamma.id, beta.id});
        n.a = eps;
        return emit(std::move(n));
    }

    // ---- indexing -----------------------------------------------------------

    Var embedding(Var table, std::vector<std::size_t> ids) {
        Node n = make(OpKind::Embedding, {table.id});
        n.index = std::move(ids);
        return emit(std::move(n));
    }

    Var gather_rows(Var x, std::vector<std::size_t> rows) {
        Node n = make(OpKind::GatherRows, {x.id});
        n.index = std::move(rows);
        return emit(std::move(n));
    }

    /// out[i] = x[i, cols[i]], shape m x 1.
    Var pick(Var x, std::vector<std::size_t> cols) {
        Node n = make(OpKind::Pick, {x.id});
        n.index = std::move(cols);
        return emit(std::move(n));
    }

    Var slice_cols(Var x, std::size_t start, std::size_t width) {
        Node n = make(OpKind::SliceCols, {x.id});
        n.i0 = start;
        n.i1 = width;
        return emit(std::move(n));
    }

    Var concat_cols(const std::vector<Var>& parts) {
        require(!parts.empty(), "concat_cols of nothing");
        std::vector<std::size_t> ids;
        for (auto p : parts) ids.push_back(p.id);
        return emit(make(OpKind::ConcatCols, std::move(ids)));
    }

    /// Rotates row r by its own position positions[r].
    Var rope(Var x, std::vector<std::size_t> positions, double base) {
        Node n = make(OpKind::Rope, {x.id});
        n.index = std::move(positions);
        n.a = base;
        return emit(std::move(n));
    }

    // ---- reductions ---------------------------------------------------------

    Var sum(Var x) { return op1(OpKind::Sum, x); }
    Var mean(Var x) { return op1(OpKind::Mean, x); }
    /// Column-wise mean over rows, shape 1 x cols.
    Var mean_rows(Var x) { return op1(OpKind::MeanRows, x); }

    // ---- access -------------------------------------------------------------

    const TensorT& value(Var v) const { return node(v).value; }

    /// Gradient from the most recent backward(); zeros if the node was not reached.
    TensorT grad(Var v) const {
        const Node& n = node(v);
        if (n.has_grad) return n.grad;
        return TensorT(n.value.shape(), T(0));
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    OpKind kind(Var v) const { return node(v).op; }

    void mark_output(std::string name, Var v) {
        node(v);
        outputs_[std::move(name)] = v.id;
    }

    /// Rebinds named inputs, re-reads parameters and recomputes every node.
    std::map<std::string, TensorT> evaluate(const std::map<std::string, TensorT>& inputs = {}) {
        for (const auto& [name, tensor] : inputs) {
            bool bound = false;
            for (auto& n : nodes_) {
                if (n.op == OpKind::Input && n.name == name) {
                    require(tensor.same_shape(n.value), "input '", name, "' rebound with shape ",
                            shape_string(tensor.shape()), ", expected ", shape_string(n.value.shape()));
                    require(tensor.all_finite(), "graph input '", name, "' contains non-finite values");
                    n.value = tensor;
                    bound = true;
                }
            }
            require(bound, "no graph input named '", name, "'");
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            if (n.op == OpKind::Input) continue;
            if (n.op == OpKind::Parameter) {
                n.value = (*store_)[n.param_index].value;
                continue;
            }
            compute(i);
        }
        std::map<std::string, TensorT> out;
        for (const auto& [name, id] : outputs_) out.emplace(name, nodes_[id].value);
        return out;
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every parameter
    /// in the bound store (zeros for parameters the loss does not depend on).
    BasicGradients<T> backward(Var loss) {
        const Node& ln = node(loss);
        require(ln.value.size() == 1, "backward() needs a scalar loss, got shape ",
                shape_string(ln.value.shape()));
        for (auto& n : nodes_) {
            n.has_grad = false;
            n.grad = TensorT();
        }
        Node& root = nodes_[loss.id];
        root.grad = TensorT(root.value.shape(), T(1));
        root.has_grad = true;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (!nodes_[i].has_grad || !nodes_[i].requires_grad) continue;
            propagate(i);
        }
        BasicGradients<T> g;
        if (store_ != nullptr) {
            g = BasicGradients<T>::zeros_like(*store_);
            for (std::size_t pi = 0; pi < param_nodes_.size(); ++pi) {
                const std::size_t id = param_nodes_[pi];
                if (id != npos && nodes_[id].has_grad) g.tensors[pi] = nodes_[id].grad;
            }
        }
        return g;
    }

private:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    struct Node {
        OpKind op = OpKind::Input;
        std::vector<std::size_t> inputs;
        TensorT value;
        TensorT grad;
        bool requires_grad = false;
        bool has_grad = false;
        double a = 0.0;
        double b = 0.0;
        std::size_t i0 = 0;
        std::size_t i1 = 0;
        std::vector<std::size_t> index;
        std::string name;
        std::size_t param_index = 0;
        std::vector<T> cache;
    };

    const Node& node(Var v) const {
        require(v.id < nodes_.size(), "invalid graph variable ", v.id);
        return nodes_[v.id];
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Node make(OpKind op, std::vector<std::size_t> inputs) {
        Node n;
        n.op = op;
        for (auto id : inputs) {
            require(id < nodes_.size(), "op ", op_name(op), " references unknown node ", id);
            n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        }
        n.inputs = std::move(inputs);
        return n;
    }

    Var op1(OpKind op, Var a) { return emit(make(op, {a.id})); }
    Var op2(OpKind op, Var a, Var b) { return emit(make(op, {a.id, b.id})); }

    Var emit(Node n) {
        nodes_.push_back(std::move(n));
        const std::size_t id = nodes_.size() - 1;
        try {
            compute(id);
        } catch (...) {
            nodes_.pop_back();
            throw;
        }
        return Var{id};
    }

    [[noreturn]] void shape_error(std::size_t id, const std::string& msg) const {
        fail("node ", id, " (", op_name(nodes_[id].op), "): ", msg);
    }

    void check_shape(std::size_t id, bool ok, const std::string& msg) const {
        if (!ok) shape_error(id, msg);
    }

    const TensorT& in(std::size_t id, std::size_t k) const { return nodes_[nodes_[id].inputs[k]].value; }

    void compute(std::size_t id) {
        Node& n = nodes_[id];
        TensorT out;
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Parameter:
                return;
            case OpKind::MatMul: {
                const TensorT& a = in(id, 0);
                const TensorT& b = in(id, 1);
                check_shape(id, a.cols() == b.rows(),
                            "inner dimensions differ: " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
                const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
                out = TensorT::matrix(m, p);
                for (std::size_t i = 0; i < m; ++i) {
                    T* orow = &out(i, 0);
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T av = a(i, kk);
                        if (av == T(0)) continue;
                        const T* brow = &b(kk, 0);
                        for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
                    }
                }
                break;
            }
            case OpKind::Transpose: {
                const TensorT& a = in(id, 0);
                out = TensorT::matrix(a.cols(), a.rows());
                for (std::size_t i = 0; i < a.rows(); ++i)
                    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
                break;
            }
            case OpKind::Add:
            case OpKind::Sub:
            case OpKind::Mul:
            case OpKind::Minimum:
            case OpKind::Maximum: {
                const TensorT& a = in(id, 0);
                const TensorT& b = in(id, 1);
                check_shape(id, a.same_shape(b),
                            "operand shapes differ: " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
                out = TensorT::matrix(a.rows(), a.cols());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    switch (n.op) {
                        case OpKind::Add: out[i] = a[i] + b[i]; break;
                        case OpKind::Sub: out[i] = a[i] - b[i]; break;
                        case OpKind::Mul: out[i] = a[i] * b[i]; break;
                        case OpKind::Minimum: out[i] = b[i] < a[i] ? b[i] : a[i]; break;
                        default: out[i] = b[i] > a[i] ? b[i] : a[i]; break;
                    }
                }
                break;
            }
            case OpKind::AddRow:
            case OpKind::MulRow: {
                const TensorT& x = in(id, 0);
                const TensorT& r = in(id, 1);
                check_shape(id, r.rows() == 1 && r.cols() == x.cols(),
                            "row operand " + shape_string(r.shape()) + " does not broadcast over " +
                                shape_string(x.shape()));
                out = TensorT::matrix(x.rows(), x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        out(i, j) = n.op == OpKind::AddRow ? x(i, j) + r[j] : x(i, j) * r[j];
                break;
            }
            case OpKind::Scale:
            case OpKind::AddScalar:
            case OpKind::Exp:
            case OpKind::Log:
            case OpKind::Sigmoid:
            case OpKind::LogSigmoid:
            case OpKind::Tanh:
            case OpKind::Gelu:
            case OpKind::Clip: {
                const TensorT& x = in(id, 0);
                out = TensorT::matrix(x.rows(), x.cols());
                const T s = static_cast<T>(n.a);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const T v = x[i];
                    T r{};
                    switch (n.op) {
                        case OpKind::Scale: r = v * s; break;
                        case OpKind::AddScalar: r = v + s; break;
                        case OpKind::Exp: r = std::exp(v); break;
                        case OpKind::Log: r = std::log(v); break;
                        case OpKind::Sigmoid: r = stable_sigmoid(v); break;
                        case OpKind::LogSigmoid: r = stable_log_sigmoid(v); break;
                        case OpKind::Tanh: r = std::tanh(v); break;
                        case OpKind::Gelu: r = gelu_tanh(v); break;
                        default: r = std::clamp(v, static_cast<T>(n.a), static_cast<T>(n.b)); break;
                    }
                    out[i] = r;
                }
                break;
            }
            case OpKind::SoftmaxRows:
            case OpKind::CausalSoftmaxRows:
            case OpKind::LogSoftmaxRows: {
                const TensorT& x = in(id, 0);
                check_shape(id, x.cols() > 0, "softmax over zero columns");
                out = TensorT::matrix(x.rows(), x.cols());
                const bool causal = n.op == OpKind::CausalSoftmaxRows;
                if (causal) check_shape(id, x.cols() >= x.rows(), "causal softmax needs cols >= rows");
                const std::size_t shift = x.cols() - (causal ? x.rows() : 0);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    const std::size_t width = causal ? i + shift + 1 : x.cols();
                    T mx = x(i, 0);
                    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x(i, j));
                    T z = 0;
                    for (std::size_t j = 0; j < width; ++j) z += std::exp(x(i, j) - mx);
                    if (n.op == OpKind::LogSoftmaxRows) {
                        const T lz = mx + std::log(z);
                        for (std::size_t j = 0; j < width; ++j) out(i, j) = x(i, j) - lz;
                    } else {
                        for (std::size_t j = 0; j < width; ++j) out(i, j) = std::exp(x(i, j) - mx) / z;
                    }
                }
                break;
            }
            case OpKind::LayerNorm: {
                const TensorT& x = in(id, 0);
                const TensorT& g = in(id, 1);
                const TensorT& b = in(id, 2);
                check_shape(id, g.rows() == 1 && b.rows() == 1 && g.cols() == x.cols() && b.cols() == x.cols(),
                            "gain/bias must be 1 x " + std::to_string(x.cols()));
                const std::size_t d = x.cols();
                out = TensorT::matrix(x.rows(), d);
                n.cache.assign(x.rows() * 2, T(0));  // mean, rstd per row
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    T mu = 0;
                    for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
                    mu /= static_cast<T>(d);
                    T var = 0;
                    for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
                    var /= static_cast<T>(d);
                    const T rstd = T(1) / std::sqrt(var + static_cast<T>(n.a));
                    n.cache[2 * i] = mu;
                    n.cache[2 * i + 1] = rstd;
                    for (std::size_t j = 0; j < d; ++j) out(i, j) = (x(i, j) - mu) * rstd * g[j] + b[j];
                }
                break;
            }
            case OpKind::Embedding:
            case OpKind::GatherRows: {
                const TensorT& x = in(id, 0);
                out = TensorT::matrix(n.index.size(), x.cols());
                for (std::size_t i = 0; i < n.index.size(); ++i) {
                    check_shape(id, n.index[i] < x.rows(),
                                "row index " + std::to_string(n.index[i]) + " out of range for " +
                                    shape_string(x.shape()));
                    std::copy_n(&x(n.index[i], 0), x.cols(), &out(i, 0));
                }
                break;
            }
            case OpKind::Pick: {
                const TensorT& x = in(id, 0);
                check_shape(id, n.index.size() == x.rows(), "pick needs one column index per row");
                out = TensorT::matrix(x.rows(), 1);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    check_shape(id, n.index[i] < x.cols(), "column index out of range");
                    out[i] = x(i, n.index[i]);
                }
                break;
            }
            case OpKind::SliceCols: {
                const TensorT& x = in(id, 0);
                check_shape(id, n.i0 + n.i1 <= x.cols(), "slice exceeds column count");
                out = TensorT::matrix(x.rows(), n.i1);
                for (std::size_t i = 0; i < x.rows(); ++i) std::copy_n(&x(i, n.i0), n.i1, &out(i, 0));
                break;
            }
            case OpKind::ConcatCols: {
                std::size_t total = 0;
                const std::size_t r = in(id, 0).rows();
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    check_shape(id, in(id, k).rows() == r, "concat operands disagree on row count");
                    total += in(id, k).cols();
                }
                out = TensorT::matrix(r, total);
                std::size_t off = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const TensorT& p = in(id, k);
                    for (std::size_t i = 0; i < r; ++i) std::copy_n(&p(i, 0), p.cols(), &out(i, off));
                    off += p.cols();
                }
                break;
            }
            case OpKind::Rope: {
                const TensorT& x = in(id, 0);
                check_shape(id, x.cols() % 2 == 0, "rope needs an even width");
                check_shape(id, n.index.size() == x.rows(), "rope needs one position per row");
                out = TensorT::matrix(x.rows(), x.cols());
                const std::size_t d = x.cols();
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    for (std::size_t t = 0; t < d / 2; ++t) {
                        const double ang = rope_angle(n.index[i], t, d, n.a);
                        const T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
                        const T x0 = x(i, 2 * t), x1 = x(i, 2 * t + 1);
                        out(i, 2 * t) = x0 * c - x1 * s;
                        out(i, 2 * t + 1) = x0 * s + x1 * c;
                    }
                }
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                const TensorT& x = in(id, 0);
                check_shape(id, x.size() > 0, "reduction over empty tensor");
                T acc = 0;
                for (T v : x.data()) acc += v;
                if (n.op == OpKind::Mean) acc /= static_cast<T>(x.size());
                out = TensorT::scalar(acc);
                break;
            }
            case OpKind::MeanRows: {
                const TensorT& x = in(id, 0);
                check_shape(id, x.rows() > 0, "mean over zero rows");
                out = TensorT::matrix(1, x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
                for (auto& v : out.data()) v /= static_cast<T>(x.rows());
                break;
            }
        }
        if (!out.all_finite()) {
            throw DivergenceError(srm::detail::concat("node ", id, " (", op_name(n.op),
                                                 ") produced a non-finite value"));
        }
        n.value = std::move(out);
    }

    TensorT& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = TensorT(n.value.shape(), T(0));
            n.has_grad = true;
        }
        return n.grad;
    }

    void propagate(std::size_t id) {
        Node& n = nodes_[id];
        const TensorT& gy = n.grad;
        const TensorT& y = n.value;
        auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Parameter:
                return;
            case OpKind::MatMul: {
                const std::size_t ia = n.inputs[0], ib = n.inputs[1];
                const TensorT& a = nodes_[ia].value;
                const TensorT& b = nodes_[ib].value;
                const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
                if (wants(0)) {
                    TensorT& ga = grad_slot(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                        const T* grow = &gy(i, 0);
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const T* brow = &b(kk, 0);
                            T acc = 0;
                            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                            ga(i, kk) += acc;
                        }
                    }
                }
                if (wants(1)) {
                    TensorT& gb = grad_slot(ib);
                    for (std::size_t i = 0; i < m; ++i) {
                        const T* grow = &gy(i, 0);
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const T av = a(i, kk);
                            if (av == T(0)) continue;
                            T* gbrow = &gb(kk, 0);
                            for (std::size_t j = 0; j < p; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
                return;
            }
            case OpKind::Transpose: {
                TensorT& ga = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < ga.rows(); ++i)
                    for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += gy(j, i);
                return;
            }
            case OpKind::Add:
            case OpKind::Sub: {
                const T sb = n.op == OpKind::Add ? T(1) : T(-1);
                if (wants(0)) {
                    TensorT& ga = grad_slot(n.inputs[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                }
                if (wants(1)) {
                    TensorT& gb = grad_slot(n.inputs[1]);
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += sb * gy[i];
                }
                return;
            }
            case OpKind::Mul: {
                const TensorT& a = in(id, 0);
                const TensorT& b = in(id, 1);
                if (wants(0)) {
                    TensorT& ga = grad_slot(n.inputs[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
                }
                if (wants(1)) {
                    TensorT& gb = grad_slot(n.inputs[1]);
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
                }
                return;
            }
            case OpKind::Minimum:
            case OpKind::Maximum: {
                // Ties route the gradient to the first operand.
                const TensorT& a = in(id, 0);
                const TensorT& b = in(id, 1);
                const bool is_min = n.op == OpKind::Minimum;
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    const bool pick_b = is_min ? b[i] < a[i] : b[i] > a[i];
                    const std::size_t k = pick_b ? 1 : 0;
                    if (wants(k)) grad_slot(n.inputs[k])[i] += gy[i];
                }
                return;
            }
            case OpKind::AddRow:
            case OpKind::MulRow: {
                const TensorT& x = in(id, 0);
                const TensorT& r = in(id, 1);
                const bool is_add = n.op == OpKind::AddRow;
                if (wants(0)) {
                    TensorT& gx = grad_slot(n.inputs[0]);
                    for (std::size_t i = 0; i < x.rows(); ++i)
                        for (std::size_t j = 0; j < x.cols(); ++j) gx(i, j) += is_add ? gy(i, j) : gy(i, j) * r[j];
                }
                if (wants(1)) {
                    TensorT& gr = grad_slot(n.inputs[1]);
                    for (std::size_t i = 0; i < x.rows(); ++i)
                        for (std::size_t j = 0; j < x.cols(); ++j) gr[j] += is_add ? gy(i, j) : gy(i, j) * x(i, j);
                }
                return;
            }
            case OpKind::Scale:
            case OpKind::AddScalar:
            case OpKind::Exp:
            case OpKind::Log:
            case OpKind::Sigmoid:
            case OpKind::LogSigmoid:
            case OpKind::Tanh:
            case OpKind::Gelu:
            case OpKind::Clip: {
                const TensorT& x = in(id, 0);
                TensorT& gx = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    T d{};
                    switch (n.op) {
                        case OpKind::Scale: d = static_cast<T>(n.a); break;
                        case OpKind::AddScalar: d = T(1); break;
                        case OpKind::Exp: d = y[i]; break;
                        case OpKind::Log: d = T(1) / x[i]; break;
                        case OpKind::Sigmoid: d = y[i] * (T(1) - y[i]); break;
                        case OpKind::LogSigmoid: d = stable_sigmoid(-x[i]); break;
                        case OpKind::Tanh: d = T(1) - y[i] * y[i]; break;
                        case OpKind::Gelu: d = gelu_tanh_grad(x[i]); break;
                        default:
                            d = (x[i] < static_cast<T>(n.a) || x[i] > static_cast<T>(n.b)) ? T(0) : T(1);
                            break;
                    }
                    gx[i] += gy[i] * d;
                }
                return;
            }
            case OpKind::SoftmaxRows:
            case OpKind::CausalSoftmaxRows: {
                TensorT& gx = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < y.rows(); ++i) {
                    T dot = 0;
                    for (std::size_t j = 0; j < y.cols(); ++j) dot += gy(i, j) * y(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (gy(i, j) - dot);
                }
                return;
            }
            case OpKind::LogSoftmaxRows: {
                TensorT& gx = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < y.rows(); ++i) {
                    T total = 0;
                    for (std::size_t j = 0; j < y.cols(); ++j) total += gy(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += gy(i, j) - std::exp(y(i, j)) * total;
                }
                return;
            }
            case OpKind::LayerNorm: {
                const TensorT& x = in(id, 0);
                const TensorT& g = in(id, 1);
                const std::size_t d = x.cols();
                std::vector<T> dxhat(d);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    const T mu = n.cache[2 * i], rstd = n.cache[2 * i + 1];
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T xhat = (x(i, j) - mu) * rstd;
                        dxhat[j] = gy(i, j) * g[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat;
                    }
                    mean_d /= static_cast<T>(d);
                    mean_dx /= static_cast<T>(d);
                    if (wants(0)) {
                        TensorT& gx = grad_slot(n.inputs[0]);
                        for (std::size_t j = 0; j < d; ++j) {
                            const T xhat = (x(i, j) - mu) * rstd;
                            gx(i, j) += rstd * (dxhat[j] - mean_d - xhat * mean_dx);
                        }
                    }
                    if (wants(1)) {
                        TensorT& gg = grad_slot(n.inputs[1]);
                        for (std::size_t j = 0; j < d; ++j) gg[j] += gy(i, j) * (x(i, j) - mu) * rstd;
                    }
                    if (wants(2)) {
                        TensorT& gb = grad_slot(n.inputs[2]);
                        for (std::size_t j = 0; j < d; ++j) gb[j] += gy(i, j);
                    }
                }
                return;
            }
            case OpKind::Embedding:
            case OpKind::GatherRows: {
                TensorT& gx = grad_slot(n.inputs[0]);
                const std::size_t c = gx.cols();
                for (std::size_t i = 0; i < n.index.size(); ++i) {
                    T* dst = &gx(n.index[i], 0);
                    const T* src = &gy(i, 0);
                    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                }
                return;
            }
            case OpKind::Pick: {
                TensorT& gx = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < n.index.size(); ++i) gx(i, n.index[i]) += gy[i];
                return;
            }
            case OpKind::SliceCols: {
                TensorT& gx = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < gy.rows(); ++i)
                    for (std::size_t j = 0; j < n.i1; ++j) gx(i, n.i0 + j) += gy(i, j);
                return;
            }
            case OpKind::ConcatCols: {
                std::size_t off = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t w = nodes_[n.inputs[k]].value.cols();
                    if (wants(k)) {
                        TensorT& gp = grad_slot(n.inputs[k]);
                        for (std::size_t i = 0; i < gy.rows(); ++i)
                            for (std::size_t j = 0; j < w; ++j) gp(i, j) += gy(i, off + j);
                    }
                    off += w;
                }
                return;
            }
            case OpKind::Rope: {
                TensorT& gx = grad_slot(n.inputs[0]);
                const std::size_t d = gy.cols();
                for (std::size_t i = 0; i < gy.rows(); ++i) {
                    for (std::size_t t = 0; t < d / 2; ++t) {
                        const double ang = rope_angle(n.index[i], t, d, n.a);
                        const T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
                        const T g0 = gy(i, 2 * t), g1 = gy(i, 2 * t + 1);
                        gx(i, 2 * t) += g0 * c + g1 * s;
                        gx(i, 2 * t + 1) += -g0 * s + g1 * c;
                    }
                }
                return;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                TensorT& gx = grad_slot(n.inputs[0]);
                const T s = n.op == OpKind::Mean ? gy[0] / static_cast<T>(gx.size()) : gy[0];
                for (auto& v : gx.data()) v += s;
                return;
            }
            case OpKind::MeanRows: {
                TensorT& gx = grad_slot(n.inputs[0]);
                const T inv = T(1) / static_cast<T>(gx.rows());
                for (std::size_t i = 0; i < gx.rows(); ++i)
                    for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += gy[j] * inv;
                return;
            }
        }
    }

    const Store* store_ = nullptr;
    std::vector<Node> nodes_;
    std::vector<std::size_t> param_nodes_;
    std::map<std::string, std::size_t> outputs_;
};

using Graph = BasicGraph<real>;

}  // namespace srm::nn
