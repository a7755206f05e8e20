#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssounds/error.hpp"

namespace ssounds {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

enum class OpKind {
    leaf,
    matmul,
    add,
    add_bias,
    scale,
    gelu,
    softmax_rows,
    mse,
    transpose,
    slice_rows,
    slice_cols,
    concat_cols,
    mean_rows,
    repeat_rows,
    reshape,
};

inline const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_bias: return "add_bias";
    case OpKind::scale: return "scale";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::mse: return "mse";
    case OpKind::transpose: return "transpose";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::mean_rows: return "mean_rows";
    case OpKind::repeat_rows: return "repeat_rows";
    case OpKind::reshape: return "reshape";
    }
    return "unknown";
}

namespace detail {

struct TensorImpl;

// Gradient sinks handed to a backward rule: one per input, nullptr when that
// input does not require a gradient.
using GradSinks = std::vector<std::vector<double>*>;
using BackwardFn = std::function<void(std::span<const double> grad_out, const GradSinks& sinks)>;

struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
    std::shared_ptr<Node> producer;
};

inline thread_local int no_grad_depth = 0;

} // namespace detail

inline bool grad_enabled() noexcept { return detail::no_grad_depth == 0; }

// Within its scope, operations on this thread record no graph.
class NoGradGuard {
public:
    NoGradGuard() noexcept { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense float64 array with optional gradient. Copies share storage (handle
// semantics); use clone() for an independent value.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_size(shape) != data.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        }
        Tensor t;
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from(Shape{1}, {value}, requires_grad);
    }

    const Shape& shape() const noexcept { return impl_->shape; }
    std::size_t rank() const noexcept { return impl_->shape.size(); }
    std::size_t size() const noexcept { return impl_->data.size(); }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    std::size_t dim(std::size_t axis) const {
        if (axis >= impl_->shape.size()) {
            throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(impl_->shape));
        }
        return impl_->shape[axis];
    }

    std::span<const double> data() const noexcept { return impl_->data; }
    std::span<double> mutable_data() noexcept { return impl_->data; }

    double item() const {
        if (size() != 1) throw ContractError("tensor: item() on non-scalar " + shape_str(shape()));
        return impl_->data[0];
    }

    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

    bool requires_grad() const noexcept { return impl_->requires_grad; }

    void set_requires_grad(bool value) {
        impl_->requires_grad = value;
        if (value) {
            impl_->grad.assign(impl_->data.size(), 0.0);
        } else {
            impl_->grad.clear();
        }
    }

    std::span<const double> grad() const noexcept { return impl_->grad; }

    void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

    // Detached deep copy with the same requires_grad flag.
    Tensor clone() const { return from(shape(), impl_->data, requires_grad()); }

    bool is_leaf() const noexcept { return impl_->producer == nullptr; }

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl>& impl() const noexcept { return impl_; }

    // Build the output of an operation and wire its backward rule.
    static Tensor make_result(OpKind kind, Shape shape, std::vector<double> data,
                              std::vector<Tensor> inputs, detail::BackwardFn backward) {
        Tensor out = from(std::move(shape), std::move(data));
        const bool needs_grad = grad_enabled() &&
            std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (needs_grad) {
            out.set_requires_grad(true);
            auto node = std::make_shared<detail::Node>();
            node->kind = kind;
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) node->inputs.push_back(in.impl_);
            node->backward = std::move(backward);
            out.impl_->producer = std::move(node);
        }
        return out;
    }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline void accumulate(std::vector<double>* sink, std::span<const double> values) {
    if (sink == nullptr) return;
    for (std::size_t i = 0; i < values.size(); ++i) (*sink)[i] += values[i];
}

} // namespace detail

// [p x q] * [q x r]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    if (b.rows() != q) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(p * r, 0.0);
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = A[i * q + k];
            const double* brow = &B[k * r];
            double* orow = &out[i * r];
            for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
        }
    }
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(
        OpKind::matmul, {p, r}, std::move(out), {a, b},
        [ai, bi, p, q, r](std::span<const double> g, const detail::GradSinks& sinks) {
            if (auto* ga = sinks[0]) {
                // ga += g * b^T
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t k = 0; k < q; ++k) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bi->data[k * r + j];
                        (*ga)[i * q + k] += acc;
                    }
                }
            }
            if (auto* gb = sinks[1]) {
                // gb += a^T * g
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t k = 0; k < q; ++k) {
                        const double aik = ai->data[i * q + k];
                        for (std::size_t j = 0; j < r; ++j) (*gb)[k * r + j] += aik * g[i * r + j];
                    }
                }
            }
        });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::make_result(OpKind::add, a.shape(), std::move(out), {a, b},
                               [](std::span<const double> g, const detail::GradSinks& sinks) {
                                   detail::accumulate(sinks[0], g);
                                   detail::accumulate(sinks[1], g);
                               });
}

// Adds a length-q vector to every row of a [p x q] matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    detail::require_rank2(a, "add_bias");
    const std::size_t p = a.rows(), q = a.cols();
    if (bias.size() != q) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit rows of " +
                         shape_str(a.shape()));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out[i * q + j] += bias.data()[j];
    return Tensor::make_result(OpKind::add_bias, a.shape(), std::move(out), {a, bias},
                               [p, q](std::span<const double> g, const detail::GradSinks& sinks) {
                                   detail::accumulate(sinks[0], g);
                                   if (auto* gb = sinks[1]) {
                                       for (std::size_t i = 0; i < p; ++i)
                                           for (std::size_t j = 0; j < q; ++j) (*gb)[j] += g[i * q + j];
                                   }
                               });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return Tensor::make_result(OpKind::scale, a.shape(), std::move(out), {a},
                               [s](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
                                   }
                               });
}

namespace detail {
inline constexpr double kInvSqrt2 = 0.70710678118654752440;
} // namespace detail

// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * detail::kInvSqrt2));
    }
    auto ai = a.impl();
    return Tensor::make_result(OpKind::gelu, a.shape(), std::move(out), {a},
                               [ai](std::span<const double> g, const detail::GradSinks& sinks) {
                                   auto* ga = sinks[0];
                                   if (ga == nullptr) return;
                                   constexpr double inv_sqrt_2pi = 0.3989422804014327;
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       const double v = ai->data[i];
                                       const double cdf = 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2));
                                       const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                                       (*ga)[i] += g[i] * (cdf + v * pdf);
                                   }
                               });
}

// Row-wise softmax, stabilised by subtracting each row's maximum.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_rank2(a, "softmax_rows");
    const std::size_t p = a.rows(), q = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < p; ++i) {
        const double* row = &a.data()[i * q];
        double mx = row[0];
        for (std::size_t j = 0; j < q; ++j) {
            if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
            mx = std::max(mx, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            out[i * q + j] = std::exp(row[j] - mx);
            total += out[i * q + j];
        }
        for (std::size_t j = 0; j < q; ++j) out[i * q + j] /= total;
    }
    std::vector<double> saved = out;
    return Tensor::make_result(
        OpKind::softmax_rows, a.shape(), std::move(out), {a},
        [y = std::move(saved), p, q](std::span<const double> g, const detail::GradSinks& sinks) {
            auto* ga = sinks[0];
            if (ga == nullptr) return;
            for (std::size_t i = 0; i < p; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < q; ++j) dot += g[i * q + j] * y[i * q + j];
                for (std::size_t j = 0; j < q; ++j) (*ga)[i * q + j] += y[i * q + j] * (g[i * q + j] - dot);
            }
        });
}

// Mean over all elements of (a - b)^2, returned as a scalar tensor.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mse");
    const std::size_t n = a.size();
    if (n == 0) throw ShapeError("mse: empty operands");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.data()[i] - b.data()[i];
        total += d * d;
    }
    auto ai = a.impl(), bi = b.impl();
    return Tensor::make_result(OpKind::mse, {1}, {total / static_cast<double>(n)}, {a, b},
                               [ai, bi, n](std::span<const double> g, const detail::GradSinks& sinks) {
                                   const double k = 2.0 * g[0] / static_cast<double>(n);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double d = ai->data[i] - bi->data[i];
                                       if (sinks[0]) (*sinks[0])[i] += k * d;
                                       if (sinks[1]) (*sinks[1])[i] -= k * d;
                                   }
                               });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t p = a.rows(), q = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out[j * p + i] = a.data()[i * q + j];
    return Tensor::make_result(OpKind::transpose, {q, p}, std::move(out), {a},
                               [p, q](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       for (std::size_t i = 0; i < p; ++i)
                                           for (std::size_t j = 0; j < q; ++j) (*ga)[i * q + j] += g[j * p + i];
                                   }
                               });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    detail::require_rank2(a, "slice_rows");
    const std::size_t q = a.cols();
    if (begin + count > a.rows() || count == 0) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(a.shape()));
    }
    const auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * q);
    std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count * q));
    return Tensor::make_result(OpKind::slice_rows, {count, q}, std::move(out), {a},
                               [begin, q](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * q + i] += g[i];
                                   }
                               });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    detail::require_rank2(a, "slice_cols");
    const std::size_t p = a.rows(), q = a.cols();
    if (begin + count > q || count == 0) {
        throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(a.shape()));
    }
    std::vector<double> out(p * count);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.data()[i * q + begin + j];
    return Tensor::make_result(OpKind::slice_cols, {p, count}, std::move(out), {a},
                               [p, q, begin, count](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       for (std::size_t i = 0; i < p; ++i)
                                           for (std::size_t j = 0; j < count; ++j)
                                               (*ga)[i * q + begin + j] += g[i * count + j];
                                   }
                               });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t p = parts.front().rows();
    std::vector<std::size_t> offsets;
    std::size_t width = 0;
    for (const auto& t : parts) {
        detail::require_rank2(t, "concat_cols");
        if (t.rows() != p) throw ShapeError("concat_cols: row counts differ");
        offsets.push_back(width);
        width += t.cols();
    }
    std::vector<double> out(p * width);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t c = parts[k].cols();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * width + offsets[k] + j] = parts[k].data()[i * c + j];
    }
    std::vector<std::size_t> widths;
    for (const auto& t : parts) widths.push_back(t.cols());
    return Tensor::make_result(
        OpKind::concat_cols, {p, width}, std::move(out), parts,
        [p, width, offsets, widths](std::span<const double> g, const detail::GradSinks& sinks) {
            for (std::size_t k = 0; k < sinks.size(); ++k) {
                auto* gk = sinks[k];
                if (gk == nullptr) continue;
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                        (*gk)[i * widths[k] + j] += g[i * width + offsets[k] + j];
            }
        });
}

// Column means of a [p x q] matrix as a [1 x q] row.
inline Tensor mean_rows(const Tensor& a) {
    detail::require_rank2(a, "mean_rows");
    const std::size_t p = a.rows(), q = a.cols();
    std::vector<double> out(q, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out[j] += a.data()[i * q + j];
    for (auto& v : out) v /= static_cast<double>(p);
    return Tensor::make_result(OpKind::mean_rows, {1, q}, std::move(out), {a},
                               [p, q](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       const double inv = 1.0 / static_cast<double>(p);
                                       for (std::size_t i = 0; i < p; ++i)
                                           for (std::size_t j = 0; j < q; ++j) (*ga)[i * q + j] += g[j] * inv;
                                   }
                               });
}

// Tiles a [1 x q] row n times.
inline Tensor repeat_rows(const Tensor& row, std::size_t n) {
    detail::require_rank2(row, "repeat_rows");
    if (row.rows() != 1) throw ShapeError("repeat_rows: expected a single row, got " + shape_str(row.shape()));
    const std::size_t q = row.cols();
    std::vector<double> out;
    out.reserve(n * q);
    for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), row.data().begin(), row.data().end());
    return Tensor::make_result(OpKind::repeat_rows, {n, q}, std::move(out), {row},
                               [n, q](std::span<const double> g, const detail::GradSinks& sinks) {
                                   if (auto* ga = sinks[0]) {
                                       for (std::size_t i = 0; i < n; ++i)
                                           for (std::size_t j = 0; j < q; ++j) (*ga)[j] += g[i * q + j];
                                   }
                               });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return Tensor::make_result(OpKind::reshape, std::move(shape), std::move(out), {a},
                               [](std::span<const double> g, const detail::GradSinks& sinks) {
                                   detail::accumulate(sinks[0], g);
                               });
}

// Record form of the dynamic graph rooted at a tensor. Ids index `nodes`
// and follow topological order: every input id is smaller than its user.
struct GraphRecord {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
};

struct ComputationGraph {
    std::vector<GraphRecord> nodes;
};

namespace detail {

// Post-order DFS; returns tensors with every input before its consumers.
inline std::vector<TensorImpl*> topological_order(TensorImpl* root) {
    std::vector<TensorImpl*> order;
    std::unordered_map<TensorImpl*, bool> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
    visited[root] = true;
    while (!stack.empty()) {
        static const std::vector<std::shared_ptr<TensorImpl>> kNoInputs;
        auto& [impl, next] = stack.back();
        const auto& inputs = impl->producer ? impl->producer->inputs : kNoInputs;
        if (next < inputs.size()) {
            TensorImpl* child = inputs[next++].get();
            if (!visited[child]) {
                visited[child] = true;
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(impl);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace detail

inline ComputationGraph graph_of(const Tensor& root) {
    const auto order = detail::topological_order(root.impl().get());
    std::unordered_map<detail::TensorImpl*, std::size_t> ids;
    ComputationGraph graph;
    for (auto* impl : order) {
        const std::size_t id = graph.nodes.size();
        ids[impl] = id;
        GraphRecord rec{impl->producer ? impl->producer->kind : OpKind::leaf, {}, id};
        if (impl->producer) {
            for (const auto& in : impl->producer->inputs) rec.inputs.push_back(ids.at(in.get()));
        }
        graph.nodes.push_back(std::move(rec));
    }
    return graph;
}

// Reverse-mode sweep from a scalar. Gradients accumulate into every
// requires_grad tensor reachable from `loss` (call zero_grad to reset).
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    const auto order = detail::topological_order(loss.impl().get());
    std::unordered_map<detail::TensorImpl*, std::vector<double>> pending;
    pending[loss.impl().get()] = {1.0};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* impl = *it;
        auto found = pending.find(impl);
        if (found == pending.end() || !impl->producer) continue;
        const std::vector<double>& grad_out = found->second;
        detail::GradSinks sinks;
        sinks.reserve(impl->producer->inputs.size());
        for (const auto& in : impl->producer->inputs) {
            if (!in->requires_grad) {
                sinks.push_back(nullptr);
                continue;
            }
            auto& buf = pending[in.get()];
            if (buf.empty()) buf.assign(in->data.size(), 0.0);
            sinks.push_back(&buf);
        }
        impl->producer->backward(grad_out, sinks);
    }
    for (auto& [impl, g] : pending) {
        if (!impl->requires_grad) continue;
        if (impl->grad.size() != g.size()) impl->grad.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
    }
}

} // namespace ssounds
