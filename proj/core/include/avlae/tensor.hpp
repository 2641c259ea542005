#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A TensorT<T> is a node in a dynamically built computation graph. Operations
// record a backward closure on their output; TensorT::backward() walks the
// graph in reverse topological order and accumulates gradients into every
// reachable node that requires them. T is float for training and double for
// the verification suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace avlae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording within a scope (inference, sampling, detached passes).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorT;

template <typename T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <typename T>
struct TensorT : std::enable_shared_from_this<TensorT<T>> {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
    std::vector<TensorPtr<T>> parents;
    std::function<void()> backprop;

    TensorT(Shape s, std::vector<T> d, bool rg)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
    }

    TensorT(const TensorT&) = delete;
    TensorT& operator=(const TensorT&) = delete;

    static TensorPtr<T> make(Shape s, std::vector<T> d, bool rg = false) {
        return std::make_shared<TensorT<T>>(std::move(s), std::move(d), rg);
    }

    static TensorPtr<T> full(const Shape& s, T value, bool rg = false) {
        return make(s, std::vector<T>(static_cast<std::size_t>(numel(s)), value), rg);
    }

    static TensorPtr<T> zeros(const Shape& s, bool rg = false) { return full(s, T(0), rg); }
    static TensorPtr<T> ones(const Shape& s, bool rg = false) { return full(s, T(1), rg); }

    static TensorPtr<T> scalar(T value, bool rg = false) {
        return make(Shape{}, std::vector<T>{value}, rg);
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool is_leaf() const { return !backprop; }

    T item() const {
        if (size() != 1) {
            throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
        }
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void accumulate(const T* g) {
        if (!requires_grad) return;
        ensure_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }

    void zero_grad() { grad.clear(); }

    /// Gradient as a dense vector, zeros if no gradient has ever been accumulated.
    std::vector<T> grad_or_zeros() const {
        if (grad.size() == data.size()) return grad;
        return std::vector<T>(data.size(), T(0));
    }

    /// Copy of the value with no graph attached.
    TensorPtr<T> detach() const { return make(shape, data, false); }

    /// Reverse-mode sweep from a scalar. Gradients accumulate across calls
    /// until zero_grad is invoked on the leaves.
    void backward() {
        if (size() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(shape));
        }
        if (!requires_grad) {
            throw std::invalid_argument("backward: tensor does not require grad");
        }
        // Reverse post-order via explicit stack; nodes without requires_grad
        // carry no parents, so the walk stays inside the differentiable part.
        std::vector<TensorPtr<T>> topo;
        std::unordered_set<const TensorT<T>*> seen;
        std::vector<std::pair<TensorPtr<T>, std::size_t>> stack;
        stack.emplace_back(this->shared_from_this(), 0);
        seen.insert(this);
        while (!stack.empty()) {
            auto node = stack.back().first;
            auto idx = stack.back().second;
            if (idx < node->parents.size()) {
                ++stack.back().second;
                const auto& child = node->parents[idx];
                if (child->requires_grad && seen.insert(child.get()).second) {
                    stack.emplace_back(child, 0);
                }
            } else {
                topo.push_back(node);
                stack.pop_back();
            }
        }
        // Interior grads are transient per sweep; only leaves accumulate
        // across repeated backward calls.
        for (auto& node : topo) {
            if (node->backprop) node->zero_grad();
        }
        ensure_grad();
        grad[0] += T(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop();
        }
    }
};

namespace detail {

template <typename T>
TensorPtr<T> make_node(Shape shape, std::vector<T> data, std::vector<TensorPtr<T>> parents) {
    bool rg = false;
    if (grad_enabled()) {
        for (const auto& p : parents) rg = rg || p->requires_grad;
    }
    auto out = TensorT<T>::make(std::move(shape), std::move(data), rg);
    if (rg) out->parents = std::move(parents);
    return out;
}

template <typename T>
void check_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
    if (a->shape != b->shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> y(a->data);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b->data[i];
    auto out = detail::make_node(a->shape, std::move(y), {a, b});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, b, self]() {
            auto o = self.lock();
            if (!o) return;
            if (a->requires_grad) a->accumulate(o->grad.data());
            if (b->requires_grad) b->accumulate(o->grad.data());
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> y(a->data);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b->data[i];
    auto out = detail::make_node(a->shape, std::move(y), {a, b});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, b, self]() {
            auto o = self.lock();
            if (!o) return;
            if (a->requires_grad) a->accumulate(o->grad.data());
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad[i] -= o->grad[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> y(a->data);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b->data[i];
    auto out = detail::make_node(a->shape, std::move(y), {a, b});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, b, self]() {
            auto o = self.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += o->grad[i] * a->data[i];
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> div(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<T> y(a->data);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b->data[i];
    auto out = detail::make_node(a->shape, std::move(y), {a, b});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, b, self]() {
            auto o = self.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o->grad[i] / b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->grad.size(); ++i) {
                    const T bi = b->data[i];
                    b->grad[i] -= o->grad[i] * a->data[i] / (bi * bi);
                }
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> neg(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) v = -v;
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] -= o->grad[i];
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, T c) {
    std::vector<T> y(a->data);
    for (auto& v : y) v *= c;
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, c, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += c * o->grad[i];
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> add_scalar(const TensorPtr<T>& a, T c) {
    std::vector<T> y(a->data);
    for (auto& v : y) v += c;
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->accumulate(o->grad.data());
        };
    }
    return out;
}

/// Natural log; rejects non-positive entries naming the offending index.
template <typename T>
TensorPtr<T> log(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > T(0))) {
            throw std::domain_error("log: non-positive value " + std::to_string(y[i]) +
                                    " at index " + std::to_string(i));
        }
        y[i] = std::log(y[i]);
    }
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o->grad[i] / a->data[i];
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) {
        v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                const T s = o->data[i];
                a->grad[i] += o->grad[i] * s * (T(1) - s);
            }
        };
    }
    return out;
}

/// softplus(x) = log(1 + e^x), evaluated without overflow. This is the fused
/// stable form of log-sigmoid used by the adversarial losses:
///   log(sigmoid(x)) = -softplus(-x),  log(1 - sigmoid(x)) = -softplus(x).
template <typename T>
TensorPtr<T> softplus(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                const T x = a->data[i];
                const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
                a->grad[i] += o->grad[i] * s;
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> tanh_op(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) v = std::tanh(v);
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                const T th = o->data[i];
                a->grad[i] += o->grad[i] * (T(1) - th * th);
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> square(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) v *= v;
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                a->grad[i] += o->grad[i] * T(2) * a->data[i];
            }
        };
    }
    return out;
}

/// Elementwise absolute value; subgradient 0 at the kink.
template <typename T>
TensorPtr<T> abs_op(const TensorPtr<T>& a) {
    std::vector<T> y(a->data);
    for (auto& v : y) v = std::abs(v);
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                const T x = a->data[i];
                const T sgn = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                a->grad[i] += o->grad[i] * sgn;
            }
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> leaky_relu(const TensorPtr<T>& a, T slope) {
    if (!(slope > T(0) && slope < T(1))) {
        throw std::invalid_argument("leaky_relu: slope must lie in (0, 1), got " + std::to_string(slope));
    }
    std::vector<T> y(a->data);
    for (auto& v : y) v = v > T(0) ? v : slope * v;
    auto out = detail::make_node(a->shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, slope, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) {
                a->grad[i] += o->grad[i] * (a->data[i] > T(0) ? T(1) : slope);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions, shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reduce_sum(const TensorPtr<T>& a) {
    T s = T(0);
    for (T v : a->data) s += v;
    auto out = detail::make_node(Shape{}, std::vector<T>{s}, {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            const T g = o->grad[0];
            for (auto& v : a->grad) v += g;
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> reduce_mean(const TensorPtr<T>& a) {
    const T inv = T(1) / static_cast<T>(a->size());
    T s = T(0);
    for (T v : a->data) s += v;
    auto out = detail::make_node(Shape{}, std::vector<T>{s * inv}, {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, inv, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            const T g = o->grad[0] * inv;
            for (auto& v : a->grad) v += g;
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, const Shape& new_shape) {
    if (numel(new_shape) != a->size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a->shape) + " as " +
                                    shape_str(new_shape));
    }
    auto out = detail::make_node(new_shape, std::vector<T>(a->data), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->accumulate(o->grad.data());
        };
    }
    return out;
}

template <typename T>
TensorPtr<T> flatten(const TensorPtr<T>& a) {
    return reshape(a, Shape{a->size()});
}

namespace detail {

inline void split_at_axis(const Shape& s, std::size_t axis, std::int64_t& outer, std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = parts[0]->shape;
    if (axis >= first.size()) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = first;
    std::int64_t total = first[axis];
    for (std::size_t k = 1; k < parts.size(); ++k) {
        const Shape& s = parts[k]->shape;
        if (s.size() != first.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) {
                throw std::invalid_argument("concat: extent mismatch on axis " + std::to_string(i));
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;

    std::int64_t outer, inner;
    detail::split_at_axis(first, axis, outer, inner);
    std::vector<T> y(static_cast<std::size_t>(numel(out_shape)));
    const std::int64_t out_row = total * inner;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t ext = p->shape[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(p->data.data() + o * ext, ext, y.data() + o * out_row + offset);
        }
        offset += ext;
    }
    auto out = detail::make_node(out_shape, std::move(y), parts);
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [parts, axis, outer, inner, out_row, self]() {
            auto o = self.lock();
            if (!o) return;
            std::int64_t offset = 0;
            for (const auto& p : parts) {
                const std::int64_t ext = p->shape[axis] * inner;
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t ou = 0; ou < outer; ++ou) {
                        const T* src = o->grad.data() + ou * out_row + offset;
                        T* dst = p->grad.data() + ou * ext;
                        for (std::int64_t i = 0; i < ext; ++i) dst[i] += src[i];
                    }
                }
                offset += ext;
            }
        };
    }
    return out;
}

/// Contiguous sub-range along one axis.
template <typename T>
TensorPtr<T> slice(const TensorPtr<T>& a, std::size_t axis, std::int64_t start, std::int64_t len) {
    if (axis >= a->shape.size()) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > a->shape[axis]) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of extent " +
                                    std::to_string(a->shape[axis]));
    }
    Shape out_shape = a->shape;
    out_shape[axis] = len;
    std::int64_t outer, inner;
    detail::split_at_axis(a->shape, axis, outer, inner);
    const std::int64_t in_row = a->shape[axis] * inner;
    const std::int64_t out_row = len * inner;
    std::vector<T> y(static_cast<std::size_t>(outer * out_row));
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(a->data.data() + o * in_row + start * inner, out_row, y.data() + o * out_row);
    }
    auto out = detail::make_node(out_shape, std::move(y), {a});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [a, outer, inner, in_row, out_row, start, self]() {
            auto o = self.lock();
            if (!o || !a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t ou = 0; ou < outer; ++ou) {
                const T* src = o->grad.data() + ou * out_row;
                T* dst = a->grad.data() + ou * in_row + start * inner;
                for (std::int64_t i = 0; i < out_row; ++i) dst[i] += src[i];
            }
        };
    }
    return out;
}

/// Single index along an axis; the axis is dropped from the result.
template <typename T>
TensorPtr<T> select(const TensorPtr<T>& a, std::size_t axis, std::int64_t index) {
    auto s = slice(a, axis, index, 1);
    Shape squeezed;
    for (std::size_t i = 0; i < s->shape.size(); ++i) {
        if (i != axis) squeezed.push_back(s->shape[i]);
    }
    return reshape(s, squeezed);
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

/// y = x * weight^T + bias. x may be [n, in] or a single row [in].
template <typename T>
TensorPtr<T> linear(const TensorPtr<T>& x, const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
    if (weight->shape.size() != 2) throw std::invalid_argument("linear: weight must be rank 2");
    const std::int64_t out_dim = weight->shape[0];
    const std::int64_t in_dim = weight->shape[1];
    if (bias->shape != Shape{out_dim}) {
        throw std::invalid_argument("linear: bias shape " + shape_str(bias->shape) +
                                    " does not match output dim " + std::to_string(out_dim));
    }
    const bool rank1 = x->shape.size() == 1;
    if (!rank1 && x->shape.size() != 2) throw std::invalid_argument("linear: x must be rank 1 or 2");
    const std::int64_t n = rank1 ? 1 : x->shape[0];
    const std::int64_t xin = rank1 ? x->shape[0] : x->shape[1];
    if (xin != in_dim) {
        throw std::invalid_argument("linear: inner extents disagree, x " + shape_str(x->shape) +
                                    " vs weight " + shape_str(weight->shape));
    }

    std::vector<T> y(static_cast<std::size_t>(n * out_dim));
    for (std::int64_t i = 0; i < n; ++i) {
        const T* xr = x->data.data() + i * in_dim;
        T* yr = y.data() + i * out_dim;
        for (std::int64_t o = 0; o < out_dim; ++o) {
            const T* wr = weight->data.data() + o * in_dim;
            T acc = bias->data[o];
            for (std::int64_t k = 0; k < in_dim; ++k) acc += xr[k] * wr[k];
            yr[o] = acc;
        }
    }
    Shape out_shape = rank1 ? Shape{out_dim} : Shape{n, out_dim};
    auto out = detail::make_node(out_shape, std::move(y), {x, weight, bias});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, weight, bias, n, in_dim, out_dim, self]() {
            auto o = self.lock();
            if (!o) return;
            const T* gy = o->grad.data();
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    T* gx = x->grad.data() + i * in_dim;
                    const T* gyr = gy + i * out_dim;
                    for (std::int64_t ou = 0; ou < out_dim; ++ou) {
                        const T g = gyr[ou];
                        const T* wr = weight->data.data() + ou * in_dim;
                        for (std::int64_t k = 0; k < in_dim; ++k) gx[k] += g * wr[k];
                    }
                }
            }
            if (weight->requires_grad) {
                weight->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* xr = x->data.data() + i * in_dim;
                    const T* gyr = gy + i * out_dim;
                    for (std::int64_t ou = 0; ou < out_dim; ++ou) {
                        const T g = gyr[ou];
                        T* gw = weight->grad.data() + ou * in_dim;
                        for (std::int64_t k = 0; k < in_dim; ++k) gw[k] += g * xr[k];
                    }
                }
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* gyr = gy + i * out_dim;
                    for (std::int64_t ou = 0; ou < out_dim; ++ou) bias->grad[ou] += gyr[ou];
                }
            }
        };
    }
    return out;
}

/// Per-channel bias broadcast over the leading axis: x[C, ...] + b[C].
template <typename T>
TensorPtr<T> add_channel_bias(const TensorPtr<T>& x, const TensorPtr<T>& b) {
    if (x->shape.empty() || b->shape.size() != 1 || b->shape[0] != x->shape[0]) {
        throw std::invalid_argument("add_channel_bias: bias " + shape_str(b->shape) +
                                    " does not match leading extent of " + shape_str(x->shape));
    }
    const std::int64_t C = x->shape[0];
    const std::int64_t inner = x->size() / C;
    std::vector<T> y(x->data);
    for (std::int64_t c = 0; c < C; ++c) {
        const T bv = b->data[c];
        T* row = y.data() + c * inner;
        for (std::int64_t i = 0; i < inner; ++i) row[i] += bv;
    }
    auto out = detail::make_node(x->shape, std::move(y), {x, b});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, b, C, inner, self]() {
            auto o = self.lock();
            if (!o) return;
            if (x->requires_grad) x->accumulate(o->grad.data());
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* row = o->grad.data() + c * inner;
                    T acc = T(0);
                    for (std::int64_t i = 0; i < inner; ++i) acc += row[i];
                    b->grad[c] += acc;
                }
            }
        };
    }
    return out;
}

/// Cross-entropy from raw logits against an integer class index,
/// evaluated through a stable log-sum-exp.
template <typename T>
TensorPtr<T> cross_entropy_logits(const TensorPtr<T>& logits, std::int64_t target) {
    if (logits->shape.size() != 1) throw std::invalid_argument("cross_entropy_logits: logits must be rank 1");
    const std::int64_t k = logits->shape[0];
    if (target < 0 || target >= k) throw std::invalid_argument("cross_entropy_logits: target out of range");
    T mx = logits->data[0];
    for (T v : logits->data) mx = std::max(mx, v);
    T sum = T(0);
    for (T v : logits->data) sum += std::exp(v - mx);
    const T lse = mx + std::log(sum);
    auto out = detail::make_node(Shape{}, std::vector<T>{lse - logits->data[static_cast<std::size_t>(target)]},
                                 {logits});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [logits, target, mx, sum, self]() {
            auto o = self.lock();
            if (!o || !logits->requires_grad) return;
            logits->ensure_grad();
            const T g = o->grad[0];
            for (std::size_t i = 0; i < logits->grad.size(); ++i) {
                const T p = std::exp(logits->data[i] - mx) / sum;
                logits->grad[i] += g * (p - (static_cast<std::int64_t>(i) == target ? T(1) : T(0)));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial padding on [C, T, H, W]
// ---------------------------------------------------------------------------

enum class PadMode { kZero, kReplicate };

template <typename T>
TensorPtr<T> pad2d(const TensorPtr<T>& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                   std::int64_t right, PadMode mode) {
    if (x->shape.size() != 4) throw std::invalid_argument("pad2d: input must be [C, T, H, W]");
    if (top < 0 || bottom < 0 || left < 0 || right < 0) throw std::invalid_argument("pad2d: negative pad");
    const std::int64_t C = x->shape[0], Tn = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Ho = H + top + bottom, Wo = W + left + right;
    std::vector<T> y(static_cast<std::size_t>(C * Tn * Ho * Wo), T(0));
    for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t t = 0; t < Tn; ++t) {
            const T* src = x->data.data() + (c * Tn + t) * H * W;
            T* dst = y.data() + (c * Tn + t) * Ho * Wo;
            for (std::int64_t i = 0; i < Ho; ++i) {
                for (std::int64_t j = 0; j < Wo; ++j) {
                    const std::int64_t si = i - top, sj = j - left;
                    if (si >= 0 && si < H && sj >= 0 && sj < W) {
                        dst[i * Wo + j] = src[si * W + sj];
                    } else if (mode == PadMode::kReplicate) {
                        const std::int64_t ci = std::clamp<std::int64_t>(si, 0, H - 1);
                        const std::int64_t cj = std::clamp<std::int64_t>(sj, 0, W - 1);
                        dst[i * Wo + j] = src[ci * W + cj];
                    }
                }
            }
        }
    }
    auto out = detail::make_node(Shape{C, Tn, Ho, Wo}, std::move(y), {x});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, top, left, mode, C, Tn, H, W, Ho, Wo, self]() {
            auto o = self.lock();
            if (!o || !x->requires_grad) return;
            x->ensure_grad();
            for (std::int64_t c = 0; c < C; ++c) {
                for (std::int64_t t = 0; t < Tn; ++t) {
                    const T* gsrc = o->grad.data() + (c * Tn + t) * Ho * Wo;
                    T* gdst = x->grad.data() + (c * Tn + t) * H * W;
                    for (std::int64_t i = 0; i < Ho; ++i) {
                        for (std::int64_t j = 0; j < Wo; ++j) {
                            const std::int64_t si = i - top, sj = j - left;
                            if (si >= 0 && si < H && sj >= 0 && sj < W) {
                                gdst[si * W + sj] += gsrc[i * Wo + j];
                            } else if (mode == PadMode::kReplicate) {
                                const std::int64_t ci = std::clamp<std::int64_t>(si, 0, H - 1);
                                const std::int64_t cj = std::clamp<std::int64_t>(sj, 0, W - 1);
                                gdst[ci * W + cj] += gsrc[i * Wo + j];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Factorized convolutions on [C, T, H, W]
//
// conv2d applies a 2D kernel to every frame (the spatial factor); conv1d_t
// applies a 1D kernel along T at every pixel (the temporal factor). The
// transpose variants are exact adjoints: for matching hyperparameters,
// <conv(x), y> == <x, conv_transpose(y)> with the same kernel tensor.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_conv_geometry(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                const char* op) {
    if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw std::invalid_argument(std::string(op) + ": negative padding");
    if (k > in + 2 * pad) {
        throw std::invalid_argument(std::string(op) + ": kernel extent " + std::to_string(k) +
                                    " exceeds padded input " + std::to_string(in + 2 * pad));
    }
    if ((in + 2 * pad - k) % stride != 0) {
        throw std::invalid_argument(std::string(op) + ": input " + std::to_string(in) + ", kernel " +
                                    std::to_string(k) + ", stride " + std::to_string(stride) +
                                    ", pad " + std::to_string(pad) + " do not tile exactly");
    }
}

}  // namespace detail

/// Spatial factor: kernel [Cout, Cin, kh, kw], implicit zero padding.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, std::int64_t stride, std::int64_t pad) {
    if (x->shape.size() != 4) throw std::invalid_argument("conv2d: input must be [C, T, H, W]");
    if (w->shape.size() != 4) throw std::invalid_argument("conv2d: kernel must be [Cout, Cin, kh, kw]");
    const std::int64_t Ci = x->shape[0], Tn = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Co = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[1] != Ci) {
        throw std::invalid_argument("conv2d: channel mismatch, input " + std::to_string(Ci) +
                                    " vs kernel " + std::to_string(w->shape[1]));
    }
    detail::check_conv_geometry(H, kh, stride, pad, "conv2d");
    detail::check_conv_geometry(W, kw, stride, pad, "conv2d");
    const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;

    std::vector<T> y(static_cast<std::size_t>(Co * Tn * Ho * Wo), T(0));
    for (std::int64_t t = 0; t < Tn; ++t) {
        for (std::int64_t oc = 0; oc < Co; ++oc) {
            T* yr = y.data() + (oc * Tn + t) * Ho * Wo;
            for (std::int64_t ic = 0; ic < Ci; ++ic) {
                const T* xr = x->data.data() + (ic * Tn + t) * H * W;
                const T* wr = w->data.data() + (oc * Ci + ic) * kh * kw;
                for (std::int64_t oi = 0; oi < Ho; ++oi) {
                    for (std::int64_t oj = 0; oj < Wo; ++oj) {
                        T acc = T(0);
                        for (std::int64_t a = 0; a < kh; ++a) {
                            const std::int64_t ii = oi * stride + a - pad;
                            if (ii < 0 || ii >= H) continue;
                            for (std::int64_t b = 0; b < kw; ++b) {
                                const std::int64_t jj = oj * stride + b - pad;
                                if (jj < 0 || jj >= W) continue;
                                acc += wr[a * kw + b] * xr[ii * W + jj];
                            }
                        }
                        yr[oi * Wo + oj] += acc;
                    }
                }
            }
        }
    }
    auto out = detail::make_node(Shape{Co, Tn, Ho, Wo}, std::move(y), {x, w});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, w, stride, pad, Ci, Tn, H, W, Co, kh, kw, Ho, Wo, self]() {
            auto o = self.lock();
            if (!o) return;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (std::int64_t t = 0; t < Tn; ++t) {
                for (std::int64_t oc = 0; oc < Co; ++oc) {
                    const T* gyr = o->grad.data() + (oc * Tn + t) * Ho * Wo;
                    for (std::int64_t ic = 0; ic < Ci; ++ic) {
                        const T* xr = x->data.data() + (ic * Tn + t) * H * W;
                        const T* wr = w->data.data() + (oc * Ci + ic) * kh * kw;
                        T* gxr = x->requires_grad ? x->grad.data() + (ic * Tn + t) * H * W : nullptr;
                        T* gwr = w->requires_grad ? w->grad.data() + (oc * Ci + ic) * kh * kw : nullptr;
                        for (std::int64_t oi = 0; oi < Ho; ++oi) {
                            for (std::int64_t oj = 0; oj < Wo; ++oj) {
                                const T g = gyr[oi * Wo + oj];
                                if (g == T(0)) continue;
                                for (std::int64_t a = 0; a < kh; ++a) {
                                    const std::int64_t ii = oi * stride + a - pad;
                                    if (ii < 0 || ii >= H) continue;
                                    for (std::int64_t b = 0; b < kw; ++b) {
                                        const std::int64_t jj = oj * stride + b - pad;
                                        if (jj < 0 || jj >= W) continue;
                                        if (gxr) gxr[ii * W + jj] += g * wr[a * kw + b];
                                        if (gwr) gwr[a * kw + b] += g * xr[ii * W + jj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

/// Adjoint of conv2d. Kernel [Cin, Cout, kh, kw]; output H = (H-1)*stride + kh - 2*pad.
template <typename T>
TensorPtr<T> conv2d_transpose(const TensorPtr<T>& x, const TensorPtr<T>& w, std::int64_t stride,
                              std::int64_t pad) {
    if (x->shape.size() != 4) throw std::invalid_argument("conv2d_transpose: input must be [C, T, H, W]");
    if (w->shape.size() != 4) throw std::invalid_argument("conv2d_transpose: kernel must be [Cin, Cout, kh, kw]");
    const std::int64_t Ci = x->shape[0], Tn = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Co = w->shape[1], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[0] != Ci) {
        throw std::invalid_argument("conv2d_transpose: channel mismatch, input " + std::to_string(Ci) +
                                    " vs kernel " + std::to_string(w->shape[0]));
    }
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d_transpose: invalid stride/pad");
    const std::int64_t Ho = (H - 1) * stride + kh - 2 * pad;
    const std::int64_t Wo = (W - 1) * stride + kw - 2 * pad;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d_transpose: empty output");

    std::vector<T> y(static_cast<std::size_t>(Co * Tn * Ho * Wo), T(0));
    for (std::int64_t t = 0; t < Tn; ++t) {
        for (std::int64_t ic = 0; ic < Ci; ++ic) {
            const T* xr = x->data.data() + (ic * Tn + t) * H * W;
            for (std::int64_t oc = 0; oc < Co; ++oc) {
                const T* wr = w->data.data() + (ic * Co + oc) * kh * kw;
                T* yr = y.data() + (oc * Tn + t) * Ho * Wo;
                for (std::int64_t i = 0; i < H; ++i) {
                    for (std::int64_t j = 0; j < W; ++j) {
                        const T xv = xr[i * W + j];
                        if (xv == T(0)) continue;
                        for (std::int64_t a = 0; a < kh; ++a) {
                            const std::int64_t oi = i * stride + a - pad;
                            if (oi < 0 || oi >= Ho) continue;
                            for (std::int64_t b = 0; b < kw; ++b) {
                                const std::int64_t oj = j * stride + b - pad;
                                if (oj < 0 || oj >= Wo) continue;
                                yr[oi * Wo + oj] += xv * wr[a * kw + b];
                            }
                        }
                    }
                }
            }
        }
    }
    auto out = detail::make_node(Shape{Co, Tn, Ho, Wo}, std::move(y), {x, w});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, w, stride, pad, Ci, Tn, H, W, Co, kh, kw, Ho, Wo, self]() {
            auto o = self.lock();
            if (!o) return;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (std::int64_t t = 0; t < Tn; ++t) {
                for (std::int64_t ic = 0; ic < Ci; ++ic) {
                    const T* xr = x->data.data() + (ic * Tn + t) * H * W;
                    T* gxr = x->requires_grad ? x->grad.data() + (ic * Tn + t) * H * W : nullptr;
                    for (std::int64_t oc = 0; oc < Co; ++oc) {
                        const T* wr = w->data.data() + (ic * Co + oc) * kh * kw;
                        T* gwr = w->requires_grad ? w->grad.data() + (ic * Co + oc) * kh * kw : nullptr;
                        const T* gyr = o->grad.data() + (oc * Tn + t) * Ho * Wo;
                        for (std::int64_t i = 0; i < H; ++i) {
                            for (std::int64_t j = 0; j < W; ++j) {
                                T gx_acc = T(0);
                                const T xv = xr[i * W + j];
                                for (std::int64_t a = 0; a < kh; ++a) {
                                    const std::int64_t oi = i * stride + a - pad;
                                    if (oi < 0 || oi >= Ho) continue;
                                    for (std::int64_t b = 0; b < kw; ++b) {
                                        const std::int64_t oj = j * stride + b - pad;
                                        if (oj < 0 || oj >= Wo) continue;
                                        const T g = gyr[oi * Wo + oj];
                                        gx_acc += g * wr[a * kw + b];
                                        if (gwr) gwr[a * kw + b] += g * xv;
                                    }
                                }
                                if (gxr) gxr[i * W + j] += gx_acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

/// Temporal factor: kernel [Cout, Cin, kt] applied along T at every pixel.
template <typename T>
TensorPtr<T> conv1d_t(const TensorPtr<T>& x, const TensorPtr<T>& w, std::int64_t stride, std::int64_t pad) {
    if (x->shape.size() != 4) throw std::invalid_argument("conv1d_t: input must be [C, T, H, W]");
    if (w->shape.size() != 3) throw std::invalid_argument("conv1d_t: kernel must be [Cout, Cin, kt]");
    const std::int64_t Ci = x->shape[0], Tn = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Co = w->shape[0], kt = w->shape[2];
    if (w->shape[1] != Ci) {
        throw std::invalid_argument("conv1d_t: channel mismatch, input " + std::to_string(Ci) +
                                    " vs kernel " + std::to_string(w->shape[1]));
    }
    detail::check_conv_geometry(Tn, kt, stride, pad, "conv1d_t");
    const std::int64_t To = (Tn + 2 * pad - kt) / stride + 1;
    const std::int64_t HW = H * W;

    std::vector<T> y(static_cast<std::size_t>(Co * To * HW), T(0));
    for (std::int64_t oc = 0; oc < Co; ++oc) {
        for (std::int64_t ot = 0; ot < To; ++ot) {
            T* yr = y.data() + (oc * To + ot) * HW;
            for (std::int64_t ic = 0; ic < Ci; ++ic) {
                const T* wr = w->data.data() + (oc * Ci + ic) * kt;
                for (std::int64_t tau = 0; tau < kt; ++tau) {
                    const std::int64_t tt = ot * stride + tau - pad;
                    if (tt < 0 || tt >= Tn) continue;
                    const T wv = wr[tau];
                    const T* xr = x->data.data() + (ic * Tn + tt) * HW;
                    for (std::int64_t p = 0; p < HW; ++p) yr[p] += wv * xr[p];
                }
            }
        }
    }
    auto out = detail::make_node(Shape{Co, To, H, W}, std::move(y), {x, w});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, w, stride, pad, Ci, Tn, HW, Co, kt, To, self]() {
            auto o = self.lock();
            if (!o) return;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (std::int64_t oc = 0; oc < Co; ++oc) {
                for (std::int64_t ot = 0; ot < To; ++ot) {
                    const T* gyr = o->grad.data() + (oc * To + ot) * HW;
                    for (std::int64_t ic = 0; ic < Ci; ++ic) {
                        const T* wr = w->data.data() + (oc * Ci + ic) * kt;
                        T* gwr = w->requires_grad ? w->grad.data() + (oc * Ci + ic) * kt : nullptr;
                        for (std::int64_t tau = 0; tau < kt; ++tau) {
                            const std::int64_t tt = ot * stride + tau - pad;
                            if (tt < 0 || tt >= Tn) continue;
                            if (x->requires_grad) {
                                T* gxr = x->grad.data() + (ic * Tn + tt) * HW;
                                const T wv = wr[tau];
                                for (std::int64_t p = 0; p < HW; ++p) gxr[p] += wv * gyr[p];
                            }
                            if (gwr) {
                                const T* xr = x->data.data() + (ic * Tn + tt) * HW;
                                T acc = T(0);
                                for (std::int64_t p = 0; p < HW; ++p) acc += gyr[p] * xr[p];
                                gwr[tau] += acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

/// Adjoint of conv1d_t. Kernel [Cin, Cout, kt]; output T = (T-1)*stride + kt - 2*pad.
template <typename T>
TensorPtr<T> conv1d_t_transpose(const TensorPtr<T>& x, const TensorPtr<T>& w, std::int64_t stride,
                                std::int64_t pad) {
    if (x->shape.size() != 4) throw std::invalid_argument("conv1d_t_transpose: input must be [C, T, H, W]");
    if (w->shape.size() != 3) throw std::invalid_argument("conv1d_t_transpose: kernel must be [Cin, Cout, kt]");
    const std::int64_t Ci = x->shape[0], Tn = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t Co = w->shape[1], kt = w->shape[2];
    if (w->shape[0] != Ci) {
        throw std::invalid_argument("conv1d_t_transpose: channel mismatch, input " + std::to_string(Ci) +
                                    " vs kernel " + std::to_string(w->shape[0]));
    }
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv1d_t_transpose: invalid stride/pad");
    const std::int64_t To = (Tn - 1) * stride + kt - 2 * pad;
    if (To < 1) throw std::invalid_argument("conv1d_t_transpose: empty output");
    const std::int64_t HW = H * W;

    std::vector<T> y(static_cast<std::size_t>(Co * To * HW), T(0));
    for (std::int64_t ic = 0; ic < Ci; ++ic) {
        for (std::int64_t oc = 0; oc < Co; ++oc) {
            const T* wr = w->data.data() + (ic * Co + oc) * kt;
            for (std::int64_t t = 0; t < Tn; ++t) {
                const T* xr = x->data.data() + (ic * Tn + t) * HW;
                for (std::int64_t tau = 0; tau < kt; ++tau) {
                    const std::int64_t ot = t * stride + tau - pad;
                    if (ot < 0 || ot >= To) continue;
                    const T wv = wr[tau];
                    T* yr = y.data() + (oc * To + ot) * HW;
                    for (std::int64_t p = 0; p < HW; ++p) yr[p] += wv * xr[p];
                }
            }
        }
    }
    auto out = detail::make_node(Shape{Co, To, H, W}, std::move(y), {x, w});
    if (out->requires_grad) {
        std::weak_ptr<TensorT<T>> self = out;
        out->backprop = [x, w, stride, pad, Ci, Tn, HW, Co, kt, To, self]() {
            auto o = self.lock();
            if (!o) return;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (std::int64_t ic = 0; ic < Ci; ++ic) {
                for (std::int64_t oc = 0; oc < Co; ++oc) {
                    const T* wr = w->data.data() + (ic * Co + oc) * kt;
                    T* gwr = w->requires_grad ? w->grad.data() + (ic * Co + oc) * kt : nullptr;
                    for (std::int64_t t = 0; t < Tn; ++t) {
                        const T* xr = x->data.data() + (ic * Tn + t) * HW;
                        T* gxr = x->requires_grad ? x->grad.data() + (ic * Tn + t) * HW : nullptr;
                        for (std::int64_t tau = 0; tau < kt; ++tau) {
                            const std::int64_t ot = t * stride + tau - pad;
                            if (ot < 0 || ot >= To) continue;
                            const T* gyr = o->grad.data() + (oc * To + ot) * HW;
                            if (gxr) {
                                const T wv = wr[tau];
                                for (std::int64_t p = 0; p < HW; ++p) gxr[p] += wv * gyr[p];
                            }
                            if (gwr) {
                                T acc = T(0);
                                for (std::int64_t p = 0; p < HW; ++p) acc += gyr[p] * xr[p];
                                gwr[tau] += acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

/// Factorized (1+2)D convolution: spatial factor then temporal factor.
template <typename T>
TensorPtr<T> conv_1p2d(const TensorPtr<T>& x, const TensorPtr<T>& spatial_kernel,
                       const TensorPtr<T>& temporal_kernel, std::int64_t spatial_stride,
                       std::int64_t spatial_pad, std::int64_t temporal_stride, std::int64_t temporal_pad) {
    return conv1d_t(conv2d(x, spatial_kernel, spatial_stride, spatial_pad), temporal_kernel,
                    temporal_stride, temporal_pad);
}

/// Adjoint of conv_1p2d with the same kernels: temporal transpose then spatial transpose.
template <typename T>
TensorPtr<T> conv_transpose_1p2d(const TensorPtr<T>& x, const TensorPtr<T>& spatial_kernel,
                                 const TensorPtr<T>& temporal_kernel, std::int64_t spatial_stride,
                                 std::int64_t spatial_pad, std::int64_t temporal_stride,
                                 std::int64_t temporal_pad) {
    return conv2d_transpose(conv1d_t_transpose(x, temporal_kernel, temporal_stride, temporal_pad),
                            spatial_kernel, spatial_stride, spatial_pad);
}

}  // namespace avlae
