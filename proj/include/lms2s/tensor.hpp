#pragma once

// Dense-tensor engine with reverse-mode automatic differentiation. Rank 0..2
// row-major storage, enough operator coverage for LSTMs, MLPs, softmax losses
// and the actor-critic networks. Ops executed while a GradTape is in scope and
// touching at least one grad-requiring input record a backward closure on the
// tape; replaying the tape in reverse order (reverse topological, since nodes
// are recorded in execution order) accumulates gradients into the leaves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/rng.hpp"

namespace lms2s {

namespace detail {

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // same length as data once requires_grad is set
    bool requires_grad = false;
};

}  // namespace detail

template <typename S>
class GradTape;

template <typename S = double>
class Tensor {
public:
    Tensor() : impl_(std::make_shared<detail::TensorImpl<S>>()) {}

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_->data.assign(shape_numel(shape), S(0));
        t.impl_->shape = std::move(shape);
        return t;
    }

    static Tensor full(Shape shape, S value) {
        Tensor t;
        t.impl_->data.assign(shape_numel(shape), value);
        t.impl_->shape = std::move(shape);
        return t;
    }

    static Tensor scalar(S value) { return full({}, value); }

    static Tensor from_vector(std::vector<S> values, Shape shape) {
        if (values.size() != shape_numel(shape))
            throw ShapeError("from_vector: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        Tensor t;
        t.impl_->data = std::move(values);
        t.impl_->shape = std::move(shape);
        return t;
    }

    // Deep copy; the clone never aliases this tensor's storage.
    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = impl_->requires_grad;
        if (impl_->requires_grad) t.impl_->grad.assign(impl_->data.size(), S(0));
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

    std::span<S> data() { return impl_->data; }
    std::span<const S> data() const { return impl_->data; }
    std::span<S> grad() { return impl_->grad; }
    std::span<const S> grad() const { return impl_->grad; }

    S at(std::size_t i) const { return impl_->data.at(i); }
    S at(std::size_t r, std::size_t c) const {
        return impl_->data.at(r * impl_->shape.at(1) + c);
    }
    S& at(std::size_t i) { return impl_->data.at(i); }
    S& at(std::size_t r, std::size_t c) {
        return impl_->data.at(r * impl_->shape.at(1) + c);
    }
    S value() const {
        if (numel() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) {
        impl_->requires_grad = v;
        if (v && impl_->grad.size() != impl_->data.size())
            impl_->grad.assign(impl_->data.size(), S(0));
        if (!v) impl_->grad.clear();
    }
    void zero_grad() {
        std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    bool defined() const { return !impl_->shape.empty() || !impl_->data.empty(); }

    std::shared_ptr<detail::TensorImpl<S>> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl<S>> impl_;
};

// Ordered record of executed primitives. Single use: after backward() the tape
// is marked consumed and must be clear()ed before recording again.
template <typename S>
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void record(std::function<void()> step) {
        if (consumed_) throw ContractError("GradTape: recording on a consumed tape");
        steps_.push_back(std::move(step));
    }

    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }

    void clear() {
        steps_.clear();
        consumed_ = false;
    }

    // Seeds d(loss)/d(loss)=1 and replays the recorded primitives in reverse.
    void backward(Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        if (consumed_) throw ContractError("backward: tape already consumed");
        if (!loss.requires_grad())
            throw ContractError("backward: loss does not require grad (no taped path to parameters)");
        loss.grad()[0] += S(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        consumed_ = true;
    }

    class Scope {
    public:
        explicit Scope(GradTape& tape) : prev_(current_) { current_ = &tape; }
        ~Scope() { current_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradTape* prev_;
    };

    static GradTape* current() { return current_; }

private:
    static thread_local GradTape* current_;
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

template <typename S>
thread_local GradTape<S>* GradTape<S>::current_ = nullptr;

namespace detail {

// Set while grad_check runs: every op then verifies its output is finite and
// names itself on failure.
inline thread_local bool g_check_finite = false;

template <typename S>
inline void check_finite(const Tensor<S>& t, const char* op) {
    if (!g_check_finite) return;
    for (S v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw ContractError(std::string("non-finite value produced by op '") + op + "'");
}

template <typename S, typename F>
inline void maybe_record(Tensor<S>& out, bool any_grad, F&& fn) {
    auto* tape = GradTape<S>::current();
    if (tape && any_grad) {
        out.set_requires_grad(true);
        tape->record(std::forward<F>(fn));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape).
// ---------------------------------------------------------------------------

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::check_finite(out, "add");
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
                             for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                                 if (ai->requires_grad) ai->grad[i] += oi->grad[i];
                                 if (bi->requires_grad) bi->grad[i] += oi->grad[i];
                             }
                         });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::check_finite(out, "sub");
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
                             for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                                 if (ai->requires_grad) ai->grad[i] += oi->grad[i];
                                 if (bi->requires_grad) bi->grad[i] -= oi->grad[i];
                             }
                         });
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "mul");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::check_finite(out, "mul");
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
                             for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                                 if (ai->requires_grad) ai->grad[i] += oi->grad[i] * bi->data[i];
                                 if (bi->requires_grad) bi->grad[i] += oi->grad[i] * ai->data[i];
                             }
                         });
    return out;
}

// Elementwise minimum; ties route the gradient to the first argument.
template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "minimum");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::min(a.data()[i], b.data()[i]);
    detail::check_finite(out, "minimum");
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
                             for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                                 if (ai->data[i] <= bi->data[i]) {
                                     if (ai->requires_grad) ai->grad[i] += oi->grad[i];
                                 } else if (bi->requires_grad) {
                                     bi->grad[i] += oi->grad[i];
                                 }
                             }
                         });
    return out;
}

// ---------------------------------------------------------------------------
// Scalar-constant ops.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + c;
    detail::check_finite(out, "add_scalar");
    detail::maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl()] {
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
    return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    detail::check_finite(out, "mul_scalar");
    detail::maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), c] {
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
    });
    return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
    return mul_scalar(a, S(-1));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const Tensor<S>& a, const char* name, Fwd fwd, Bwd dydx_from_xy) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = fwd(a.data()[i]);
    check_finite(out, name);
    maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), dydx_from_xy] {
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
            ai->grad[i] += oi->grad[i] * dydx_from_xy(ai->data[i], oi->data[i]);
    });
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> exp_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "exp", [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "log", [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& a) {
    return detail::unary_op(
        a, "tanh", [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary_op(
        a, "sigmoid", [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return detail::unary_op(
        a, "relu", [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// Matrix / vector products.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = a.data()[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
                out.data()[i * n + j] += aip * b.data()[p * n + j];
        }
    detail::check_finite(out, "matmul");
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
                             const auto& g = oi->grad;
                             if (ai->requires_grad)
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t p = 0; p < k; ++p) {
                                         S acc = S(0);
                                         for (std::size_t j = 0; j < n; ++j)
                                             acc += g[i * n + j] * bi->data[p * n + j];
                                         ai->grad[i * k + p] += acc;
                                     }
                             if (bi->requires_grad)
                                 for (std::size_t p = 0; p < k; ++p)
                                     for (std::size_t j = 0; j < n; ++j) {
                                         S acc = S(0);
                                         for (std::size_t i = 0; i < m; ++i)
                                             acc += ai->data[i * k + p] * g[i * n + j];
                                         bi->grad[p * n + j] += acc;
                                     }
                         });
    return out;
}

// A[m x n] * x[n] -> [m]
template <typename S>
Tensor<S> matvec(const Tensor<S>& a, const Tensor<S>& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
        throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(x.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        S acc = S(0);
        for (std::size_t j = 0; j < n; ++j) acc += a.data()[i * n + j] * x.data()[j];
        out.data()[i] = acc;
    }
    detail::check_finite(out, "matvec");
    detail::maybe_record(out, a.requires_grad() || x.requires_grad(),
                         [ai = a.impl(), xi = x.impl(), oi = out.impl(), m, n] {
                             const auto& g = oi->grad;
                             if (ai->requires_grad)
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < n; ++j)
                                         ai->grad[i * n + j] += g[i] * xi->data[j];
                             if (xi->requires_grad)
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < n; ++j)
                                         xi->grad[j] += g[i] * ai->data[i * n + j];
                         });
    return out;
}

// A^T * x: A[m x n], x[m] -> [n]
template <typename S>
Tensor<S> matvec_t(const Tensor<S>& a, const Tensor<S>& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.dim(0) != x.dim(0))
        throw ShapeError("matvec_t: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(x.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j] += a.data()[i * n + j] * x.data()[i];
    detail::check_finite(out, "matvec_t");
    detail::maybe_record(out, a.requires_grad() || x.requires_grad(),
                         [ai = a.impl(), xi = x.impl(), oi = out.impl(), m, n] {
                             const auto& g = oi->grad;
                             if (ai->requires_grad)
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < n; ++j)
                                         ai->grad[i * n + j] += g[j] * xi->data[i];
                             if (xi->requires_grad)
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < n; ++j)
                                         xi->grad[i] += g[j] * ai->data[i * n + j];
                         });
    return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 required, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    detail::maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), m, n] {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
    });
    return out;
}

// M[r x n] + v[n] broadcast over rows (bias-add).
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& m, const Tensor<S>& v) {
    if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0))
        throw ShapeError("add_rowvec: incompatible shapes " + shape_str(m.shape()) + " and " +
                         shape_str(v.shape()));
    const std::size_t rows = m.dim(0), n = m.dim(1);
    Tensor<S> out = Tensor<S>::zeros({rows, n});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) out.data()[r * n + c] = m.data()[r * n + c] + v.data()[c];
    detail::check_finite(out, "add_rowvec");
    detail::maybe_record(out, m.requires_grad() || v.requires_grad(),
                         [mi = m.impl(), vi = v.impl(), oi = out.impl(), rows, n] {
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < n; ++c) {
                                     if (mi->requires_grad) mi->grad[r * n + c] += oi->grad[r * n + c];
                                     if (vi->requires_grad) vi->grad[c] += oi->grad[r * n + c];
                                 }
                         });
    return out;
}

// ---------------------------------------------------------------------------
// Shape surgery.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 1 || b.rank() != 1)
        throw ShapeError("concat: rank-1 required, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t na = a.dim(0), nb = b.dim(0);
    Tensor<S> out = Tensor<S>::zeros({na + nb});
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl(), na, nb] {
                             if (ai->requires_grad)
                                 for (std::size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
                             if (bi->requires_grad)
                                 for (std::size_t i = 0; i < nb; ++i) bi->grad[i] += oi->grad[na + i];
                         });
    return out;
}

// Column-wise concat of two matrices with equal row counts.
template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({rows, ca + cb});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ca; ++c) out.data()[r * (ca + cb) + c] = a.data()[r * ca + c];
        for (std::size_t c = 0; c < cb; ++c) out.data()[r * (ca + cb) + ca + c] = b.data()[r * cb + c];
    }
    detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                         [ai = a.impl(), bi = b.impl(), oi = out.impl(), rows, ca, cb] {
                             for (std::size_t r = 0; r < rows; ++r) {
                                 if (ai->requires_grad)
                                     for (std::size_t c = 0; c < ca; ++c)
                                         ai->grad[r * ca + c] += oi->grad[r * (ca + cb) + c];
                                 if (bi->requires_grad)
                                     for (std::size_t c = 0; c < cb; ++c)
                                         bi->grad[r * cb + c] += oi->grad[r * (ca + cb) + ca + c];
                             }
                         });
    return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, std::size_t start, std::size_t len) {
    if (a.rank() != 1 || start + len > a.dim(0))
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(a.shape()));
    Tensor<S> out = Tensor<S>::zeros({len});
    std::copy(a.data().begin() + start, a.data().begin() + start + len, out.data().begin());
    detail::maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), start, len] {
        for (std::size_t i = 0; i < len; ++i) ai->grad[start + i] += oi->grad[i];
    });
    return out;
}

// Row r of a matrix as a vector.
template <typename S>
Tensor<S> row(const Tensor<S>& m, std::size_t r) {
    if (m.rank() != 2 || r >= m.dim(0))
        throw IndexError("row: index " + std::to_string(r) + " out of " + shape_str(m.shape()));
    const std::size_t n = m.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    std::copy(m.data().begin() + r * n, m.data().begin() + (r + 1) * n, out.data().begin());
    detail::maybe_record(out, m.requires_grad(), [mi = m.impl(), oi = out.impl(), r, n] {
        for (std::size_t i = 0; i < n; ++i) mi->grad[r * n + i] += oi->grad[i];
    });
    return out;
}

// Gather rows by index (embedding lookup). Gradient scatter-adds.
template <typename S>
Tensor<S> rows(const Tensor<S>& m, std::span<const TokenId> idx) {
    if (m.rank() != 2) throw ShapeError("rows: rank-2 required, got " + shape_str(m.shape()));
    const std::size_t n = m.dim(1);
    Tensor<S> out = Tensor<S>::zeros({idx.size(), n});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= m.dim(0))
            throw IndexError("rows: index " + std::to_string(idx[r]) + " out of " +
                             shape_str(m.shape()));
        std::copy(m.data().begin() + idx[r] * n, m.data().begin() + (idx[r] + 1) * n,
                  out.data().begin() + r * n);
    }
    std::vector<TokenId> owned(idx.begin(), idx.end());
    detail::maybe_record(out, m.requires_grad(),
                         [mi = m.impl(), oi = out.impl(), owned = std::move(owned), n] {
                             for (std::size_t r = 0; r < owned.size(); ++r)
                                 for (std::size_t i = 0; i < n; ++i)
                                     mi->grad[owned[r] * n + i] += oi->grad[r * n + i];
                         });
    return out;
}

template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows_in) {
    if (rows_in.empty()) throw ContractError("stack_rows: empty input");
    const std::size_t n = rows_in[0].dim(0);
    bool any_grad = false;
    for (const auto& r : rows_in) {
        if (r.rank() != 1 || r.dim(0) != n)
            throw ShapeError("stack_rows: row shape " + shape_str(r.shape()) + " differs from " +
                             shape_str(rows_in[0].shape()));
        any_grad = any_grad || r.requires_grad();
    }
    Tensor<S> out = Tensor<S>::zeros({rows_in.size(), n});
    for (std::size_t r = 0; r < rows_in.size(); ++r)
        std::copy(rows_in[r].data().begin(), rows_in[r].data().end(), out.data().begin() + r * n);
    std::vector<std::shared_ptr<detail::TensorImpl<S>>> impls;
    impls.reserve(rows_in.size());
    for (const auto& r : rows_in) impls.push_back(r.impl());
    detail::maybe_record(out, any_grad, [impls = std::move(impls), oi = out.impl(), n] {
        for (std::size_t r = 0; r < impls.size(); ++r)
            if (impls[r]->requires_grad)
                for (std::size_t i = 0; i < n; ++i) impls[r]->grad[i] += oi->grad[r * n + i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::scalar(S(0));
    S acc = S(0);
    for (S v : a.data()) acc += v;
    out.data()[0] = acc;
    detail::check_finite(out, "sum");
    detail::maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl()] {
        for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[0];
    });
    return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    if (a.numel() == 0) throw ContractError("mean: empty tensor");
    const S inv = S(1) / static_cast<S>(a.numel());
    return mul_scalar(sum(a), inv);
}

// Row sums of a matrix -> vector.
template <typename S>
Tensor<S> sum_rows(const Tensor<S>& m) {
    if (m.rank() != 2) throw ShapeError("sum_rows: rank-2 required, got " + shape_str(m.shape()));
    const std::size_t rows_n = m.dim(0), n = m.dim(1);
    Tensor<S> out = Tensor<S>::zeros({rows_n});
    for (std::size_t r = 0; r < rows_n; ++r) {
        S acc = S(0);
        for (std::size_t c = 0; c < n; ++c) acc += m.data()[r * n + c];
        out.data()[r] = acc;
    }
    detail::check_finite(out, "sum_rows");
    detail::maybe_record(out, m.requires_grad(), [mi = m.impl(), oi = out.impl(), rows_n, n] {
        for (std::size_t r = 0; r < rows_n; ++r)
            for (std::size_t c = 0; c < n; ++c) mi->grad[r * n + c] += oi->grad[r];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family. Last-axis only; computed with max-subtraction.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void softmax_row(const S* x, S* y, std::size_t n) {
    S mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S total = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        total += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= total;
}

template <typename S>
void log_softmax_row(const S* x, S* y, std::size_t n) {
    S mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S total = S(0);
    for (std::size_t i = 0; i < n; ++i) total += std::exp(x[i] - mx);
    const S lse = mx + std::log(total);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - lse;
}

template <typename S>
inline void require_last_axis(const Tensor<S>& x, int axis, const char* op) {
    const int last = static_cast<int>(x.rank()) - 1;
    if (axis != -1 && axis != last)
        throw ShapeError(std::string(op) + ": only the last axis is supported, got axis " +
                         std::to_string(axis) + " for shape " + shape_str(x.shape()));
    if (x.rank() < 1 || x.shape().back() < 1)
        throw ShapeError(std::string(op) + ": needs a non-empty last axis, shape " +
                         shape_str(x.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
    detail::require_last_axis(x, axis, "softmax");
    const std::size_t n = x.shape().back();
    const std::size_t rows_n = x.numel() / n;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (std::size_t r = 0; r < rows_n; ++r)
        detail::softmax_row(x.data().data() + r * n, out.data().data() + r * n, n);
    detail::check_finite(out, "softmax");
    detail::maybe_record(out, x.requires_grad(), [xi = x.impl(), oi = out.impl(), rows_n, n] {
        // dx_i = y_i * (g_i - sum_j g_j y_j)
        for (std::size_t r = 0; r < rows_n; ++r) {
            const S* y = oi->data.data() + r * n;
            const S* g = oi->grad.data() + r * n;
            S dot = S(0);
            for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < n; ++i) xi->grad[r * n + i] += y[i] * (g[i] - dot);
        }
    });
    return out;
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x, int axis = -1) {
    detail::require_last_axis(x, axis, "log_softmax");
    const std::size_t n = x.shape().back();
    const std::size_t rows_n = x.numel() / n;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (std::size_t r = 0; r < rows_n; ++r)
        detail::log_softmax_row(x.data().data() + r * n, out.data().data() + r * n, n);
    detail::check_finite(out, "log_softmax");
    detail::maybe_record(out, x.requires_grad(), [xi = x.impl(), oi = out.impl(), rows_n, n] {
        // dx_i = g_i - softmax_i * sum_j g_j
        for (std::size_t r = 0; r < rows_n; ++r) {
            const S* y = oi->data.data() + r * n;
            const S* g = oi->grad.data() + r * n;
            S gsum = S(0);
            for (std::size_t i = 0; i < n; ++i) gsum += g[i];
            for (std::size_t i = 0; i < n; ++i)
                xi->grad[r * n + i] += g[i] - std::exp(y[i]) * gsum;
        }
    });
    return out;
}

// Negative-likelihood loss over log-probabilities: per position
// l_n = -w[y_n] * logp[n, y_n], reduced as the weighted mean over positions
// with nonzero class weight. All-masked input yields loss 0 with zero grad.
template <typename S>
Tensor<S> nll_loss(const Tensor<S>& log_probs, std::span<const TokenId> targets,
                   std::type_identity_t<std::span<const S>> class_weights) {
    if (log_probs.rank() != 2)
        throw ShapeError("nll_loss: log_probs must be [N x V], got " + shape_str(log_probs.shape()));
    const std::size_t n = log_probs.dim(0), v = log_probs.dim(1);
    if (targets.size() != n)
        throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    if (class_weights.size() != v)
        throw ShapeError("nll_loss: " + std::to_string(class_weights.size()) + " class weights for " +
                         std::to_string(v) + " classes");
    S weight_total = S(0);
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
            throw IndexError("nll_loss: target " + std::to_string(targets[i]) +
                             " out of range [0, " + std::to_string(v) + ")");
        const S w = class_weights[targets[i]];
        weight_total += w;
        acc += -w * log_probs.data()[i * v + targets[i]];
    }
    Tensor<S> out = Tensor<S>::scalar(weight_total > S(0) ? acc / weight_total : S(0));
    detail::check_finite(out, "nll_loss");
    std::vector<TokenId> owned(targets.begin(), targets.end());
    std::vector<S> w_owned(class_weights.begin(), class_weights.end());
    detail::maybe_record(out, log_probs.requires_grad(),
                         [li = log_probs.impl(), oi = out.impl(), owned = std::move(owned),
                          w_owned = std::move(w_owned), v, weight_total] {
                             if (weight_total <= S(0)) return;
                             const S g = oi->grad[0];
                             for (std::size_t i = 0; i < owned.size(); ++i)
                                 li->grad[i * v + owned[i]] -= g * w_owned[owned[i]] / weight_total;
                         });
    return out;
}

// Inverted-scaling dropout. Inactive (identity pass-through) when rate is 0 or
// no generator is supplied.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
    const S keep_inv = S(1.0 / (1.0 - rate));
    std::vector<S> mask(x.numel());
    for (auto& m : mask) m = rng->next_double() < rate ? S(0) : keep_inv;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * mask[i];
    detail::maybe_record(out, x.requires_grad(),
                         [xi = x.impl(), oi = out.impl(), mask = std::move(mask)] {
                             for (std::size_t i = 0; i < mask.size(); ++i)
                                 xi->grad[i] += oi->grad[i] * mask[i];
                         });
    return out;
}

// ---------------------------------------------------------------------------
// Initializers.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> xavier_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<S> t = Tensor<S>::zeros({fan_out, fan_in});
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-limit, limit));
    return t;
}

template <typename S>
Tensor<S> uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace lms2s
