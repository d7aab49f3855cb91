#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "draftlab/common.hpp"

// Minimal dense tensor arithmetic with a reverse-mode gradient tape.
//
// Tensors are value types backed by shared storage; operations never mutate
// their inputs. A tensor participates in autodiff when it carries a tape node
// id (node() >= 0). Leaf nodes are parameters registered on a Tape; every
// primitive records itself when a tape is supplied and any input is tracked.
//
// The scalar type is a template parameter: float is the working precision,
// double is used by the gradient-check tests.

namespace draftlab {

template <typename T>
class Tape;

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)),
          store_(std::make_shared<std::vector<T>>(checked_numel(shape_), T(0))) {}

    Tensor(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)), store_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (static_cast<int64_t>(store_->size()) != checked_numel(shape_)) {
            throw ShapeError("tensor data length does not match shape");
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data(), t.data() + t.numel(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    // Gaussian init via explicit Box-Muller so seeds reproduce across stdlibs.
    static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, T stddev) {
        Tensor t(std::move(shape));
        T* d = t.data();
        const int64_t n = t.numel();
        for (int64_t i = 0; i < n; i += 2) {
            double u1 = std::max(uniform_unit(rng), 1e-12);
            double u2 = uniform_unit(rng);
            double r = std::sqrt(-2.0 * std::log(u1));
            d[i] = static_cast<T>(r * std::cos(2.0 * M_PI * u2) * stddev);
            if (i + 1 < n) d[i + 1] = static_cast<T>(r * std::sin(2.0 * M_PI * u2) * stddev);
        }
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

    int64_t numel() const { return store_ ? static_cast<int64_t>(store_->size()) : 0; }
    bool defined() const { return static_cast<bool>(store_); }

    // 2-D accessors; 1-D tensors behave as a single row.
    int rows() const { return ndim() == 2 ? shape_[0] : 1; }
    int cols() const { return shape_.empty() ? 0 : shape_.back(); }

    T* data() { return store_->data(); }
    const T* data() const { return store_->data(); }

    T& at(int r, int c) { return (*store_)[static_cast<size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return (*store_)[static_cast<size_t>(r) * cols() + c]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
        return (*store_)[0];
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.store_ = std::make_shared<std::vector<T>>(*store_);
        return t;
    }

    // Same storage, no tape node. Used when capturing inputs for backward.
    Tensor detached() const {
        Tensor t = *this;
        t.node_ = -1;
        return t;
    }

    bool grad_tracked() const { return node_ >= 0; }
    int node() const { return node_; }
    void set_node(int node) { node_ = node; }

    std::vector<T>& values() { return *store_; }
    const std::vector<T>& values() const { return *store_; }

private:
    static int64_t checked_numel(const std::vector<int>& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
        int64_t n = 1;
        for (int d : shape) {
            if (d < 1) throw ShapeError("tensor dimensions must be >= 1");
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> store_;
    int node_ = -1;
};

template <typename T>
using GradHook = std::function<void(std::vector<T>&)>;

// Reverse-mode tape. Records primitive operations in execution order and
// replays them strictly in reverse. Parameters are named leaves; a parameter
// may carry at most one gradient hook, applied to its gradient before the
// gradient map is returned.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void register_param(const std::string& id, Tensor<T> value) {
        if (param_index_.count(id)) throw UsageError("parameter already registered: " + id);
        param_index_[id] = static_cast<int>(params_.size());
        params_.emplace_back(id, value.detached());
        param_nodes_.push_back(make_leaf(value.numel()));
    }

    bool has_param(const std::string& id) const { return param_index_.count(id) > 0; }

    void register_grad_hook(const std::string& id, GradHook<T> hook) {
        if (!param_index_.count(id)) throw UsageError("unknown parameter: " + id);
        if (hooks_.count(id)) throw UsageError("parameter already has a hook: " + id);
        hooks_[id] = std::move(hook);
    }

    // Tracked handle onto a parameter's storage for the current pass.
    Tensor<T> param(const std::string& id) const {
        auto it = param_index_.find(id);
        if (it == param_index_.end()) throw UsageError("unknown parameter: " + id);
        Tensor<T> t = params_[it->second].second;
        t.set_node(param_nodes_[it->second]);
        return t;
    }

    // Drops all recorded operations and re-creates the parameter leaves in
    // registration order, so node ids are reproducible pass to pass.
    void begin_pass() {
        nodes_.clear();
        grads_.clear();
        for (size_t i = 0; i < params_.size(); ++i) {
            param_nodes_[i] = make_leaf(params_[i].second.numel());
        }
    }

    int record(std::vector<int> parents, int64_t out_numel, BackwardFn fn) {
        nodes_.push_back(Node{std::move(parents), out_numel, std::move(fn)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<T>& grad_buf(int node) {
        if (grads_[node].empty()) grads_[node].assign(nodes_[node].numel, T(0));
        return grads_[node];
    }

    // Gradients of a scalar loss w.r.t. every registered parameter. Hooks run
    // after accumulation, so a zero-mask hook yields exact 0.0 entries.
    std::map<std::string, Tensor<T>> backward(const Tensor<T>& loss) {
        if (!loss.grad_tracked() || loss.node() >= static_cast<int>(nodes_.size())) {
            throw UsageError("loss tensor was not produced through this tape");
        }
        if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
        grads_.assign(nodes_.size(), {});
        grad_buf(loss.node())[0] = T(1);
        for (int id = loss.node(); id >= 0; --id) {
            if (grads_[id].empty() || !nodes_[id].backward) continue;
            nodes_[id].backward(*this, grads_[id]);
        }
        std::map<std::string, Tensor<T>> out;
        for (size_t i = 0; i < params_.size(); ++i) {
            const auto& [id, value] = params_[i];
            std::vector<T> g = grads_[param_nodes_[i]];
            if (g.empty()) g.assign(value.numel(), T(0));
            auto hook = hooks_.find(id);
            if (hook != hooks_.end()) hook->second(g);
            out.emplace(id, Tensor<T>(value.shape(), std::move(g)));
        }
        grads_.clear();
        return out;
    }

    size_t num_ops() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> parents;
        int64_t numel;
        BackwardFn backward;  // empty for leaves
    };

    int make_leaf(int64_t numel) {
        nodes_.push_back(Node{{}, numel, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::unordered_map<std::string, int> param_index_;
    std::unordered_map<std::string, GradHook<T>> hooks_;
    std::vector<int> param_nodes_;
};

template <typename T>
void register_grad_hook(Tape<T>& tape, const std::string& param_id, GradHook<T> hook) {
    tape.register_grad_hook(param_id, std::move(hook));
}

namespace detail {

template <typename T>
bool want_record(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs) {
        if (t->grad_tracked()) return true;
    }
    return false;
}

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void mm(const T* a, const T* b, T* c, int m, int k, int n) {
    std::fill(c, c + static_cast<int64_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* crow = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T aip = arow[p];
            const T* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// c[m x n] = a[m x k] * b[n x k]^T  (both operands traversed row-major).
// The reduction is explicitly reassociable so it vectorizes.
template <typename T>
void mm_bt(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<int64_t>(j) * k;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

// c[m x n] += a[r x m]^T * b[r x n]
template <typename T>
void mm_at_acc(const T* a, const T* b, T* c, int r, int m, int n) {
    for (int p = 0; p < r; ++p) {
        const T* arow = a + static_cast<int64_t>(p) * m;
        const T* brow = b + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T aip = arow[i];
            if (aip == T(0)) continue;
            T* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

template <typename T>
void mm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* crow = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T aip = arow[p];
            const T* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

template <typename T>
void mm_bt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<int64_t>(i) * k;
        T* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<int64_t>(j) * k;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* what) {
    if (t.ndim() != 2) throw ShapeError(std::string(what) + " requires a 2-D tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive suite. Every op computes its forward result and, when a tape is
// supplied and an input is tracked, records a local-gradient rule.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::want_record(tape, {&a, &b})) {
        const int pa = a.node(), pb = b.node();
        out.set_node(tape->record({pa, pb}, n, [pa, pb, n](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) {
                auto& ga = t.grad_buf(pa);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (pb >= 0) {
                auto& gb = t.grad_buf(pb);
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::want_record(tape, {&a, &b})) {
        const int pa = a.node(), pb = b.node();
        Tensor<T> av = a.detached(), bv = b.detached();
        out.set_node(tape->record({pa, pb}, n, [pa, pb, n, av, bv](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) {
                auto& ga = t.grad_buf(pa);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv.data()[i];
            }
            if (pb >= 0) {
                auto& gb = t.grad_buf(pb);
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * av.data()[i];
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> c, Tape<T>* tape = nullptr) {
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        out.set_node(tape->record({pa}, n, [pa, n, c](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
        }));
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions disagree");
    Tensor<T> out({m, n});
    detail::mm(a.data(), b.data(), out.data(), m, k, n);
    if (detail::want_record(tape, {&a, &b})) {
        const int pa = a.node(), pb = b.node();
        Tensor<T> av = a.detached(), bv = b.detached();
        out.set_node(tape->record({pa, pb}, out.numel(),
                                  [pa, pb, av, bv, m, k, n](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) detail::mm_bt_acc(g.data(), bv.data(), t.grad_buf(pa).data(), m, n, k);
            if (pb >= 0) detail::mm_at_acc(av.data(), g.data(), t.grad_buf(pb).data(), m, k, n);
        }));
    }
    return out;
}

// a[m x k] * b[n x k]^T. Weight matrices are stored [out_features x in_features],
// so this is the projection primitive used by the model.
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "matmul_bt");
    detail::require_2d(b, "matmul_bt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw ShapeError("matmul_bt: inner dimensions disagree");
    Tensor<T> out({m, n});
    detail::mm_bt(a.data(), b.data(), out.data(), m, k, n);
    if (detail::want_record(tape, {&a, &b})) {
        const int pa = a.node(), pb = b.node();
        Tensor<T> av = a.detached(), bv = b.detached();
        out.set_node(tape->record({pa, pb}, out.numel(),
                                  [pa, pb, av, bv, m, k, n](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) detail::mm_acc(g.data(), bv.data(), t.grad_buf(pa).data(), m, n, k);
            if (pb >= 0) detail::mm_at_acc(g.data(), av.data(), t.grad_buf(pb).data(), m, n, k);
        }));
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    Tensor<T> out({n, m});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        out.set_node(tape->record({pa}, out.numel(), [pa, m, n](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) ga[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape, Tape<T>* tape = nullptr) {
    Tensor<T> out(shape, std::vector<T>(a.data(), a.data() + a.numel()));
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        const int64_t n = a.numel();
        out.set_node(tape->record({pa}, n, [pa, n](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }));
    }
    return out;
}

// Softmax where row i is taken over columns [0, min(cols, offset + i + 1));
// masked-out columns produce exact zeros. offset = cols gives a plain
// row-wise softmax, offset = cached_len gives causal attention scores.
template <typename T>
Tensor<T> causal_row_softmax(const Tensor<T>& a, int offset, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "causal_row_softmax");
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor<T> out({rows, cols});
    for (int i = 0; i < rows; ++i) {
        const int limit = std::min<int64_t>(cols, static_cast<int64_t>(offset) + i + 1);
        if (limit <= 0) throw ShapeError("causal_row_softmax: row with no visible columns");
        const T* x = a.data() + static_cast<int64_t>(i) * cols;
        T* y = out.data() + static_cast<int64_t>(i) * cols;
        T mx = x[0];
        for (int j = 1; j < limit; ++j) mx = std::max(mx, x[j]);
        T sum = T(0);
        for (int j = 0; j < limit; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < limit; ++j) y[j] /= sum;
        for (int j = limit; j < cols; ++j) y[j] = T(0);
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        Tensor<T> yv = out.detached();
        out.set_node(tape->record({pa}, out.numel(),
                                  [pa, yv, rows, cols, offset](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int i = 0; i < rows; ++i) {
                const int limit = std::min<int64_t>(cols, static_cast<int64_t>(offset) + i + 1);
                const T* y = yv.data() + static_cast<int64_t>(i) * cols;
                const T* gr = g.data() + static_cast<int64_t>(i) * cols;
                T dot = T(0);
                for (int j = 0; j < limit; ++j) dot += gr[j] * y[j];
                T* gx = ga.data() + static_cast<int64_t>(i) * cols;
                for (int j = 0; j < limit; ++j) gx[j] += y[j] * (gr[j] - dot);
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> row_softmax(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "row_softmax");
    return causal_row_softmax(a, a.dim(1), tape);
}

// RMS normalization over the last axis (no learned scale; see mul_rowvec).
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& a, std::type_identity_t<T> eps, Tape<T>* tape = nullptr) {
    const int rows = a.rows(), cols = a.cols();
    Tensor<T> out(a.shape());
    std::vector<T> inv_rms(rows);
    for (int i = 0; i < rows; ++i) {
        const T* x = a.data() + static_cast<int64_t>(i) * cols;
        T ss = T(0);
        for (int j = 0; j < cols; ++j) ss += x[j] * x[j];
        const T r = std::sqrt(ss / static_cast<T>(cols) + eps);
        inv_rms[i] = T(1) / r;
        T* y = out.data() + static_cast<int64_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] = x[j] * inv_rms[i];
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        Tensor<T> av = a.detached();
        out.set_node(tape->record({pa}, out.numel(),
                                  [pa, av, inv_rms, rows, cols](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int i = 0; i < rows; ++i) {
                const T* x = av.data() + static_cast<int64_t>(i) * cols;
                const T* gr = g.data() + static_cast<int64_t>(i) * cols;
                T* gx = ga.data() + static_cast<int64_t>(i) * cols;
                const T ir = inv_rms[i];
                T dot = T(0);
                for (int j = 0; j < cols; ++j) dot += gr[j] * x[j];
                const T coef = dot * ir * ir * ir / static_cast<T>(cols);
                for (int j = 0; j < cols; ++j) gx[j] += gr[j] * ir - x[j] * coef;
            }
        }));
    }
    return out;
}

// Row-wise broadcast multiply: out[i, j] = a[i, j] * v[j].
template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& a, const Tensor<T>& v, Tape<T>* tape = nullptr) {
    if (v.ndim() != 1 || v.dim(0) != a.cols()) throw ShapeError("mul_rowvec: vector length must equal columns");
    const int rows = a.rows(), cols = a.cols();
    Tensor<T> out(a.shape());
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out.data()[static_cast<int64_t>(i) * cols + j] = a.data()[static_cast<int64_t>(i) * cols + j] * v.data()[j];
    }
    if (detail::want_record(tape, {&a, &v})) {
        const int pa = a.node(), pv = v.node();
        Tensor<T> av = a.detached(), vv = v.detached();
        out.set_node(tape->record({pa, pv}, out.numel(),
                                  [pa, pv, av, vv, rows, cols](Tape<T>& t, const std::vector<T>& g) {
            if (pa >= 0) {
                auto& ga = t.grad_buf(pa);
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cols; ++j) ga[static_cast<int64_t>(i) * cols + j] += g[static_cast<int64_t>(i) * cols + j] * vv.data()[j];
                }
            }
            if (pv >= 0) {
                auto& gv = t.grad_buf(pv);
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cols; ++j) gv[j] += g[static_cast<int64_t>(i) * cols + j] * av.data()[static_cast<int64_t>(i) * cols + j];
                }
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    Tensor<T> out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T x = a.data()[i];
        out.data()[i] = x / (T(1) + std::exp(-x));
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        Tensor<T> av = a.detached();
        out.set_node(tape->record({pa}, n, [pa, av, n](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int64_t i = 0; i < n; ++i) {
                const T x = av.data()[i];
                const T s = T(1) / (T(1) + std::exp(-x));
                ga[i] += g[i] * s * (T(1) + x * (T(1) - s));
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids, Tape<T>* tape = nullptr) {
    detail::require_2d(table, "embedding_lookup");
    const int vocab = table.dim(0), width = table.dim(1);
    const int len = static_cast<int>(ids.size());
    if (len == 0) throw ShapeError("embedding_lookup: empty token sequence");
    for (TokenId id : ids) {
        if (id < 0 || id >= vocab) throw UsageError("token id out of range: " + std::to_string(id));
    }
    Tensor<T> out({len, width});
    for (int i = 0; i < len; ++i) {
        std::copy_n(table.data() + static_cast<int64_t>(ids[i]) * width, width,
                    out.data() + static_cast<int64_t>(i) * width);
    }
    if (detail::want_record(tape, {&table})) {
        const int pt = table.node();
        std::vector<TokenId> idv(ids.begin(), ids.end());
        out.set_node(tape->record({pt}, out.numel(),
                                  [pt, idv, width](Tape<T>& t, const std::vector<T>& g) {
            auto& gt = t.grad_buf(pt);
            for (size_t i = 0; i < idv.size(); ++i) {
                T* dst = gt.data() + static_cast<int64_t>(idv[i]) * width;
                const T* src = g.data() + static_cast<int64_t>(i) * width;
                for (int j = 0; j < width; ++j) dst[j] += src[j];
            }
        }));
    }
    return out;
}

// Rotary position encoding. Rows are token positions start_pos, start_pos+1, ...;
// each head's width is rotated in adjacent (even, odd) pairs with angle
// pos / base^(2i/d_head). The Jacobian is the inverse rotation.
template <typename T>
Tensor<T> rope(const Tensor<T>& a, int n_heads, int d_head, std::type_identity_t<T> base, int start_pos,
               Tape<T>* tape = nullptr) {
    detail::require_2d(a, "rope");
    if (a.dim(1) != n_heads * d_head) throw ShapeError("rope: width must be n_heads * d_head");
    if (d_head % 2 != 0) throw ShapeError("rope: d_head must be even");
    const int rows = a.dim(0), cols = a.dim(1);
    std::vector<T> cs(static_cast<size_t>(rows) * d_head / 2), sn(static_cast<size_t>(rows) * d_head / 2);
    for (int i = 0; i < rows; ++i) {
        const double pos = start_pos + i;
        for (int p = 0; p < d_head / 2; ++p) {
            const double theta = pos * std::pow(static_cast<double>(base), -2.0 * p / d_head);
            cs[static_cast<size_t>(i) * (d_head / 2) + p] = static_cast<T>(std::cos(theta));
            sn[static_cast<size_t>(i) * (d_head / 2) + p] = static_cast<T>(std::sin(theta));
        }
    }
    Tensor<T> out({rows, cols});
    for (int i = 0; i < rows; ++i) {
        const T* x = a.data() + static_cast<int64_t>(i) * cols;
        T* y = out.data() + static_cast<int64_t>(i) * cols;
        for (int h = 0; h < n_heads; ++h) {
            for (int p = 0; p < d_head / 2; ++p) {
                const T c = cs[static_cast<size_t>(i) * (d_head / 2) + p];
                const T s = sn[static_cast<size_t>(i) * (d_head / 2) + p];
                const int j = h * d_head + 2 * p;
                y[j] = x[j] * c - x[j + 1] * s;
                y[j + 1] = x[j] * s + x[j + 1] * c;
            }
        }
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        out.set_node(tape->record({pa}, out.numel(),
                                  [pa, cs, sn, rows, cols, n_heads, d_head](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int i = 0; i < rows; ++i) {
                const T* gr = g.data() + static_cast<int64_t>(i) * cols;
                T* gx = ga.data() + static_cast<int64_t>(i) * cols;
                for (int h = 0; h < n_heads; ++h) {
                    for (int p = 0; p < d_head / 2; ++p) {
                        const T c = cs[static_cast<size_t>(i) * (d_head / 2) + p];
                        const T s = sn[static_cast<size_t>(i) * (d_head / 2) + p];
                        const int j = h * d_head + 2 * p;
                        gx[j] += gr[j] * c + gr[j + 1] * s;
                        gx[j + 1] += -gr[j] * s + gr[j + 1] * c;
                    }
                }
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int len, Tape<T>* tape = nullptr) {
    detail::require_2d(a, "slice_cols");
    const int rows = a.dim(0), cols = a.dim(1);
    if (start < 0 || len < 1 || start + len > cols) throw ShapeError("slice_cols: range out of bounds");
    Tensor<T> out({rows, len});
    for (int i = 0; i < rows; ++i) {
        std::copy_n(a.data() + static_cast<int64_t>(i) * cols + start, len,
                    out.data() + static_cast<int64_t>(i) * len);
    }
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        out.set_node(tape->record({pa}, out.numel(),
                                  [pa, rows, cols, start, len](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < len; ++j) ga[static_cast<int64_t>(i) * cols + start + j] += g[static_cast<int64_t>(i) * len + j];
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.dim(1);
    }
    Tensor<T> out({rows, cols});
    int at = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < rows; ++i) {
            std::copy_n(p.data() + static_cast<int64_t>(i) * w, w,
                        out.data() + static_cast<int64_t>(i) * cols + at);
        }
        at += w;
    }
    bool tracked = false;
    if (tape) {
        for (const auto& p : parts) tracked = tracked || p.grad_tracked();
    }
    if (tracked) {
        std::vector<int> pnodes;
        std::vector<int> widths;
        for (const auto& p : parts) {
            pnodes.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        out.set_node(tape->record(pnodes, out.numel(),
                                  [pnodes, widths, rows, cols](Tape<T>& t, const std::vector<T>& g) {
            int at = 0;
            for (size_t k = 0; k < pnodes.size(); ++k) {
                const int w = widths[k];
                if (pnodes[k] >= 0) {
                    auto& gp = t.grad_buf(pnodes[k]);
                    for (int i = 0; i < rows; ++i) {
                        for (int j = 0; j < w; ++j) gp[static_cast<int64_t>(i) * w + j] += g[static_cast<int64_t>(i) * cols + at + j];
                    }
                }
                at += w;
            }
        }));
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    T total = T(0);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) total += a.data()[i];
    Tensor<T> out = Tensor<T>::scalar(total);
    if (detail::want_record(tape, {&a})) {
        const int pa = a.node();
        out.set_node(tape->record({pa}, 1, [pa, n](Tape<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(pa);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
        }));
    }
    return out;
}

// Mean negative log-likelihood over masked rows: for each row i with
// mask[i] != 0, adds -log softmax(logits[i])[labels[i]]; returns the mean.
// The gradient of a masked row is (softmax(row) - onehot(label)) / count.
template <typename T>
Tensor<T> nll_rows(const Tensor<T>& logits, std::span<const TokenId> labels,
                   std::span<const uint8_t> mask, Tape<T>* tape = nullptr) {
    detail::require_2d(logits, "nll_rows");
    const int rows = logits.dim(0), cols = logits.dim(1);
    if (static_cast<int>(labels.size()) != rows || static_cast<int>(mask.size()) != rows) {
        throw ShapeError("nll_rows: labels/mask length must equal logits rows");
    }
    int count = 0;
    for (uint8_t m : mask) count += (m != 0);
    if (count == 0) throw UsageError("nll_rows: empty loss mask");
    double total = 0;
    for (int i = 0; i < rows; ++i) {
        if (!mask[i]) continue;
        if (labels[i] < 0 || labels[i] >= cols) throw UsageError("nll_rows: label out of range");
        const T* x = logits.data() + static_cast<int64_t>(i) * cols;
        T mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double lse = 0;
        for (int j = 0; j < cols; ++j) lse += std::exp(static_cast<double>(x[j] - mx));
        total += std::log(lse) + mx - x[labels[i]];
    }
    const double loss = total / count;
    if (!std::isfinite(loss)) throw NumericError("nll_rows: non-finite loss");
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
    if (detail::want_record(tape, {&logits})) {
        const int pl = logits.node();
        Tensor<T> lv = logits.detached();
        std::vector<TokenId> lab(labels.begin(), labels.end());
        std::vector<uint8_t> mk(mask.begin(), mask.end());
        out.set_node(tape->record({pl}, 1,
                                  [pl, lv, lab, mk, rows, cols, count](Tape<T>& t, const std::vector<T>& g) {
            auto& gl = t.grad_buf(pl);
            const T gs = g[0] / static_cast<T>(count);
            for (int i = 0; i < rows; ++i) {
                if (!mk[i]) continue;
                const T* x = lv.data() + static_cast<int64_t>(i) * cols;
                T mx = x[0];
                for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
                T sum = T(0);
                for (int j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
                T* gr = gl.data() + static_cast<int64_t>(i) * cols;
                for (int j = 0; j < cols; ++j) {
                    T p = std::exp(x[j] - mx) / sum;
                    gr[j] += gs * (p - (j == lab[i] ? T(1) : T(0)));
                }
            }
        }));
    }
    return out;
}

using Tensor32 = Tensor<float>;
using Tape32 = Tape<float>;

}  // namespace draftlab
