#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "scope/common.hpp"

namespace scope::nn {

// Dense row-major tensor with an optional reverse-mode tape. Value semantics:
// copies share the underlying data buffer. Instantiated with float for
// training and double for gradient-check test mode.

template <class T>
struct Tensor;

template <class T>
struct Node {
    std::vector<Tensor<T>> parents;
    std::function<void(Tensor<T>&)> backward;
};

// Thread-local switch so inference paths skip graph construction.
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
    ~NoGradGuard() { grad_enabled_flag() = prev_; }
    bool prev_;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class T>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    Tensor() = default;

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_str(shape));
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        size_t n = count(shape);
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(n, T(0));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data->begin(), t.data->end(), value);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        if (count(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : *t.data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(std::vector<int> shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : *t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    void set_requires_grad(bool rg) {
        requires_grad = rg;
        if (rg && !grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
        if (!rg) grad.reset();
    }

    size_t numel() const { return data ? data->size() : 0; }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool defined() const { return static_cast<bool>(data); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T* grad_ptr() { return grad ? grad->data() : nullptr; }
    const T* grad_ptr() const { return grad ? grad->data() : nullptr; }

    T& operator[](size_t i) { return (*data)[i]; }
    const T& operator[](size_t i) const { return (*data)[i]; }

    T& at(int i, int j) { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }
    const T& at(int i, int j) const { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), T(0));
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
        else if (grad->size() != data->size()) grad->assign(data->size(), T(0));
    }

    Tensor detach() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    // Reverse-mode sweep from a scalar root. Seeds the root gradient with 1,
    // then runs every recorded backward in reverse topological order. After
    // the sweep every requires_grad tensor on the traversed graph holds a
    // populated gradient buffer.
    void backward() {
        if (numel() != 1) throw ShapeError("backward() requires a scalar root, got shape " + shape_str(shape));
        ensure_grad();
        (*grad)[0] = T(1);

        std::vector<Tensor<T>> order;
        std::unordered_set<Node<T>*> seen;
        std::function<void(const Tensor<T>&)> visit = [&](const Tensor<T>& t) {
            if (!t.node || seen.count(t.node.get())) return;
            seen.insert(t.node.get());
            for (const auto& p : t.node->parents) visit(p);
            order.push_back(t);
        };
        visit(*this);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if (it->node && it->node->backward) it->node->backward(*it);
        }
    }
};

namespace detail {

template <class T>
bool trace(const Tensor<T>& a) {
    return grad_enabled_flag() && a.requires_grad;
}

template <class T, class F>
void attach(Tensor<T>& out, std::vector<Tensor<T>> parents, F fn) {
    out.requires_grad = true;
    // the shared vector starts empty and is sized in place on first use, so
    // every copy of this tensor sees the same buffer without paying for
    // intermediate gradients that a backward pass never touches
    out.grad = std::make_shared<std::vector<T>>();
    out.node = std::make_shared<Node<T>>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(fn);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// --------------------------------------------------------------------------
// Row-major GEMM kernels. Loop orders chosen so the innermost loop streams
// contiguous rows and auto-vectorizes. accumulate=false clears C first.
// --------------------------------------------------------------------------

template <class T>
void gemm_nn(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<size_t>(m) * n, T(0));
    parallel_for(m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const T* a = A + i * k;
            T* c = C + i * n;
            for (int p = 0; p < k; ++p) {
                const T av = a[p];
                const T* b = B + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    });
}

// C[m,n] (+)= A[m,k] * B[n,k]^T. Materializes B^T (tiled for cache) so the
// inner product streams contiguously; dot-product reductions do not
// auto-vectorize under strict FP.
template <class T>
void gemm_nt(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate) {
    std::vector<T> bt(static_cast<size_t>(k) * n);
    constexpr int kTile = 32;
    for (int j0 = 0; j0 < n; j0 += kTile) {
        const int j1 = std::min(n, j0 + kTile);
        for (int p0 = 0; p0 < k; p0 += kTile) {
            const int p1 = std::min(k, p0 + kTile);
            for (int j = j0; j < j1; ++j)
                for (int p = p0; p < p1; ++p)
                    bt[static_cast<size_t>(p) * n + j] = B[static_cast<size_t>(j) * k + p];
        }
    }
    gemm_nn(m, n, k, A, bt.data(), C, accumulate);
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<size_t>(m) * n, T(0));
    for (int p = 0; p < k; ++p) {
        const T* a = A + static_cast<size_t>(p) * m;
        const T* b = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = a[i];
            T* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace detail

// ============================================================================
// Elementwise ops
// ============================================================================

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const size_t n = out.numel();
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::trace(a) || detail::trace(b)) {
        detail::attach(out, {a, b}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            if (pa2.requires_grad) {
                pa2.ensure_grad();
                T* ga = pa2.grad_ptr();
                for (size_t i = 0; i < n2; ++i) ga[i] += g[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                for (size_t i = 0; i < n2; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const size_t n = out.numel();
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::trace(a) || detail::trace(b)) {
        detail::attach(out, {a, b}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            if (pa2.requires_grad) {
                pa2.ensure_grad();
                T* ga = pa2.grad_ptr();
                for (size_t i = 0; i < n2; ++i) ga[i] += g[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                for (size_t i = 0; i < n2; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const size_t n = out.numel();
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::trace(a) || detail::trace(b)) {
        detail::attach(out, {a, b}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            if (pa2.requires_grad) {
                pa2.ensure_grad();
                T* ga = pa2.grad_ptr();
                const T* db = pb2.ptr();
                for (size_t i = 0; i < n2; ++i) ga[i] += g[i] * db[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                const T* da = pa2.ptr();
                for (size_t i = 0; i < n2; ++i) gb[i] += g[i] * da[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const size_t n = out.numel();
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (detail::trace(a)) {
        detail::attach(out, {a}, [s](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            T* ga = pa2.grad_ptr();
            for (size_t i = 0; i < n2; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const size_t n = out.numel();
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-pa[i]));
        po[i] = pa[i] * s;
    }
    if (detail::trace(a)) {
        detail::attach(out, {a}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            const T* x = pa2.ptr();
            T* ga = pa2.grad_ptr();
            for (size_t i = 0; i < n2; ++i) {
                const T s = T(1) / (T(1) + std::exp(-x[i]));
                ga[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
            }
        });
    }
    return out;
}

// Mean over all elements -> scalar tensor of shape [1].
template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros({1});
    const size_t n = a.numel();
    const T* pa = a.ptr();
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    (*out.data)[0] = acc / static_cast<T>(n);
    if (detail::trace(a)) {
        detail::attach(out, {a}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const size_t n2 = pa2.numel();
            const T g = o.grad_ptr()[0] / static_cast<T>(n2);
            T* ga = pa2.grad_ptr();
            for (size_t i = 0; i < n2; ++i) ga[i] += g;
        });
    }
    return out;
}

// Mean squared error between same-shape tensors -> scalar.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mse");
    Tensor<T> d = sub(a, b);
    return mean_all(mul(d, d));
}

// ============================================================================
// Shape ops
// ============================================================================

// Reshape sharing storage; gradient flows through unchanged.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
    if (Tensor<T>::count(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(shape));
    Tensor<T> out;
    out.shape = std::move(shape);
    out.data = a.data;
    if (detail::trace(a)) {
        detail::attach(out, {a}, [](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const size_t n2 = o.numel();
            const T* g = o.grad_ptr();
            T* ga = pa2.grad_ptr();
            for (size_t i = 0; i < n2; ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expected 2-d tensor, got " + shape_str(a.shape));
    const int m = a.shape[0], n = a.shape[1];
    Tensor<T> out = Tensor<T>::zeros({n, m});
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[static_cast<size_t>(j) * m + i] = pa[static_cast<size_t>(i) * n + j];
    if (detail::trace(a)) {
        detail::attach(out, {a}, [m, n](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const T* g = o.grad_ptr();
            T* ga = pa2.grad_ptr();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

// Concatenate along axis 0 of CHW tensors (channel concat).
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int ca = a.shape[0], cb = b.shape[0], h = a.shape[1], w = a.shape[2];
    Tensor<T> out = Tensor<T>::zeros({ca + cb, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    std::copy(a.ptr(), a.ptr() + ca * plane, out.ptr());
    std::copy(b.ptr(), b.ptr() + cb * plane, out.ptr() + ca * plane);
    if (detail::trace(a) || detail::trace(b)) {
        detail::attach(out, {a, b}, [ca, cb, plane](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const T* g = o.grad_ptr();
            if (pa2.requires_grad) {
                pa2.ensure_grad();
                T* ga = pa2.grad_ptr();
                for (size_t i = 0; i < ca * plane; ++i) ga[i] += g[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                const T* gsrc = g + ca * plane;
                for (size_t i = 0; i < cb * plane; ++i) gb[i] += gsrc[i];
            }
        });
    }
    return out;
}

// ============================================================================
// matmul / softmax / attention
// ============================================================================

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm_nn(m, n, k, a.ptr(), b.ptr(), out.ptr(), false);
    if (detail::trace(a) || detail::trace(b)) {
        detail::attach(out, {a, b}, [m, k, n](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const T* g = o.grad_ptr();
            if (pa2.requires_grad) {
                pa2.ensure_grad();
                detail::gemm_nt(m, k, n, g, pb2.ptr(), pa2.grad_ptr(), true);
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                detail::gemm_tn(k, n, m, pa2.ptr(), g, pb2.grad_ptr(), true);
            }
        });
    }
    return out;
}

// Numerically stabilized softmax along the given axis. Slices along the axis
// sum to one.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    if (axis < 0) axis += a.ndim();
    if (axis < 0 || axis >= a.ndim())
        throw ShapeError("softmax: axis out of range for shape " + shape_str(a.shape));
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int ax_dim = a.shape[static_cast<size_t>(axis)];
    size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= static_cast<size_t>(a.shape[static_cast<size_t>(i)]);
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(a.shape[static_cast<size_t>(i)]);
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * ax_dim * inner + in;
            T mx = pa[base];
            for (int i = 1; i < ax_dim; ++i) mx = std::max(mx, pa[base + i * inner]);
            T sum = T(0);
            for (int i = 0; i < ax_dim; ++i) {
                const T e = std::exp(pa[base + i * inner] - mx);
                po[base + i * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (int i = 0; i < ax_dim; ++i) po[base + i * inner] *= inv;
        }
    }
    if (detail::trace(a)) {
        detail::attach(out, {a}, [ax_dim, inner, outer](Tensor<T>& o) {
            auto& pa2 = o.node->parents[0];
            pa2.ensure_grad();
            const T* y = o.ptr();
            const T* g = o.grad_ptr();
            T* ga = pa2.grad_ptr();
            for (size_t ou = 0; ou < outer; ++ou) {
                for (size_t in = 0; in < inner; ++in) {
                    const size_t base = ou * ax_dim * inner + in;
                    T dot = T(0);
                    for (int i = 0; i < ax_dim; ++i) dot += y[base + i * inner] * g[base + i * inner];
                    for (int i = 0; i < ax_dim; ++i) {
                        const size_t idx = base + i * inner;
                        ga[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// softmax(Q K^T / sqrt(d_k)) V. Each output row is a convex combination of
// the rows of V.
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw ShapeError("attention: expected 2-d q/k/v");
    if (q.shape[1] != k.shape[1])
        throw ShapeError("attention: d_k mismatch " + shape_str(q.shape) + " vs " + shape_str(k.shape));
    if (k.shape[0] != v.shape[0])
        throw ShapeError("attention: key/value row count mismatch " + shape_str(k.shape) + " vs " + shape_str(v.shape));
    const T scale = T(1) / std::sqrt(static_cast<T>(q.shape[1]));
    Tensor<T> logits = mul_scalar(matmul(q, transpose(k)), scale);
    Tensor<T> weights = softmax(logits, 1);
    return matmul(weights, v);
}

// ============================================================================
// Convolution (direct, via im2col) and friends
// ============================================================================

namespace detail {

template <class T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* col) {
    // col layout: [c*kh*kw, oh*ow]
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + ((static_cast<size_t>(ci) * kh + ki) * kw + kj) * (static_cast<size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    T* row = dst + static_cast<size_t>(oi) * ow;
                    if (ii < 0 || ii >= h) {
                        std::fill(row, row + ow, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<size_t>(ci) * h + ii) * w;
                    if (stride == 1) {
                        // contiguous source segment [kj-pad, kj-pad+ow) clipped to [0, w)
                        const int j0 = kj - pad;
                        const int lead = std::max(0, -j0);
                        const int tail = std::max(0, j0 + ow - w);
                        const int body = ow - lead - tail;
                        std::fill(row, row + lead, T(0));
                        if (body > 0) std::copy(src + j0 + lead, src + j0 + lead + body, row + lead);
                        std::fill(row + ow - tail, row + ow, T(0));
                    } else {
                        for (int oj = 0; oj < ow; ++oj) {
                            const int jj = oj * stride + kj - pad;
                            row[oj] = (jj >= 0 && jj < w) ? src[jj] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* x_accum) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + ((static_cast<size_t>(ci) * kh + ki) * kw + kj) * (static_cast<size_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    T* dst = x_accum + (static_cast<size_t>(ci) * h + ii) * w;
                    const T* row = src + static_cast<size_t>(oi) * ow;
                    if (stride == 1) {
                        const int j0 = kj - pad;
                        const int lead = std::max(0, -j0);
                        const int body = ow - lead - std::max(0, j0 + ow - w);
                        T* d = dst + j0 + lead;
                        const T* s = row + lead;
                        for (int j = 0; j < body; ++j) d[j] += s[j];
                    } else {
                        for (int oj = 0; oj < ow; ++oj) {
                            const int jj = oj * stride + kj - pad;
                            if (jj >= 0 && jj < w) dst[jj] += row[oj];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x: [Cin,H,W], weight: [Cout,Cin,kh,kw], bias: [Cout]
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int pad = 1) {
    if (x.ndim() != 3 || weight.ndim() != 4)
        throw ShapeError("conv2d: expected CHW input and OIHW weight");
    const int cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int cout = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3];
    if (weight.shape[1] != cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.shape[1]) +
                         " input channels, tensor has " + std::to_string(cin));
    if (bias.numel() != static_cast<size_t>(cout)) throw ShapeError("conv2d: bias/out-channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");

    const int ck = cin * kh * kw;
    std::vector<T> col(static_cast<size_t>(ck) * oh * ow);
    detail::im2col(x.ptr(), cin, h, w, kh, kw, stride, pad, oh, ow, col.data());

    Tensor<T> out = Tensor<T>::zeros({cout, oh, ow});
    detail::gemm_nn(cout, oh * ow, ck, weight.ptr(), col.data(), out.ptr(), false);
    T* po = out.ptr();
    const T* pb = bias.ptr();
    for (int co = 0; co < cout; ++co) {
        T* plane = po + static_cast<size_t>(co) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) plane[i] += pb[co];
    }

    if (detail::trace(x) || detail::trace(weight) || detail::trace(bias)) {
        detail::attach(out, {x, weight, bias},
                       [cin, h, w, cout, kh, kw, stride, pad, oh, ow, ck](Tensor<T>& o) {
            auto& px = o.node->parents[0];
            auto& pw = o.node->parents[1];
            auto& pb2 = o.node->parents[2];
            const T* g = o.grad_ptr();
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                for (int co = 0; co < cout; ++co) {
                    const T* plane = g + static_cast<size_t>(co) * oh * ow;
                    T acc = T(0);
                    for (int i = 0; i < oh * ow; ++i) acc += plane[i];
                    gb[co] += acc;
                }
            }
            const bool need_x = px.requires_grad;
            const bool need_w = pw.requires_grad;
            if (!need_x && !need_w) return;
            std::vector<T> col(static_cast<size_t>(ck) * oh * ow);
            if (need_w) {
                detail::im2col(px.ptr(), cin, h, w, kh, kw, stride, pad, oh, ow, col.data());
                pw.ensure_grad();
                // dW[cout, ck] += g[cout, ohw] * col[ck, ohw]^T
                detail::gemm_nt(cout, ck, oh * ow, g, col.data(), pw.grad_ptr(), true);
            }
            if (need_x) {
                px.ensure_grad();
                // dcol[ck, ohw] = W[cout, ck]^T * g[cout, ohw]
                std::vector<T> dcol(static_cast<size_t>(ck) * oh * ow);
                detail::gemm_tn(ck, oh * ow, cout, pw.ptr(), g, dcol.data(), false);
                detail::col2im(dcol.data(), cin, h, w, kh, kw, stride, pad, oh, ow, px.grad_ptr());
            }
        });
    }
    return out;
}

// Nearest-neighbor 2x upsample of a CHW tensor.
template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    if (x.ndim() != 3) throw ShapeError("upsample_nearest2: expected CHW");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor<T> out = Tensor<T>::zeros({c, 2 * h, 2 * w});
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                po[(static_cast<size_t>(ci) * 2 * h + i) * 2 * w + j] =
                    px[(static_cast<size_t>(ci) * h + i / 2) * w + j / 2];
    if (detail::trace(x)) {
        detail::attach(out, {x}, [c, h, w](Tensor<T>& o) {
            auto& px2 = o.node->parents[0];
            px2.ensure_grad();
            const T* g = o.grad_ptr();
            T* gx = px2.grad_ptr();
            for (int ci = 0; ci < c; ++ci)
                for (int i = 0; i < 2 * h; ++i)
                    for (int j = 0; j < 2 * w; ++j)
                        gx[(static_cast<size_t>(ci) * h + i / 2) * w + j / 2] +=
                            g[(static_cast<size_t>(ci) * 2 * h + i) * 2 * w + j];
        });
    }
    return out;
}

// Adds a per-channel bias to a CHW tensor (timestep conditioning path).
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.ndim() != 3 || b.numel() != static_cast<size_t>(x.shape[0]))
        throw ShapeError("add_channel_bias: bias size must equal channel count");
    const int c = x.shape[0];
    const size_t plane = static_cast<size_t>(x.shape[1]) * x.shape[2];
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < plane; ++i) po[ci * plane + i] = px[ci * plane + i] + pb[ci];
    if (detail::trace(x) || detail::trace(b)) {
        detail::attach(out, {x, b}, [c, plane](Tensor<T>& o) {
            auto& px2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const T* g = o.grad_ptr();
            if (px2.requires_grad) {
                px2.ensure_grad();
                T* gx = px2.grad_ptr();
                for (size_t i = 0; i < c * plane; ++i) gx[i] += g[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                for (int ci = 0; ci < c; ++ci) {
                    T acc = T(0);
                    for (size_t i = 0; i < plane; ++i) acc += g[ci * plane + i];
                    gb[ci] += acc;
                }
            }
        });
    }
    return out;
}

// Adds a row-broadcast bias to a 2-d tensor: out[i,j] = x[i,j] + b[j].
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.ndim() != 2 || b.numel() != static_cast<size_t>(x.shape[1]))
        throw ShapeError("add_row_bias: bias size must equal column count");
    const int m = x.shape[0], n = x.shape[1];
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[static_cast<size_t>(i) * n + j] = px[static_cast<size_t>(i) * n + j] + pb[j];
    if (detail::trace(x) || detail::trace(b)) {
        detail::attach(out, {x, b}, [m, n](Tensor<T>& o) {
            auto& px2 = o.node->parents[0];
            auto& pb2 = o.node->parents[1];
            const T* g = o.grad_ptr();
            if (px2.requires_grad) {
                px2.ensure_grad();
                T* gx = px2.grad_ptr();
                for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) gx[i] += g[i];
            }
            if (pb2.requires_grad) {
                pb2.ensure_grad();
                T* gb = pb2.grad_ptr();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    return add_row_bias(matmul(x, weight), bias);
}

// Group normalization over a CHW tensor with per-channel affine parameters.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int groups, T eps = T(1e-5)) {
    if (x.ndim() != 3) throw ShapeError("group_norm: expected CHW");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    if (groups < 1 || c % groups != 0)
        throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) + " channels");
    if (gamma.numel() != static_cast<size_t>(c) || beta.numel() != static_cast<size_t>(c))
        throw ShapeError("group_norm: affine parameter size must equal channel count");
    const size_t plane = static_cast<size_t>(h) * w;
    const int cpg = c / groups;
    const size_t gsize = cpg * plane;

    Tensor<T> out = Tensor<T>::zeros(x.shape);
    std::vector<T> mean(groups), inv_std(groups);
    const T* px = x.ptr();
    const T* pg = gamma.ptr();
    const T* pbeta = beta.ptr();
    T* po = out.ptr();
    for (int g = 0; g < groups; ++g) {
        const T* base = px + static_cast<size_t>(g) * gsize;
        T mu = T(0);
        for (size_t i = 0; i < gsize; ++i) mu += base[i];
        mu /= static_cast<T>(gsize);
        T var = T(0);
        for (size_t i = 0; i < gsize; ++i) {
            const T d = base[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(gsize);
        mean[g] = mu;
        inv_std[g] = T(1) / std::sqrt(var + eps);
    }
    for (int ci = 0; ci < c; ++ci) {
        const int g = ci / cpg;
        const T mu = mean[g], is = inv_std[g], ga = pg[ci], be = pbeta[ci];
        const T* src = px + ci * plane;
        T* dst = po + ci * plane;
        for (size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is * ga + be;
    }

    if (detail::trace(x) || detail::trace(gamma) || detail::trace(beta)) {
        detail::attach(out, {x, gamma, beta},
                       [c, groups, cpg, plane, gsize, mean, inv_std](Tensor<T>& o) {
            auto& px2 = o.node->parents[0];
            auto& pg2 = o.node->parents[1];
            auto& pb2 = o.node->parents[2];
            const T* g = o.grad_ptr();
            const T* x2 = px2.ptr();
            const T* gamma2 = pg2.ptr();
            if (pg2.requires_grad || pb2.requires_grad) {
                if (pg2.requires_grad) pg2.ensure_grad();
                if (pb2.requires_grad) pb2.ensure_grad();
                for (int ci = 0; ci < c; ++ci) {
                    const int gr = ci / cpg;
                    T dg = T(0), db = T(0);
                    const T* gp = g + ci * plane;
                    const T* xp = x2 + ci * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        db += gp[i];
                        dg += gp[i] * (xp[i] - mean[gr]) * inv_std[gr];
                    }
                    if (pg2.requires_grad) pg2.grad_ptr()[ci] += dg;
                    if (pb2.requires_grad) pb2.grad_ptr()[ci] += db;
                }
            }
            if (px2.requires_grad) {
                px2.ensure_grad();
                T* gx = px2.grad_ptr();
                for (int gr = 0; gr < groups; ++gr) {
                    const size_t goff = static_cast<size_t>(gr) * gsize;
                    const T mu = mean[gr], is = inv_std[gr];
                    // dxhat = dy * gamma (per channel); then the standard
                    // normalization backward within the group.
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int ci = gr * cpg + cc;
                        const T ga = gamma2[ci];
                        const T* gp = g + ci * plane;
                        const T* xp = x2 + ci * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            const T dxhat = gp[i] * ga;
                            const T xhat = (xp[i] - mu) * is;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    const T inv_n = T(1) / static_cast<T>(gsize);
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int ci = gr * cpg + cc;
                        const T ga = gamma2[ci];
                        const T* gp = g + ci * plane;
                        const T* xp = x2 + ci * plane;
                        T* gxp = gx + goff + static_cast<size_t>(cc) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            const T dxhat = gp[i] * ga;
                            const T xhat = (xp[i] - mu) * is;
                            gxp[i] += is * (dxhat - inv_n * (sum_dxhat + xhat * sum_dxhat_xhat));
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace scope::nn
