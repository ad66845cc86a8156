#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "hipa/tensor.hpp"

namespace hipa {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const Index ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const Index eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeMismatch("cannot broadcast " + to_string(a) + " with " + to_string(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

/// Strides of `src` expressed in the index space of `out`, zero on broadcast axes.
inline Shape broadcast_strides(const Shape& src, const Shape& out) {
    const Shape st = row_major_strides(src);
    Shape res(out.size(), 0);
    const std::size_t lead = out.size() - src.size();
    for (std::size_t i = 0; i < src.size(); ++i) res[lead + i] = src[i] == 1 ? 0 : st[i];
    return res;
}

/// Calls f(out_offset, a_offset, b_offset) for every element of `out`.
template <class F>
void broadcast_loop(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const std::size_t r = out.size();
    const Index inner = out[r - 1];
    const Index sa_in = sa[r - 1];
    const Index sb_in = sb[r - 1];
    const Index outer = numel_of(out) / inner;
    std::vector<Index> idx(r, 0);
    Index io = 0, ia = 0, ib = 0;
    for (Index o = 0; o < outer; ++o) {
        for (Index k = 0; k < inner; ++k) f(io + k, ia + k * sa_in, ib + k * sb_in);
        io += inner;
        for (std::ptrdiff_t d = static_cast<std::ptrdiff_t>(r) - 2; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <class T, class Fwd, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA dfa, DB dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const Shape sa = broadcast_strides(a.shape(), out_shape);
    const Shape sb = broadcast_strides(b.shape(), out_shape);
    Tensor<T> out(out_shape);
    {
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        T* po = out.data().data();
        broadcast_loop(out_shape, sa, sb, [&](Index io, Index ia, Index ib) { po[io] = fwd(pa[ia], pb[ib]); });
    }
    if (should_record<T>({&a, &b})) {
        attach(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), out_shape, sa, sb, dfa, dfb] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            const T* pa = ai->data.data();
            const T* pb = bi->data.data();
            if (ai->requires_grad) {
                T* ga = ai->ensure_grad().data();
                broadcast_loop(out_shape, sa, sb,
                               [&](Index io, Index ia, Index ib) { ga[ia] += g[io] * dfa(pa[ia], pb[ib]); });
            }
            if (bi->requires_grad) {
                T* gb = bi->ensure_grad().data();
                broadcast_loop(out_shape, sa, sb,
                               [&](Index io, Index ia, Index ib) { gb[ib] += g[io] * dfb(pa[ia], pb[ib]); });
            }
        });
    }
    return out;
}

/// Elementwise map with derivative df(x, y) expressed through input and output.
template <class T, class Fwd, class Df>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Df df) {
    Tensor<T> out(x.shape());
    {
        const T* px = x.data().data();
        T* po = out.data().data();
        const Index n = x.numel();
        for (Index i = 0; i < n; ++i) po[i] = fwd(px[i]);
    }
    if (should_record<T>({&x})) {
        attach(out, [xi = x.impl(), oi = out.impl(), df] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            const T* px = xi->data.data();
            const T* py = oi->data.data();
            T* gx = xi->ensure_grad().data();
            const std::size_t n = xi->data.size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(px[i], py[i]);
        });
    }
    return out;
}

} // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& x, T s) {
    return scale(x, s);
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

/// Exact GELU: x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

/// |x| with subgradient 0 at 0.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::should_record<T>({&x})) {
        detail::attach(out, [xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty()) return;
            const T g = oi->grad[0];
            for (T& v : xi->ensure_grad()) v += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean absolute error between equally shaped tensors.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeMismatch("l1_loss: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    return mean(abs(sub(pred, target)));
}

/// Numerically stable softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis = -1) {
    const auto r = static_cast<std::ptrdiff_t>(x.ndim());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeMismatch("softmax: axis out of range");
    const Shape& s = x.shape();
    Index outer = 1, inner = 1;
    for (std::ptrdiff_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::ptrdiff_t i = axis + 1; i < r; ++i) inner *= s[i];
    const Index len = s[axis];

    Tensor<T> out(s);
    const T* px = x.data().data();
    T* py = out.data().data();
    for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
            const Index base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (Index k = 0; k < len; ++k) mx = std::max(mx, px[base + k * inner]);
            T z = T(0);
            for (Index k = 0; k < len; ++k) {
                const T e = std::exp(px[base + k * inner] - mx);
                py[base + k * inner] = e;
                z += e;
            }
            for (Index k = 0; k < len; ++k) py[base + k * inner] /= z;
        }
    }
    if (detail::should_record<T>({&x})) {
        detail::attach(out, [xi = x.impl(), oi = out.impl(), outer, inner, len] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            const T* y = oi->data.data();
            T* gx = xi->ensure_grad().data();
            for (Index o = 0; o < outer; ++o) {
                for (Index in = 0; in < inner; ++in) {
                    const Index base = o * len * inner + in;
                    T dot = T(0);
                    for (Index k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
                    for (Index k = 0; k < len; ++k) {
                        const Index i = base + k * inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

/// Normalizes over the last axis, then applies gamma * xhat + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const Index d = x.dim(-1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw ShapeMismatch("layer_norm: affine parameters must have shape (" + std::to_string(d) + ")");
    const Index rows = x.numel() / d;
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    const T* px = x.data().data();
    const T* pg = gamma.data().data();
    const T* pb = beta.data().data();
    T* py = out.data().data();
    for (Index r = 0; r < rows; ++r) {
        const T* row = px + r * d;
        T mu = T(0);
        for (Index k = 0; k < d; ++k) mu += row[k];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (Index k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (Index k = 0; k < d; ++k) {
            const T h = (row[k] - mu) * rs;
            (*xhat)[r * d + k] = h;
            py[r * d + k] = h * pg[k] + pb[k];
        }
    }
    if (detail::should_record<T>({&x, &gamma, &beta})) {
        detail::attach(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat, rstd, rows,
                             d] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            const T* pg = gi->data.data();
            if (gi->requires_grad) {
                T* gg = gi->ensure_grad().data();
                for (Index r = 0; r < rows; ++r)
                    for (Index k = 0; k < d; ++k) gg[k] += g[r * d + k] * (*xhat)[r * d + k];
            }
            if (bi->requires_grad) {
                T* gb = bi->ensure_grad().data();
                for (Index r = 0; r < rows; ++r)
                    for (Index k = 0; k < d; ++k) gb[k] += g[r * d + k];
            }
            if (xi->requires_grad) {
                T* gx = xi->ensure_grad().data();
                for (Index r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (Index k = 0; k < d; ++k) {
                        const T dh = g[r * d + k] * pg[k];
                        m1 += dh;
                        m2 += dh * (*xhat)[r * d + k];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (Index k = 0; k < d; ++k) {
                        const T dh = g[r * d + k] * pg[k];
                        gx[r * d + k] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + k] * m2);
                    }
                }
            }
        });
    }
    return out;
}

/// Spatial mean per (n, c) of an NCHW tensor; result is (n, c, 1, 1).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4) throw ShapeMismatch("global_avg_pool expects NCHW, got " + to_string(x.shape()));
    const Index nc = x.dim(0) * x.dim(1);
    const Index hw = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{x.dim(0), x.dim(1), 1, 1});
    const T* px = x.data().data();
    for (Index i = 0; i < nc; ++i) {
        T acc = T(0);
        for (Index k = 0; k < hw; ++k) acc += px[i * hw + k];
        out[i] = acc / static_cast<T>(hw);
    }
    if (detail::should_record<T>({&x})) {
        detail::attach(out, [xi = x.impl(), oi = out.impl(), nc, hw] {
            if (oi->grad.empty()) return;
            T* gx = xi->ensure_grad().data();
            for (Index i = 0; i < nc; ++i) {
                const T g = oi->grad[static_cast<std::size_t>(i)] / static_cast<T>(hw);
                for (Index k = 0; k < hw; ++k) gx[i * hw + k] += g;
            }
        });
    }
    return out;
}

/// Values clamped to [lo, hi]; not differentiable (inference only).
template <class T>
Tensor<T> clamp_values(const Tensor<T>& x, T lo, T hi) {
    Tensor<T> out = x.clone();
    for (T& v : out.data()) v = std::min(hi, std::max(lo, v));
    return out;
}

template <class T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace hipa
