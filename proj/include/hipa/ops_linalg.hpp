#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "hipa/ops_elementwise.hpp"
#include "hipa/tensor.hpp"

namespace hipa {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Per-batch matrix offsets of a and b for a broadcast batch shape.
inline void batch_offsets(const Shape& ba, const Shape& bb, Shape& batch, std::vector<Index>& oa,
                          std::vector<Index>& ob) {
    batch = broadcast_shape(ba, bb);
    const Shape loop = batch.empty() ? Shape{1} : batch;
    const Shape sa = broadcast_strides(ba.empty() ? Shape{1} : ba, loop);
    const Shape sb = broadcast_strides(bb.empty() ? Shape{1} : bb, loop);
    const std::size_t n = static_cast<std::size_t>(numel_of(loop));
    oa.assign(n, 0);
    ob.assign(n, 0);
    broadcast_loop(loop, sa, sb, [&](Index io, Index ia, Index ib) {
        oa[static_cast<std::size_t>(io)] = ia;
        ob[static_cast<std::size_t>(io)] = ib;
    });
}

} // namespace detail

/// Batched matrix product over the last two axes; leading axes broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    using detail::CMapMat;
    using detail::MapMat;
    if (a.ndim() < 2 || b.ndim() < 2) throw ShapeMismatch("matmul needs rank >= 2 operands");
    const Index m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2) throw ShapeMismatch("matmul inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));

    // Unbatched right operand: fold all of a's leading axes into rows.
    if (b.ndim() == 2) {
        const Index rows = a.numel() / k;
        Shape out_shape = a.shape();
        out_shape.back() = n;
        Tensor<T> out(out_shape);
        MapMat<T>(out.data().data(), rows, n).noalias() =
            CMapMat<T>(a.data().data(), rows, k) * CMapMat<T>(b.data().data(), k, n);
        if (detail::should_record<T>({&a, &b})) {
            detail::attach(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), rows, k, n] {
                if (oi->grad.empty()) return;
                CMapMat<T> g(oi->grad.data(), rows, n);
                if (ai->requires_grad)
                    MapMat<T>(ai->ensure_grad().data(), rows, k).noalias() += g * CMapMat<T>(bi->data.data(), k, n).transpose();
                if (bi->requires_grad)
                    MapMat<T>(bi->ensure_grad().data(), k, n).noalias() += CMapMat<T>(ai->data.data(), rows, k).transpose() * g;
            });
        }
        return out;
    }

    const Shape ba(a.shape().begin(), a.shape().end() - 2);
    const Shape bb(b.shape().begin(), b.shape().end() - 2);
    Shape batch;
    std::vector<Index> oa, ob;
    detail::batch_offsets(ba, bb, batch, oa, ob);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    for (std::size_t i = 0; i < oa.size(); ++i)
        MapMat<T>(po + static_cast<Index>(i) * m * n, m, n).noalias() =
            CMapMat<T>(pa + oa[i] * m * k, m, k) * CMapMat<T>(pb + ob[i] * k * n, k, n);
    if (detail::should_record<T>({&a, &b})) {
        detail::attach(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), oa, ob, m, k, n] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            for (std::size_t i = 0; i < oa.size(); ++i) {
                CMapMat<T> gi(g + static_cast<Index>(i) * m * n, m, n);
                if (ai->requires_grad)
                    MapMat<T>(ai->ensure_grad().data() + oa[i] * m * k, m, k).noalias() +=
                        gi * CMapMat<T>(bi->data.data() + ob[i] * k * n, k, n).transpose();
                if (bi->requires_grad)
                    MapMat<T>(bi->ensure_grad().data() + ob[i] * k * n, k, n).noalias() +=
                        CMapMat<T>(ai->data.data() + oa[i] * m * k, m, k).transpose() * gi;
            }
        });
    }
    return out;
}

struct ConvParams {
    Index stride = 1;
    Index padding = 0;
    Index dilation = 1;
    Index groups = 1;
};

namespace detail {

struct ConvGeometry {
    Index n, cin, h, w, cout, kh, kw, ho, wo, groups, cig, cog;
    ConvParams p;

    Index k_rows() const { return cig * kh * kw; }
    Index cols() const { return ho * wo; }
    bool pointwise() const {
        return kh == 1 && kw == 1 && p.stride == 1 && p.padding == 0;
    }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const Index L = g.cols();
    for (Index c = 0; c < g.cig; ++c)
        for (Index ky = 0; ky < g.kh; ++ky)
            for (Index kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((c * g.kh + ky) * g.kw + kx) * L;
                const T* plane = x + c * g.h * g.w;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.p.stride - g.p.padding + ky * g.p.dilation;
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + iy * g.w;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.p.stride - g.p.padding + kx * g.p.dilation;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
    const Index L = g.cols();
    for (Index c = 0; c < g.cig; ++c)
        for (Index ky = 0; ky < g.kh; ++ky)
            for (Index kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((c * g.kh + ky) * g.kw + kx) * L;
                T* plane = x + c * g.h * g.w;
                for (Index oy = 0; oy < g.ho; ++oy) {
                    const Index iy = oy * g.p.stride - g.p.padding + ky * g.p.dilation;
                    if (iy < 0 || iy >= g.h) continue;
                    T* dst = plane + iy * g.w;
                    const T* src = row + oy * g.wo;
                    for (Index ox = 0; ox < g.wo; ++ox) {
                        const Index ix = ox * g.p.stride - g.p.padding + kx * g.p.dilation;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace detail

/// 2-D cross-correlation with zero padding. `bias` may be an empty tensor.
/// Weight layout is (c_out, c_in / groups, kh, kw).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvParams p = {}) {
    using detail::CMapMat;
    using detail::MapMat;
    if (p.stride < 1 || p.dilation < 1 || p.groups < 1 || p.padding < 0)
        throw InvalidHyperparam("conv2d: stride, dilation and groups must be >= 1, padding >= 0");
    if (x.ndim() != 4 || weight.ndim() != 4)
        throw ShapeMismatch("conv2d expects NCHW input and OIHW weight");
    detail::ConvGeometry g{};
    g.p = p;
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.groups = p.groups;
    if (g.cin % g.groups != 0 || g.cout % g.groups != 0)
        throw InvalidHyperparam("conv2d: channels not divisible by groups");
    g.cig = g.cin / g.groups;
    g.cog = g.cout / g.groups;
    if (weight.dim(1) != g.cig)
        throw ShapeMismatch("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                            to_string(x.shape()));
    const bool has_bias = !bias.empty();
    if (has_bias && bias.shape() != Shape{g.cout}) throw ShapeMismatch("conv2d: bias must have shape (c_out)");
    const Index eff_h = p.dilation * (g.kh - 1) + 1;
    const Index eff_w = p.dilation * (g.kw - 1) + 1;
    if (g.h + 2 * p.padding < eff_h || g.w + 2 * p.padding < eff_w)
        throw ShapeMismatch("conv2d: input " + to_string(x.shape()) + " smaller than the dilated kernel");
    g.ho = (g.h + 2 * p.padding - eff_h) / p.stride + 1;
    g.wo = (g.w + 2 * p.padding - eff_w) / p.stride + 1;

    const Index K = g.k_rows(), L = g.cols();
    Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
    const T* px = x.data().data();
    const T* pw = weight.data().data();
    const T* pb = has_bias ? bias.data().data() : nullptr;
    T* po = out.data().data();

#pragma omp parallel
    {
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * L));
#pragma omp for schedule(static)
        for (Index b = 0; b < g.n; ++b) {
            for (Index gr = 0; gr < g.groups; ++gr) {
                const T* xg = px + (b * g.cin + gr * g.cig) * g.h * g.w;
                const T* cp = xg;
                if (!g.pointwise()) {
                    detail::im2col(xg, g, col.data());
                    cp = col.data();
                }
                MapMat<T> o(po + (b * g.cout + gr * g.cog) * L, g.cog, L);
                o.noalias() = CMapMat<T>(pw + gr * g.cog * K, g.cog, K) * CMapMat<T>(cp, K, L);
                if (pb)
                    for (Index c = 0; c < g.cog; ++c) o.row(c).array() += pb[gr * g.cog + c];
            }
        }
    }

    if (detail::should_record<T>({&x, &weight, &bias})) {
        detail::attach(out, [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(), g, has_bias] {
            if (oi->grad.empty()) return;
            const Index K = g.k_rows(), L = g.cols();
            const T* gout = oi->grad.data();
            const T* px = xi->data.data();
            const T* pw = wi->data.data();
            if (has_bias && bi->requires_grad) {
                T* gb = bi->ensure_grad().data();
                for (Index b = 0; b < g.n; ++b)
                    for (Index c = 0; c < g.cout; ++c) {
                        const T* row = gout + (b * g.cout + c) * L;
                        T acc = T(0);
                        for (Index i = 0; i < L; ++i) acc += row[i];
                        gb[c] += acc;
                    }
            }
            const bool need_w = wi->requires_grad;
            const bool need_x = xi->requires_grad;
            if (!need_w && !need_x) return;
            const Index wsize = g.cout * K;
            // Per-image weight gradients are reduced in image order, so the
            // result does not depend on the thread count.
            std::vector<T> partial(need_w ? static_cast<std::size_t>(g.n * wsize) : 0);
            T* gx = need_x ? xi->ensure_grad().data() : nullptr;
#pragma omp parallel
            {
                std::vector<T> col(static_cast<std::size_t>(K * L));
                std::vector<T> dcol(g.pointwise() ? 0 : static_cast<std::size_t>(K * L));
#pragma omp for schedule(static)
                for (Index b = 0; b < g.n; ++b) {
                    for (Index gr = 0; gr < g.groups; ++gr) {
                        const T* xg = px + (b * g.cin + gr * g.cig) * g.h * g.w;
                        CMapMat<T> go(gout + (b * g.cout + gr * g.cog) * L, g.cog, L);
                        CMapMat<T> wg(pw + gr * g.cog * K, g.cog, K);
                        if (need_w) {
                            const T* cp = xg;
                            if (!g.pointwise()) {
                                detail::im2col(xg, g, col.data());
                                cp = col.data();
                            }
                            MapMat<T>(partial.data() + b * wsize + gr * g.cog * K, g.cog, K).noalias() =
                                go * CMapMat<T>(cp, K, L).transpose();
                        }
                        if (need_x) {
                            T* gxg = gx + (b * g.cin + gr * g.cig) * g.h * g.w;
                            if (g.pointwise()) {
                                MapMat<T>(gxg, K, L).noalias() += wg.transpose() * go;
                            } else {
                                MapMat<T>(dcol.data(), K, L).noalias() = wg.transpose() * go;
                                detail::col2im_add(dcol.data(), g, gxg);
                            }
                        }
                    }
                }
            }
            if (need_w) {
                T* gw = wi->ensure_grad().data();
                for (Index b = 0; b < g.n; ++b)
                    for (Index i = 0; i < wsize; ++i) gw[i] += partial[static_cast<std::size_t>(b * wsize + i)];
            }
        });
    }
    return out;
}

} // namespace hipa
