#pragma once

#include <memory>
#include <vector>

#include "hipa/tensor.hpp"

namespace hipa {

namespace detail {

/// out[i] = x[src[i]]; gradient scatters back with accumulation, so `src`
/// may repeat indices (reflection padding).
template <class T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<Index> src) {
    Tensor<T> out(std::move(out_shape));
    const T* px = x.data().data();
    T* po = out.data().data();
    const std::size_t n = src.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[src[i]];
    if (should_record<T>({&x})) {
        auto map = std::make_shared<std::vector<Index>>(std::move(src));
        attach(out, [xi = x.impl(), oi = out.impl(), map] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            T* gx = xi->ensure_grad().data();
            const std::size_t n = map->size();
            for (std::size_t i = 0; i < n; ++i) gx[(*map)[i]] += g[i];
        });
    }
    return out;
}

/// Reflection without edge repetition; folds repeatedly for large offsets.
inline Index reflect_index(Index i, Index n) {
    if (n == 1) return 0;
    const Index period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

inline std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
    const auto r = static_cast<std::ptrdiff_t>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeMismatch("axis out of range");
    return static_cast<std::size_t>(axis);
}

} // namespace detail

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    Index known = 1;
    std::ptrdiff_t infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeMismatch("reshape: more than one inferred extent");
            infer = static_cast<std::ptrdiff_t>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0 && known > 0 && x.numel() % known == 0) shape[infer] = x.numel() / known;
    if (numel_of(shape) != x.numel())
        throw ShapeMismatch("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
    Tensor<T> out(shape, x.values());
    if (detail::should_record<T>({&x})) {
        detail::attach(out, [xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty()) return;
            auto& gx = xi->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
    const std::size_t r = x.ndim();
    if (order.size() != r) throw ShapeMismatch("permute: order rank mismatch");
    std::vector<bool> seen(r, false);
    for (auto o : order) {
        if (o >= r || seen[o]) throw ShapeMismatch("permute: order is not a permutation");
        seen[o] = true;
    }
    const Shape in_strides = row_major_strides(x.shape());
    Shape out_shape(r), src_strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x.dim(static_cast<std::ptrdiff_t>(order[i]));
        src_strides[i] = in_strides[order[i]];
    }
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    std::vector<Index> idx(r, 0);
    Index off = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        src[i] = off;
        for (std::ptrdiff_t d = static_cast<std::ptrdiff_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            off += src_strides[d];
            if (idx[d] < out_shape[d]) break;
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return detail::gather(x, std::move(out_shape), std::move(src));
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose_last(const Tensor<T>& x) {
    std::vector<std::size_t> order(x.ndim());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[order.size() - 1], order[order.size() - 2]);
    return permute(x, order);
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, Index start, Index length) {
    const std::size_t a = detail::normalize_axis(axis, x.ndim());
    const Shape& s = x.shape();
    if (start < 0 || length < 1 || start + length > s[a])
        throw ShapeMismatch("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") of axis extent " +
                            std::to_string(s[a]));
    Index outer = 1, inner = 1;
    for (std::size_t i = 0; i < a; ++i) outer *= s[i];
    for (std::size_t i = a + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[a] = length;
    std::vector<Index> src;
    src.reserve(static_cast<std::size_t>(outer * length * inner));
    for (Index o = 0; o < outer; ++o)
        for (Index k = 0; k < length; ++k)
            for (Index i = 0; i < inner; ++i) src.push_back((o * s[a] + start + k) * inner + i);
    return detail::gather(x, std::move(out_shape), std::move(src));
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis) {
    if (parts.empty()) throw ShapeMismatch("concat of nothing");
    const std::size_t a = detail::normalize_axis(axis, parts[0].ndim());
    Shape out_shape = parts[0].shape();
    out_shape[a] = 0;
    for (const auto& p : parts) {
        if (p.ndim() != out_shape.size()) throw ShapeMismatch("concat: rank mismatch");
        for (std::size_t i = 0; i < out_shape.size(); ++i)
            if (i != a && p.dim(static_cast<std::ptrdiff_t>(i)) != out_shape[i])
                throw ShapeMismatch("concat: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
        out_shape[a] += p.dim(static_cast<std::ptrdiff_t>(a));
    }
    Index outer = 1, inner = 1;
    for (std::size_t i = 0; i < a; ++i) outer *= out_shape[i];
    for (std::size_t i = a + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    Tensor<T> out(out_shape);
    T* po = out.data().data();
    const Index out_block = out_shape[a] * inner;
    Index offset = 0;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        const Index block = p.dim(static_cast<std::ptrdiff_t>(a)) * inner;
        const T* pp = p.data().data();
        for (Index o = 0; o < outer; ++o) std::copy(pp + o * block, pp + (o + 1) * block, po + o * out_block + offset);
        offsets.push_back(offset);
        offset += block;
    }
    if (detail::should_record<T>(parts)) {
        std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        detail::attach(out, [impls, oi = out.impl(), offsets, outer, out_block, inner, a] {
            if (oi->grad.empty()) return;
            const T* g = oi->grad.data();
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto& pi = *impls[k];
                if (!pi.requires_grad) continue;
                const Index block = pi.shape[a] * inner;
                T* gp = pi.ensure_grad().data();
                for (Index o = 0; o < outer; ++o)
                    for (Index i = 0; i < block; ++i) gp[o * block + i] += g[o * out_block + offsets[k] + i];
            }
        });
    }
    return out;
}

/// Reflect-pads one axis (edge sample not repeated: [1,2,3] -> [2,1,2,3,2]).
template <class T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::ptrdiff_t axis, Index before, Index after) {
    const std::size_t a = detail::normalize_axis(axis, x.ndim());
    if (before < 0 || after < 0) throw ShapeMismatch("pad_reflect: negative padding");
    const Shape& s = x.shape();
    Index outer = 1, inner = 1;
    for (std::size_t i = 0; i < a; ++i) outer *= s[i];
    for (std::size_t i = a + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[a] = s[a] + before + after;
    std::vector<Index> src;
    src.reserve(static_cast<std::size_t>(numel_of(out_shape)));
    for (Index o = 0; o < outer; ++o)
        for (Index k = 0; k < out_shape[a]; ++k) {
            const Index sk = detail::reflect_index(k - before, s[a]);
            for (Index i = 0; i < inner; ++i) src.push_back((o * s[a] + sk) * inner + i);
        }
    return detail::gather(x, std::move(out_shape), std::move(src));
}

/// Reflect-pads the two spatial axes of an NCHW tensor on the bottom/right.
template <class T>
Tensor<T> pad_reflect_2d(const Tensor<T>& x, Index pad_bottom, Index pad_right) {
    Tensor<T> y = pad_bottom > 0 ? pad_reflect(x, 2, 0, pad_bottom) : x;
    return pad_right > 0 ? pad_reflect(y, 3, 0, pad_right) : y;
}

/// (n, c*r*r, h, w) -> (n, c, h*r, w*r); channel c*r*r + i*r + j lands at (h*r+i, w*r+j).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, Index r) {
    if (x.ndim() != 4) throw ShapeMismatch("pixel_shuffle expects NCHW");
    if (r < 1 || x.dim(1) % (r * r) != 0)
        throw ShapeMismatch("pixel_shuffle: channels " + std::to_string(x.dim(1)) + " not divisible by r^2");
    const Index n = x.dim(0), c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
    Shape out_shape{n, c, h * r, w * r};
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    std::size_t o = 0;
    for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch)
            for (Index y = 0; y < h * r; ++y)
                for (Index xx = 0; xx < w * r; ++xx) {
                    const Index ic = ch * r * r + (y % r) * r + (xx % r);
                    src[o++] = ((b * c * r * r + ic) * h + y / r) * w + xx / r;
                }
    return detail::gather(x, std::move(out_shape), std::move(src));
}

/// Inverse of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, Index r) {
    if (x.ndim() != 4) throw ShapeMismatch("pixel_unshuffle expects NCHW");
    if (r < 1 || x.dim(2) % r != 0 || x.dim(3) % r != 0)
        throw ShapeMismatch("pixel_unshuffle: spatial extents not divisible by r");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
    Shape out_shape{n, c * r * r, h, w};
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    std::size_t o = 0;
    for (Index b = 0; b < n; ++b)
        for (Index oc = 0; oc < c * r * r; ++oc) {
            const Index ch = oc / (r * r), i = (oc / r) % r, j = oc % r;
            for (Index y = 0; y < h; ++y)
                for (Index xx = 0; xx < w; ++xx)
                    src[o++] = ((b * c + ch) * h * r + y * r + i) * w * r + xx * r + j;
        }
    return detail::gather(x, std::move(out_shape), std::move(src));
}

} // namespace hipa
