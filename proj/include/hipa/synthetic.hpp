#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hipa/dataset.hpp"
#include "hipa/image.hpp"
#include "hipa/rng.hpp"

namespace hipa {

namespace detail {

inline std::array<float, 3> random_colour(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

inline void put(Image& img, Index y, Index x, const std::array<float, 3>& c) {
    if (y < 0 || x < 0 || y >= img.dim(1) || x >= img.dim(2)) return;
    for (Index ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
}

inline void checkerboard(Image& img, Rng& rng) {
    const Index cell = 2 + static_cast<Index>(rng.below(7));
    const auto a = random_colour(rng), b = random_colour(rng);
    const Index oy = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cell)));
    const Index ox = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cell)));
    for (Index y = 0; y < img.dim(1); ++y)
        for (Index x = 0; x < img.dim(2); ++x) put(img, y, x, ((y + oy) / cell + (x + ox) / cell) % 2 ? a : b);
}

inline void gradient(Image& img, Rng& rng) {
    const double angle = rng.uniform(0.0, 2.0 * 3.141592653589793);
    const double dy = std::sin(angle), dx = std::cos(angle);
    const auto a = random_colour(rng), b = random_colour(rng);
    const double span = static_cast<double>(img.dim(1) + img.dim(2)) / 2.0;
    for (Index y = 0; y < img.dim(1); ++y)
        for (Index x = 0; x < img.dim(2); ++x) {
            const double t = std::clamp(0.5 + ((y - img.dim(1) / 2.0) * dy + (x - img.dim(2) / 2.0) * dx) / span, 0.0, 1.0);
            std::array<float, 3> c{};
            for (std::size_t k = 0; k < 3; ++k) c[k] = static_cast<float>((1.0 - t) * a[k] + t * b[k]);
            put(img, y, x, c);
        }
}

/// Glyph-like marks: axis-aligned and diagonal strokes, 1-2 px thick, grouped in rows.
inline void strokes(Image& img, Rng& rng) {
    const auto ink = random_colour(rng);
    const Index h = img.dim(1), w = img.dim(2);
    const Index line_h = 10 + static_cast<Index>(rng.below(5));
    for (Index base = 2; base + line_h < h; base += line_h + 2) {
        Index x = 2 + static_cast<Index>(rng.below(4));
        while (x + 6 < w) {
            const Index gw = 4 + static_cast<Index>(rng.below(4));
            const Index thick = 1 + static_cast<Index>(rng.below(2));
            const int marks = 2 + static_cast<int>(rng.below(3));
            for (int m = 0; m < marks; ++m) {
                switch (rng.below(4)) {
                case 0:  // vertical
                    for (Index y = base; y < base + line_h - 2; ++y)
                        for (Index t = 0; t < thick; ++t) put(img, y, x + static_cast<Index>(rng.below(2)) * (gw - 1) + t, ink);
                    break;
                case 1: {  // horizontal
                    const Index y0 = base + static_cast<Index>(rng.below(static_cast<std::uint64_t>(line_h - 2)));
                    for (Index xx = x; xx < x + gw; ++xx)
                        for (Index t = 0; t < thick; ++t) put(img, y0 + t, xx, ink);
                    break;
                }
                default: {  // diagonal
                    const bool down = rng.below(2) == 0;
                    for (Index k = 0; k < line_h - 2; ++k) {
                        const Index xx = x + k * (gw - 1) / (line_h - 3);
                        const Index y = down ? base + k : base + line_h - 3 - k;
                        for (Index t = 0; t < thick; ++t) put(img, y, xx + t, ink);
                    }
                    break;
                }
                }
            }
            x += gw + 2 + static_cast<Index>(rng.below(3));
        }
    }
}

} // namespace detail

/// Deterministic structured HR images. Every image mixes at least two of
/// checkerboards, gradients and text-like strokes so none is trivially smooth.
inline std::vector<Image> synthetic_images(int count, Index size, std::uint64_t seed) {
    std::vector<Image> out;
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        Image img(Shape{3, size, size});
        switch (i % 4) {
        case 0:
            detail::checkerboard(img, rng);
            detail::strokes(img, rng);
            break;
        case 1:
            detail::gradient(img, rng);
            detail::strokes(img, rng);
            break;
        case 2: {
            detail::gradient(img, rng);
            Image board(img.shape());
            detail::checkerboard(board, rng);
            const Index top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(size / 2)));
            const Index left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(size / 2)));
            for (Index c = 0; c < 3; ++c)
                for (Index y = top; y < top + size / 2; ++y)
                    for (Index x = left; x < left + size / 2; ++x) img.at(c, y, x) = board.at(c, y, x);
            break;
        }
        default: {
            detail::gradient(img, rng);
            Image board(img.shape());
            detail::checkerboard(board, rng);
            for (Index k = 0; k < img.numel(); ++k) img.data()[k] = 0.5f * (img.data()[k] + board.data()[k]);
            detail::strokes(img, rng);
            break;
        }
        }
        out.push_back(std::move(img));
    }
    return out;
}

inline std::vector<ImagePair> synthetic_dataset(int count, Index size, int scale, std::uint64_t seed) {
    std::vector<ImagePair> out;
    const auto imgs = synthetic_images(count, size, seed);
    for (std::size_t i = 0; i < imgs.size(); ++i) out.push_back(make_pair(imgs[i], scale, "toy" + std::to_string(i)));
    return out;
}

} // namespace hipa
