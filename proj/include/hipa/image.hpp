#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <system_error>
#include <vector>

#include "hipa/error.hpp"
#include "hipa/rng.hpp"
#include "hipa/tensor.hpp"
#include "hipa/util.hpp"

namespace hipa {

/// Images are (c, h, w) float tensors with values in [0, 1].
using Image = Tensor<float>;

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace detail

/// Decodes an 8- or 16-bit grayscale/RGB PNG (alpha dropped) into (3, h, w).
inline Image load_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DecodeError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw DecodeError(path.string() + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DecodeError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeError("libpng initialisation failed");
    }

    // Buffers live outside the setjmp frame so a longjmp never skips their destructors.
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    bool unsupported = false;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("corrupt PNG data in " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (color_type == PNG_COLOR_TYPE_PALETTE || bit_depth < 8) {
        unsupported = true;
    } else {
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        png_set_interlace_handling(png);
        png_read_update_info(png, info);
        const std::size_t stride = png_get_rowbytes(png, info);
        pixels.resize(stride * height);
        rows.resize(height);
        for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (unsupported)
        throw UnsupportedColorType(path.string() + ": only 8/16-bit gray, gray+alpha, RGB and RGBA are supported");

    Image img(Shape{3, static_cast<Index>(height), static_cast<Index>(width)});
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    float* out = img.data().data();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            float v;
            if (bit_depth == 16) {
                const png_byte* p = pixels.data() + (i * 3 + c) * 2;
                v = static_cast<float>((p[0] << 8) | p[1]) / 65535.0f;
            } else {
                v = static_cast<float>(pixels[i * 3 + c]) / 255.0f;
            }
            out[c * plane + i] = v;
        }
    return img;
}

/// Encodes a (1, h, w) or (3, h, w) image as a gray or RGB PNG of the given depth.
inline void save_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw ShapeMismatch("save_png expects (1|3, h, w), got " + to_string(img.shape()));
    if (bit_depth != 8 && bit_depth != 16) throw InvalidHyperparam("PNG bit depth must be 8 or 16");
    const auto channels = static_cast<std::size_t>(img.dim(0));
    const auto height = static_cast<png_uint_32>(img.dim(1));
    const auto width = static_cast<png_uint_32>(img.dim(2));
    const std::size_t bytes = bit_depth / 8;
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<png_byte> pixels(plane * channels * bytes);
    const float* src = img.data().data();
    const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < channels; ++c) {
            const double v = std::clamp(static_cast<double>(src[c * plane + i]), 0.0, 1.0);
            const auto q = static_cast<unsigned>(std::lround(v * maxv));
            png_byte* p = pixels.data() + (i * channels + c) * bytes;
            if (bytes == 2) {
                p[0] = static_cast<png_byte>(q >> 8);
                p[1] = static_cast<png_byte>(q & 0xff);
            } else {
                p[0] = static_cast<png_byte>(q);
            }
        }
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * width * channels * bytes;

    detail::write_atomically(path, [&](const std::filesystem::path& tmp) {
        detail::FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw DataError("cannot write " + tmp.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, nullptr);
            throw DataError("libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw DataError("PNG encoding failed for " + path.string());
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, width, height, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    });
}

/// Cubic convolution weights (a = -0.5) for taps at offsets -1, 0, 1, 2 from
/// floor(src), where `phase` = src - floor(src).
inline std::array<double, 4> cubic_weights(double phase) {
    constexpr double a = -0.5;
    auto k = [](double t) {
        t = std::abs(t);
        if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
        if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
        return 0.0;
    };
    return {k(phase + 1.0), k(phase), k(1.0 - phase), k(2.0 - phase)};
}

namespace detail {

struct ResampleTaps {
    std::vector<std::array<Index, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

inline ResampleTaps cubic_taps(Index in, Index out) {
    ResampleTaps t;
    t.index.resize(static_cast<std::size_t>(out));
    t.weight.resize(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        const double base = std::floor(src);
        const auto i0 = static_cast<Index>(base);
        t.weight[o] = cubic_weights(src - base);
        for (Index k = 0; k < 4; ++k) t.index[o][k] = std::clamp<Index>(i0 - 1 + k, 0, in - 1);
    }
    return t;
}

} // namespace detail

/// Separable bicubic resampling with edge clamping and half-pixel centres.
inline Image bicubic_resize(const Image& x, Index out_h, Index out_w) {
    if (x.ndim() != 3) throw ShapeMismatch("bicubic_resize expects (c, h, w)");
    if (out_h < 1 || out_w < 1) throw InvalidSize("bicubic_resize: output extents must be >= 1");
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto tx = detail::cubic_taps(w, out_w);
    const auto ty = detail::cubic_taps(h, out_h);
    std::vector<double> tmp(static_cast<std::size_t>(c * h * out_w));
    const float* src = x.data().data();
    for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < h; ++y)
            for (Index o = 0; o < out_w; ++o) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += tx.weight[o][k] * src[(ch * h + y) * w + tx.index[o][k]];
                tmp[static_cast<std::size_t>((ch * h + y) * out_w + o)] = acc;
            }
    Image out(Shape{c, out_h, out_w});
    float* dst = out.data().data();
    for (Index ch = 0; ch < c; ++ch)
        for (Index o = 0; o < out_h; ++o)
            for (Index xx = 0; xx < out_w; ++xx) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k)
                    acc += ty.weight[o][k] * tmp[static_cast<std::size_t>((ch * h + ty.index[o][k]) * out_w + xx)];
                dst[(ch * out_h + o) * out_w + xx] = static_cast<float>(acc);
            }
    return out;
}

/// Plain (non-recording) crop of a (c, h, w) image.
inline Image crop(const Image& x, Index top, Index left, Index height, Index width) {
    if (top < 0 || left < 0 || top + height > x.dim(1) || left + width > x.dim(2) || height < 1 || width < 1)
        throw ShapeMismatch("crop window outside image");
    const Index c = x.dim(0), w = x.dim(2), h = x.dim(1);
    Image out(Shape{c, height, width});
    const float* s = x.data().data();
    float* d = out.data().data();
    for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < height; ++y)
            std::copy_n(s + (ch * h + top + y) * w + left, width, d + (ch * height + y) * width);
    return out;
}

/// Mirror along the width axis.
inline Image flip_horizontal(const Image& x) {
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Image out(x.shape());
    for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) out.at(ch, y, xx) = x.at(ch, y, w - 1 - xx);
    return out;
}

/// Counter-clockwise quarter turn.
inline Image rotate90(const Image& x) {
    const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Image out(Shape{c, w, h});
    for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < w; ++y)
            for (Index xx = 0; xx < h; ++xx) out.at(ch, y, xx) = x.at(ch, xx, w - 1 - y);
    return out;
}

/// Element `k` in [0, 8) of the dihedral group: optional flip, then k % 4 quarter turns.
inline Image dihedral(const Image& x, int k) {
    Image y = (k / 4) % 2 ? flip_horizontal(x) : x.clone();
    for (int r = 0; r < k % 4; ++r) y = rotate90(y);
    return y;
}

/// BT.601 studio-swing luma of an RGB image in [0, 1]; result in [16/255, 235/255].
inline Image rgb_to_y(const Image& x) {
    if (x.ndim() != 3 || x.dim(0) != 3) throw ShapeMismatch("rgb_to_y expects (3, h, w)");
    const Index plane = x.dim(1) * x.dim(2);
    Image y(Shape{1, x.dim(1), x.dim(2)});
    const float* p = x.data().data();
    for (Index i = 0; i < plane; ++i) {
        const double r = p[i], g = p[plane + i], b = p[2 * plane + i];
        const double v = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
        y[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return y;
}

} // namespace hipa
