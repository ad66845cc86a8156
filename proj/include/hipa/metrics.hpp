#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hipa/dataset.hpp"
#include "hipa/image.hpp"
#include "hipa/model.hpp"
#include "hipa/util.hpp"

namespace hipa {

namespace detail {

inline void check_metric_inputs(const Image& a, const Image& b, Index border) {
    if (a.shape() != b.shape() || a.ndim() != 3)
        throw ShapeMismatch("metric inputs differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (border < 0 || a.dim(1) <= 2 * border || a.dim(2) <= 2 * border)
        throw ShapeMismatch("border " + std::to_string(border) + " leaves nothing of " + to_string(a.shape()));
}

/// Border-cropped planes as doubles, one vector per channel.
inline std::vector<std::vector<double>> cropped_planes(const Image& x, Index border, Index& h, Index& w) {
    h = x.dim(1) - 2 * border;
    w = x.dim(2) - 2 * border;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(x.dim(0)));
    for (Index c = 0; c < x.dim(0); ++c) {
        auto& p = out[static_cast<std::size_t>(c)];
        p.reserve(static_cast<std::size_t>(h * w));
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) p.push_back(x.at(c, y + border, xx + border));
    }
    return out;
}

} // namespace detail

/// Peak signal-to-noise ratio in dB for data in [0, 1]; +inf when the images match.
inline double psnr(const Image& a, const Image& b, Index border = 0) {
    detail::check_metric_inputs(a, b, border);
    double se = 0.0;
    Index n = 0;
    for (Index c = 0; c < a.dim(0); ++c)
        for (Index y = border; y < a.dim(1) - border; ++y)
            for (Index x = border; x < a.dim(2) - border; ++x) {
                const double d = static_cast<double>(a.at(c, y, x)) - static_cast<double>(b.at(c, y, x));
                se += d * d;
                ++n;
            }
    const double mse = se / static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

/// Normalised 1-D Gaussian taps (size 11, sigma 1.5) of the SSIM window.
inline std::vector<double> ssim_window() {
    std::vector<double> g(11);
    double total = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        total += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= total;
    return g;
}

/// Single-scale SSIM averaged over valid window positions and channels.
inline double ssim(const Image& a, const Image& b, Index border = 0) {
    if (a.shape() != b.shape() || a.ndim() != 3)
        throw ShapeMismatch("ssim inputs differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (border < 0 || a.dim(1) - 2 * border < 11 || a.dim(2) - 2 * border < 11)
        throw TooSmall("ssim needs at least 11x11 pixels after the border crop");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto g = ssim_window();
    Index h = 0, w = 0;
    const auto pa = detail::cropped_planes(a, border, h, w);
    const auto pb = detail::cropped_planes(b, border, h, w);
    const Index oh = h - 10, ow = w - 10;

    // Separable valid filtering: rows first into (h, ow), then columns into (oh, ow).
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (Index k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y * w + x + k)];
                tmp[static_cast<std::size_t>(y * ow + x)] = acc;
            }
        for (Index y = 0; y < oh; ++y)
            for (Index x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (Index k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((y + k) * ow + x)];
                out[static_cast<std::size_t>(y * ow + x)] = acc;
            }
        return out;
    };

    double total = 0.0;
    for (std::size_t c = 0; c < pa.size(); ++c) {
        const auto& x = pa[c];
        const auto& y = pb[c];
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double va = sxx[i] - mx[i] * mx[i];
            const double vb = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cov + C2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + C1) * (va + vb + C2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(pa.size());
}

struct ImageScore {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<ImageScore> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int scale = 2;
    Index border = 2;
};

/// Maps a (3, h, w) LR image to a (3, s*h, s*w) HR estimate.
using Predictor = std::function<Image(const Image&)>;

inline Predictor bicubic_predictor(int scale) {
    return [scale](const Image& lr) { return bicubic_resize(lr, lr.dim(1) * scale, lr.dim(2) * scale); };
}

inline Predictor model_predictor(const HipaModel<float>& model) {
    return [&model](const Image& lr) {
        const Tensor<float> batch = reshape(lr, Shape{1, lr.dim(0), lr.dim(1), lr.dim(2)});
        const Tensor<float> out = model.infer(batch).final;
        return reshape(out, Shape{out.dim(1), out.dim(2), out.dim(3)});
    };
}

/// Scores each pair on clamped, border-cropped luminance.
inline EvalReport evaluate(const Predictor& predict, const std::vector<ImagePair>& dataset, int scale) {
    EvalReport r;
    r.scale = scale;
    r.border = scale;
    for (const auto& pair : dataset) {
        Image sr = predict(pair.lr);
        if (sr.shape() != pair.hr.shape())
            throw ShapeMismatch(pair.id + ": prediction " + to_string(sr.shape()) + " vs " + to_string(pair.hr.shape()));
        sr = clamp_values(sr, 0.0f, 1.0f);
        const Image ys = rgb_to_y(sr), yh = rgb_to_y(clamp_values(pair.hr, 0.0f, 1.0f));
        r.rows.push_back({pair.id, psnr(ys, yh, r.border), ssim(ys, yh, r.border)});
    }
    for (const auto& row : r.rows) {
        r.mean_psnr += row.psnr_db;
        r.mean_ssim += row.ssim;
    }
    if (!r.rows.empty()) {
        r.mean_psnr /= static_cast<double>(r.rows.size());
        r.mean_ssim /= static_cast<double>(r.rows.size());
    }
    return r;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string report_csv(const EvalReport& r) {
    std::string out = "id,psnr_db,ssim\n";
    for (const auto& row : r.rows) out += row.id + "," + format_metric(row.psnr_db) + "," + format_metric(row.ssim) + "\n";
    out += "mean," + format_metric(r.mean_psnr) + "," + format_metric(r.mean_ssim) + "\n";
    return out;
}

inline void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
    detail::write_text_atomically(path, report_csv(r));
}

} // namespace hipa
