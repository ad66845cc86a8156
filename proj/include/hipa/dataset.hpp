#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "hipa/image.hpp"

namespace hipa {

/// Aligned low/high resolution sample; hr is exactly `scale` times lr.
struct ImagePair {
    Image lr;
    Image hr;
    std::string id;
    int scale = 2;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> entries;  // paths relative to root
    int scale = 2;
    std::string split = "train";

    std::filesystem::path resolve(const std::string& entry) const { return root / entry; }
};

/// One relative path per line; blank lines and `#` comments are ignored.
/// Paths resolve against the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path, int scale, std::string split = "train") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    m.scale = scale;
    m.split = std::move(split);
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::string entry = detail::trim(line);
        if (entry.empty()) continue;
        if (!seen.insert(entry).second) throw DataError("duplicate manifest entry: " + entry);
        if (!std::filesystem::is_regular_file(m.resolve(entry)))
            throw DataError("manifest entry does not exist: " + m.resolve(entry).string());
        m.entries.push_back(std::move(entry));
    }
    if (m.entries.empty()) throw DataError("manifest lists no images: " + path.string());
    return m;
}

/// Crops hr to a multiple of `scale` and derives lr by bicubic downscaling.
inline ImagePair make_pair(const Image& hr, int scale, std::string id = {}) {
    if (hr.ndim() != 3 || hr.dim(0) != 3) throw ShapeMismatch("make_pair expects (3, h, w)");
    if (scale < 1 || hr.dim(1) < scale || hr.dim(2) < scale)
        throw TooSmall("image " + std::to_string(hr.dim(1)) + "x" + std::to_string(hr.dim(2)) +
                       " is smaller than the scale factor");
    const Index h = hr.dim(1) / scale, w = hr.dim(2) / scale;
    ImagePair p;
    p.hr = crop(hr, 0, 0, h * scale, w * scale);
    p.lr = bicubic_resize(p.hr, h, w);
    for (float& v : p.lr.data()) v = std::clamp(v, 0.0f, 1.0f);
    p.id = std::move(id);
    p.scale = scale;
    return p;
}

inline std::vector<ImagePair> load_dataset(const DatasetManifest& m) {
    std::vector<ImagePair> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        Image hr;
        try {
            hr = load_png(m.resolve(e));
        } catch (const Error& err) {
            throw DataError(err.what());
        }
        out.push_back(make_pair(hr, m.scale, e));
    }
    return out;
}

struct CropWindow {
    Index top = 0;
    Index left = 0;
    Index size = 0;
};

inline CropWindow pick_crop(const ImagePair& pair, Index lr_crop, Rng& rng) {
    const Index h = pair.lr.dim(1), w = pair.lr.dim(2);
    if (lr_crop < 1 || h < lr_crop || w < lr_crop)
        throw TooSmall(pair.id + ": LR image " + std::to_string(h) + "x" + std::to_string(w) +
                       " is smaller than crop " + std::to_string(lr_crop));
    CropWindow c;
    c.size = lr_crop;
    c.top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - lr_crop + 1)));
    c.left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w - lr_crop + 1)));
    return c;
}

inline ImagePair crop_pair(const ImagePair& pair, const CropWindow& c) {
    const Index s = pair.scale;
    ImagePair out;
    out.lr = crop(pair.lr, c.top, c.left, c.size, c.size);
    out.hr = crop(pair.hr, s * c.top, s * c.left, s * c.size, s * c.size);
    out.id = pair.id;
    out.scale = pair.scale;
    return out;
}

inline ImagePair sample_crop(const ImagePair& pair, Index lr_crop, Rng& rng) {
    return crop_pair(pair, pick_crop(pair, lr_crop, rng));
}

/// Applies one uniformly drawn dihedral transform to both images.
inline ImagePair augment(const ImagePair& pair, Rng& rng) {
    const int k = static_cast<int>(rng.below(8));
    return {dihedral(pair.lr, k), dihedral(pair.hr, k), pair.id, pair.scale};
}

struct Batch {
    Tensor<float> lr;  // (B, 3, h, w)
    Tensor<float> hr;  // (B, 3, s*h, s*w)
    std::vector<std::string> ids;
};

/// Stacks same-size pairs into NCHW tensors.
inline Batch stack_pairs(const std::vector<ImagePair>& pairs) {
    if (pairs.empty()) throw ShapeMismatch("empty batch");
    const Shape ls = pairs[0].lr.shape(), hs = pairs[0].hr.shape();
    const auto B = static_cast<Index>(pairs.size());
    Batch b;
    b.lr = Tensor<float>(Shape{B, ls[0], ls[1], ls[2]});
    b.hr = Tensor<float>(Shape{B, hs[0], hs[1], hs[2]});
    for (Index i = 0; i < B; ++i) {
        const auto& p = pairs[static_cast<std::size_t>(i)];
        if (p.lr.shape() != ls || p.hr.shape() != hs) throw ShapeMismatch("batch members differ in size");
        std::copy(p.lr.data().begin(), p.lr.data().end(), b.lr.data().begin() + i * p.lr.numel());
        std::copy(p.hr.data().begin(), p.hr.data().end(), b.hr.data().begin() + i * p.hr.numel());
        b.ids.push_back(p.id);
    }
    return b;
}

} // namespace hipa
