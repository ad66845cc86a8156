#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "hipa/config.hpp"
#include "hipa/layers.hpp"
#include "hipa/params.hpp"
#include "hipa/rng.hpp"

namespace hipa {

/// Quadrants in the order top-left, top-right, bottom-left, bottom-right.
template <class T>
std::array<Tensor<T>, 4> split_image(const Tensor<T>& x) {
    if (x.ndim() != 4) throw ShapeMismatch("split_image expects NCHW");
    const Index h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw NotDivisible("split_image needs even extents, got " + std::to_string(h) + "x" + std::to_string(w));
    const Tensor<T> top = slice(x, 2, 0, h / 2);
    const Tensor<T> bottom = slice(x, 2, h / 2, h / 2);
    return {slice(top, 3, 0, w / 2), slice(top, 3, w / 2, w / 2), slice(bottom, 3, 0, w / 2),
            slice(bottom, 3, w / 2, w / 2)};
}

/// Left and right column halves.
template <class T>
std::array<Tensor<T>, 2> split_halves(const Tensor<T>& x) {
    const Index w = x.dim(3);
    if (w % 2 != 0) throw NotDivisible("split_halves needs an even width");
    return {slice(x, 3, 0, w / 2), slice(x, 3, w / 2, w / 2)};
}

template <class T>
Tensor<T> merge_vertical(const Tensor<T>& top, const Tensor<T>& bottom) {
    return concat<T>({top, bottom}, 2);
}

template <class T>
Tensor<T> merge_horizontal(const Tensor<T>& left, const Tensor<T>& right) {
    return concat<T>({left, right}, 3);
}

template <class T>
struct StageOutput {
    Tensor<T> hr_image;
    std::map<std::string, Tensor<T>> carry;
};

/// Stage 1, stage 2 and final predictions.
template <class T>
struct Predictions {
    Tensor<T> stage1;
    Tensor<T> stage2;
    Tensor<T> final;

    const Tensor<T>& operator[](std::size_t i) const { return i == 0 ? stage1 : (i == 1 ? stage2 : final); }
};

template <class T>
struct ReconstructHead {
    Upsampler<T> upsample;
    Conv2d<T> reconstruct;

    ReconstructHead() = default;
    ReconstructHead(ParamBuilder<T> pb, Index channels, Index scale)
        : upsample(pb.child("up"), channels, scale), reconstruct(pb.child("recon"), channels, 3, 3) {}

    Tensor<T> operator()(const Tensor<T>& f) const { return reconstruct(upsample(f)); }
};

template <class T>
struct Stage {
    Conv2d<T> shallow;
    std::optional<Conv2d<T>> fuse;
    Mrfag<T> trunk;
    std::optional<ApeVit<T>> vit;
    ReconstructHead<T> head;

    bool built() const { return !shallow.weight.empty(); }
};

/// The three-stage hierarchical patch network (or, in fixed mode, a single
/// full-image trunk with a fixed-patch Transformer).
template <class T>
class HipaModel {
public:
    explicit HipaModel(HipaConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng init = Rng(cfg_.seed).split(0);
        ParamBuilder<T> root(params_, init);
        const LayerSpec spec = cfg_.layer_spec();
        const Index C = cfg_.channels, P = cfg_.patch_size, crop = cfg_.lr_crop;

        if (cfg_.hierarchy == Hierarchy::fixed) {
            auto pb = root.child("fixed");
            fixed.shallow = Conv2d<T>(pb.child("shallow"), 3, C, 3);
            fixed.trunk = Mrfag<T>(pb.child("mrfag"), spec, cfg_.groups[2]);
            fixed.vit.emplace(pb.child("vit"), spec, cfg_.ape_mode, crop / P, crop / P);
            fixed.head = ReconstructHead<T>(pb.child("head"), C, cfg_.scale);
            return;
        }

        {
            auto pb = root.child("stage1");
            stage1.shallow = Conv2d<T>(pb.child("shallow"), 3, C, 3);
            stage1.trunk = Mrfag<T>(pb.child("mrfag"), spec, cfg_.groups[0]);
            stage1.vit.emplace(pb.child("vit"), spec, cfg_.ape_mode, crop / 2 / P, crop / 2 / P);
            stage1.head = ReconstructHead<T>(pb.child("head"), C, cfg_.scale);
        }
        {
            auto pb = root.child("stage2");
            stage2.shallow = Conv2d<T>(pb.child("shallow"), 3, C, 3);
            stage2.fuse.emplace(pb.child("fuse"), 2 * C, C, 1);
            stage2.trunk = Mrfag<T>(pb.child("mrfag"), spec, cfg_.groups[1]);
            stage2.vit.emplace(pb.child("vit"), spec, cfg_.ape_mode, crop / P, crop / 2 / P);
            stage2.head = ReconstructHead<T>(pb.child("head"), C, cfg_.scale);
        }
        {
            auto pb = root.child("stage3");
            stage3.shallow = Conv2d<T>(pb.child("shallow"), 3, C, 3);
            stage3.fuse.emplace(pb.child("fuse"), 2 * C, C, 1);
            stage3.trunk = Mrfag<T>(pb.child("mrfag"), spec, cfg_.groups[2]);
            stage3.head = ReconstructHead<T>(pb.child("head"), C, cfg_.scale);
        }
    }

    HipaModel(const HipaModel&) = delete;
    HipaModel& operator=(const HipaModel&) = delete;
    HipaModel(HipaModel&&) noexcept = default;
    HipaModel& operator=(HipaModel&&) noexcept = default;

    const HipaConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    /// Shallow features (Cin=3) of one stage.
    Tensor<T> shallow_feature(const Stage<T>& stage, const Tensor<T>& lr_region) const {
        if (lr_region.ndim() != 4 || lr_region.dim(1) != 3)
            throw ShapeMismatch("shallow_feature expects (n, 3, h, w), got " + to_string(lr_region.shape()));
        return stage.shallow(lr_region);
    }

    /// Channel concat of (shallow, carried) reduced back to C by a 1x1 conv.
    Tensor<T> fuse_cross_stage(const Stage<T>& stage, const Tensor<T>& shallow, const Tensor<T>& carried) const {
        if (shallow.shape() != carried.shape())
            throw ShapeMismatch("fuse_cross_stage: " + to_string(shallow.shape()) + " vs " + to_string(carried.shape()));
        return (*stage.fuse)(concat<T>({shallow, carried}, 1));
    }

    StageOutput<T> stage1_forward(const Tensor<T>& lr) const {
        require_valid_extent(lr);
        const Index n = lr.dim(0);
        const auto q = split_image(lr);
        // Quadrants share stage weights, so they run as one batch.
        const Tensor<T> f0 = shallow_feature(stage1, concat<T>({q[0], q[1], q[2], q[3]}, 0));
        Tensor<T> f = stage1.trunk(f0);
        if (stage1.vit) f = (*stage1.vit)(f);
        auto part = [n](const Tensor<T>& t, Index j) { return slice(t, 0, j * n, n); };
        Tensor<T> left = add(merge_vertical(part(f, 0), part(f, 2)), merge_vertical(part(f0, 0), part(f0, 2)));
        Tensor<T> right = add(merge_vertical(part(f, 1), part(f, 3)), merge_vertical(part(f0, 1), part(f0, 3)));
        StageOutput<T> out;
        out.hr_image = stage1.head(merge_horizontal(left, right));
        out.carry.emplace("left", std::move(left));
        out.carry.emplace("right", std::move(right));
        return out;
    }

    StageOutput<T> stage2_forward(const Tensor<T>& lr, const StageOutput<T>& prev) const {
        require_valid_extent(lr);
        const Index n = lr.dim(0);
        const auto halves = split_halves(lr);
        const Tensor<T> s0 = shallow_feature(stage2, concat<T>({halves[0], halves[1]}, 0));
        const Tensor<T> carried = concat<T>({prev.carry.at("left"), prev.carry.at("right")}, 0);
        Tensor<T> f = stage2.trunk(fuse_cross_stage(stage2, s0, carried));
        if (stage2.vit) f = (*stage2.vit)(f);
        auto part = [n](const Tensor<T>& t, Index j) { return slice(t, 0, j * n, n); };
        Tensor<T> full = add(merge_horizontal(part(f, 0), part(f, 1)), merge_horizontal(part(s0, 0), part(s0, 1)));
        StageOutput<T> out;
        out.hr_image = stage2.head(full);
        out.carry.emplace("full", std::move(full));
        return out;
    }

    StageOutput<T> stage3_forward(const Tensor<T>& lr, const StageOutput<T>& prev) const {
        const Tensor<T> s0 = shallow_feature(stage3, lr);
        Tensor<T> f = stage3.trunk(fuse_cross_stage(stage3, s0, prev.carry.at("full")));
        StageOutput<T> out;
        out.hr_image = stage3.head(add(f, s0));
        return out;
    }

    Predictions<T> forward(const Tensor<T>& lr) const {
        if (cfg_.hierarchy == Hierarchy::fixed) {
            require_valid_extent(lr);
            const Tensor<T> s0 = shallow_feature(fixed, lr);
            Tensor<T> f = (*fixed.vit)(fixed.trunk(s0));
            Tensor<T> hr = fixed.head(add(f, s0));
            return {hr, hr, hr};
        }
        auto s1 = stage1_forward(lr);
        auto s2 = stage2_forward(lr, s1);
        auto s3 = stage3_forward(lr, s2);
        return {s1.hr_image, s2.hr_image, s3.hr_image};
    }

    /// Weighted sum of per-stage mean absolute errors against `gt`.
    Tensor<T> loss(const Predictions<T>& preds, const Tensor<T>& gt) const {
        Tensor<T> total;
        for (std::size_t k = 0; k < 3; ++k) {
            if (preds[k].shape() != gt.shape())
                throw ShapeMismatch("prediction " + to_string(preds[k].shape()) + " vs ground truth " +
                                    to_string(gt.shape()));
            Tensor<T> term = scale(l1_loss(preds[k], gt), static_cast<T>(cfg_.loss_weights[k]));
            total = k == 0 ? term : add(total, term);
        }
        return total;
    }

    /// Any-size inference: reflect-pads bottom/right to a valid extent, runs
    /// without recording, crops by scale x pad and clamps to [0, 1].
    Predictions<T> infer(const Tensor<T>& lr) const {
        NoGradGuard<T> no_grad;
        const Index g = cfg_.granularity(), s = cfg_.scale;
        const Index h = lr.dim(2), w = lr.dim(3);
        const Index ph = (g - h % g) % g, pw = (g - w % g) % g;
        const Predictions<T> raw = forward(pad_reflect_2d(lr, ph, pw));
        auto finish = [&](const Tensor<T>& t) {
            Tensor<T> c = slice(slice(t, 2, 0, s * h), 3, 0, s * w);
            return clamp_values(c, T(0), T(1));
        };
        Tensor<T> last = finish(raw.final);
        if (cfg_.hierarchy == Hierarchy::fixed) return {last, last, last};
        return {finish(raw.stage1), finish(raw.stage2), last};
    }

    Stage<T> stage1, stage2, stage3, fixed;

private:
    void require_valid_extent(const Tensor<T>& lr) const {
        if (lr.ndim() != 4 || lr.dim(1) != 3) throw ShapeMismatch("model input must be (n, 3, h, w)");
        const Index g = cfg_.granularity();
        if (lr.dim(2) % g != 0 || lr.dim(3) % g != 0)
            throw NotDivisible("input " + std::to_string(lr.dim(2)) + "x" + std::to_string(lr.dim(3)) +
                               " is not a multiple of 2*patch_size = " + std::to_string(g));
    }

    HipaConfig cfg_;
    ParamStore<T> params_;
};

} // namespace hipa
