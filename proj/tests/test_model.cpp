#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "hipa/model.hpp"

using namespace hipa;
using gradcheck::random_tensor;

namespace {

HipaConfig desk() { return HipaConfig::load(std::string(HIPA_SOURCE_DIR) + "/configs/desk.cfg"); }

template <class T>
void zero_conv(Conv2d<T>& c) {
    std::fill(c.weight.data().begin(), c.weight.data().end(), T(0));
    std::fill(c.bias.data().begin(), c.bias.data().end(), T(0));
}

Tensor<float> random_image(Shape s, Rng& rng) {
    Tensor<float> t(std::move(s));
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(0, 1));
    return t;
}

} // namespace

TEST(Split, QuadrantOrderOnRamp) {
    Tensor<float> x(Shape{1, 1, 4, 4});
    for (Index i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
    const auto q = split_image(x);
    EXPECT_EQ(q[0].values(), (std::vector<float>{0, 1, 4, 5}));
    EXPECT_EQ(q[1].values(), (std::vector<float>{2, 3, 6, 7}));
    EXPECT_EQ(q[2].values(), (std::vector<float>{8, 9, 12, 13}));
    EXPECT_EQ(q[3].values(), (std::vector<float>{10, 11, 14, 15}));

    const auto left = merge_vertical(q[0], q[2]);
    EXPECT_EQ(left.values(), split_halves(x)[0].values());
    EXPECT_EQ(merge_horizontal(left, merge_vertical(q[1], q[3])).values(), x.values());

    const auto flat = split_image(Tensor<float>(Shape{2, 3, 6, 8}, 0.3f));
    for (const auto& part : flat) {
        EXPECT_EQ(part.shape(), (Shape{2, 3, 3, 4}));
        for (float v : part.data()) EXPECT_EQ(v, 0.3f);
    }
    EXPECT_THROW(split_image(Tensor<float>(Shape{1, 1, 5, 4})), NotDivisible);
    EXPECT_THROW(split_halves(Tensor<float>(Shape{1, 1, 4, 3})), NotDivisible);
    EXPECT_THROW(merge_vertical(q[0], Tensor<float>(Shape{1, 1, 2, 3})), ShapeMismatch);
}

TEST(Split, RoundTripForRandomEvenExtents) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Index h = 2 * (1 + static_cast<Index>(rng.below(8))), w = 2 * (1 + static_cast<Index>(rng.below(8)));
        const auto x = random_image({2, 3, h, w}, rng);
        const auto q = split_image(x);
        const auto back = merge_horizontal(merge_vertical(q[0], q[2]), merge_vertical(q[1], q[3]));
        EXPECT_EQ(back.values(), x.values());
        const auto halves = split_halves(x);
        EXPECT_EQ(merge_horizontal(halves[0], halves[1]).values(), x.values());
    }
}

TEST(Split, GradientsRouteToSourceRegions) {
    Tensor<double> x(Shape{1, 1, 2, 2});
    for (Index i = 0; i < 4; ++i) x[i] = 1.0 + static_cast<double>(i);
    x.set_requires_grad(true);
    TapeScope<double> scope;
    const auto q = split_image(x);
    // Weight each quadrant differently so a misrouted gradient shows up.
    backward(add(add(sum(q[0]), scale(sum(q[1]), 2.0)), add(scale(sum(q[2]), 3.0), scale(sum(q[3]), 4.0))));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Model, ShapeLawOverRandomValidExtents) {
    Rng rng(2);
    for (int scale : {2, 3, 4}) {
        HipaConfig cfg = desk();
        cfg.scale = scale;
        HipaModel<float> model(cfg);
        const Index g = cfg.granularity();
        for (int trial = 0; trial < 8; ++trial) {
            const Index h = g * (1 + static_cast<Index>(rng.below(3))), w = g * (1 + static_cast<Index>(rng.below(3)));
            const auto preds = model.forward(random_image({1, 3, h, w}, rng));
            for (std::size_t k = 0; k < 3; ++k) {
                EXPECT_EQ(preds[k].shape(), (Shape{1, 3, scale * h, scale * w}));
                EXPECT_TRUE(all_finite(preds[k]));
            }
        }
        EXPECT_THROW(model.forward(random_image({1, 3, g + 1, g}, rng)), NotDivisible);
    }
}

TEST(Model, ShallowFeatureAndFusion) {
    HipaModel<float> model(desk());
    Rng rng(3);
    const Index C = model.config().channels;
    EXPECT_EQ(model.shallow_feature(model.stage1, random_image({2, 3, 4, 4}, rng)).shape(), (Shape{2, C, 4, 4}));
    zero_conv(model.stage1.shallow);
    const auto zero = model.shallow_feature(model.stage1, Tensor<float>(Shape{1, 3, 4, 4}));
    for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(model.shallow_feature(model.stage1, random_image({1, 4, 4, 4}, rng)), ShapeMismatch);

    const auto s = random_image({1, C, 4, 4}, rng), c = random_image({1, C, 4, 4}, rng);
    auto& fuse = *model.stage2.fuse;
    zero_conv(fuse);
    for (Index k = 0; k < C; ++k) fuse.weight.at(k, k, 0, 0) = 1.0f;
    EXPECT_EQ(model.fuse_cross_stage(model.stage2, s, c).values(), s.values());
    zero_conv(fuse);
    for (Index k = 0; k < C; ++k) fuse.weight.at(k, C + k, 0, 0) = 1.0f;
    EXPECT_EQ(model.fuse_cross_stage(model.stage2, s, c).values(), c.values());
    EXPECT_THROW(model.fuse_cross_stage(model.stage2, s, random_image({1, C, 4, 8}, rng)), ShapeMismatch);
}

TEST(Model, ZeroedTrunksCarryMergedShallowFeatures) {
    HipaConfig cfg = desk();
    cfg.layers = 0;
    cfg.ape_mode = ApeMode::none;
    HipaModel<float> model(cfg);
    zero_conv(model.stage1.trunk.tail);
    Rng rng(4);
    const auto lr = random_image({1, 3, 8, 8}, rng);
    const auto out = model.stage1_forward(lr);
    const auto q = split_image(lr);
    auto sh = [&](const Tensor<float>& t) { return model.shallow_feature(model.stage1, t); };
    // Trunk output is its input, so each vertical merge is twice the merged shallow map.
    const auto left = scale(merge_vertical(sh(q[0]), sh(q[2])), 2.0f);
    const auto right = scale(merge_vertical(sh(q[1]), sh(q[3])), 2.0f);
    const auto& carried_left = out.carry.at("left");
    for (Index i = 0; i < left.numel(); ++i) EXPECT_FLOAT_EQ(carried_left[i], left[i]);
    EXPECT_EQ(out.carry.at("right").values(), right.values());
}

TEST(Model, StressFiniteOverRandomInits) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        HipaConfig cfg = desk();
        cfg.seed = seed;
        HipaModel<float> model(cfg);
        Rng rng(seed + 1000);
        const auto preds = model.forward(random_image({1, 3, 8, 8}, rng));
        for (std::size_t k = 0; k < 3; ++k) ASSERT_TRUE(all_finite(preds[k])) << "seed " << seed;
    }
}

TEST(Model, FixedHierarchyReplicatesOnePrediction) {
    HipaConfig cfg = desk();
    cfg.hierarchy = Hierarchy::fixed;
    HipaModel<float> model(cfg);
    Rng rng(5);
    const auto preds = model.forward(random_image({1, 3, 8, 16}, rng));
    EXPECT_EQ(preds.stage1.values(), preds.final.values());
    EXPECT_EQ(preds.stage2.values(), preds.final.values());
    EXPECT_EQ(preds.final.shape(), (Shape{1, 3, 16, 32}));
    for (const auto& name : model.params().names()) EXPECT_EQ(name.rfind("fixed.", 0), 0u) << name;
}

TEST(Model, InferenceOnArbitrarySizes) {
    HipaModel<float> model(desk());
    Rng rng(6);
    const auto out = model.infer(random_image({1, 3, 17, 23}, rng));
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(out[k].shape(), (Shape{1, 3, 34, 46}));
        for (float v : out[k].data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
    // A valid extent is not padded: inference equals the clamped forward pass.
    const auto lr = random_image({1, 3, 8, 8}, rng);
    const auto direct = clamp_values(model.forward(lr).final, 0.0f, 1.0f);
    EXPECT_EQ(model.infer(lr).final.values(), direct.values());
}

TEST(Model, DeterministicForSameSeed) {
    Rng rng(7);
    const auto lr = random_image({2, 3, 8, 8}, rng);
    const auto gt = random_image({2, 3, 16, 16}, rng);
    auto run = [&] {
        HipaModel<float> model(desk());
        TapeScope<float> scope;
        const auto preds = model.forward(lr);
        const auto loss = model.loss(preds, gt);
        backward(loss);
        std::vector<float> out = preds.final.values();
        out.push_back(loss.item());
        for (auto& [name, p] : model.params()) out.insert(out.end(), p.grad().begin(), p.grad().end());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Loss, Examples) {
    HipaModel<float> model(desk());
    Tensor<float> gt(Shape{1, 3, 4, 4}, 0.5f);
    EXPECT_EQ(model.loss({gt, gt, gt}, gt).item(), 0.0f);
    const Tensor<float> off = add_scalar(gt, 0.1f);
    EXPECT_NEAR(model.loss({gt, off, gt}, gt).item(), 0.1f, 1e-6f);

    HipaConfig last_only = desk();
    last_only.loss_weights = {0.0, 0.0, 1.0};
    HipaModel<float> m3(last_only);
    const Tensor<float> far = add_scalar(gt, 0.4f);
    EXPECT_NEAR(m3.loss({far, far, off}, gt).item(), 0.1f, 1e-6f);
    EXPECT_THROW(model.loss({gt, gt, Tensor<float>(Shape{1, 3, 4, 2})}, gt), ShapeMismatch);
}

TEST(Loss, EveryTermReachesStageOneParameters) {
    Rng rng(8);
    const auto lr = random_image({1, 3, 8, 8}, rng);
    const auto gt = random_image({1, 3, 16, 16}, rng);
    for (std::size_t k = 0; k < 3; ++k) {
        HipaConfig cfg = desk();
        cfg.loss_weights = {0.0, 0.0, 0.0};
        cfg.loss_weights[k] = 1.0;
        HipaModel<float> m(cfg);
        {
            TapeScope<float> scope;
            backward(m.loss(m.forward(lr), gt));
        }
        const auto& w = m.params().at("stage1.shallow.weight");
        ASSERT_TRUE(w.has_grad());
        double norm = 0.0;
        for (float g : w.grad()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0) << "loss term " << k;
    }
}

TEST(Model, ParameterCountLinearInLastStageDepth) {
    auto count = [](int g3) {
        HipaConfig cfg = desk();
        cfg.groups[2] = g3;
        return HipaModel<float>(cfg).params().num_elements();
    };
    const Index c1 = count(1), c2 = count(2), c3 = count(3), c5 = count(5);
    EXPECT_GT(c2, c1);
    EXPECT_EQ(c3 - c2, c2 - c1);
    EXPECT_EQ(c5 - c1, 4 * (c2 - c1));
}
