#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hipa/synthetic.hpp"
#include "hipa/trainer.hpp"

using namespace hipa;
namespace fs = std::filesystem;

namespace {

HipaConfig desk() { return HipaConfig::load(std::string(HIPA_SOURCE_DIR) + "/configs/desk.cfg"); }

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "hipa_test_trainer" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<ImagePair> toy(int n = 4) { return synthetic_dataset(n, 32, 2, 0); }

} // namespace

TEST(Adam, FirstStepClosedForm) {
    ParamStore<float> store;
    Tensor<float> theta = store.add("theta", Tensor<float>::zeros({1}));
    AdamState<float> adam(store, 1e-4);
    {
        TapeScope<float> scope;
        backward(sum(theta));
    }
    adam_step(store, adam);
    // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(theta[0], -1e-4 / (1.0 + 1e-8), 1e-10);
    EXPECT_EQ(adam.t, 1u);
}

TEST(Adam, ZeroGradientAndMissingGradient) {
    ParamStore<float> store;
    Tensor<float> theta = store.add("theta", Tensor<float>::from({0.5f, -2.0f}));
    AdamState<float> adam(store, 1e-3);
    EXPECT_THROW(adam_step(store, adam), MissingGrad);
    EXPECT_EQ(adam.t, 0u);
    {
        TapeScope<float> scope;
        backward(scale(sum(theta), 0.0f));
    }
    adam_step(store, adam);
    EXPECT_EQ(theta.values(), (std::vector<float>{0.5f, -2.0f}));
    EXPECT_EQ(adam.t, 1u);

    ParamStore<float> other;
    other.add("other", Tensor<float>::zeros({2}));
    EXPECT_THROW(adam_step(other, adam), ShapeMismatch);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    HipaConfig cfg = desk();
    const auto r = train(cfg, toy(), {.steps = 3});
    const std::string bytes = serialize_checkpoint(r.final);
    const Checkpoint back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.config, cfg);
    EXPECT_EQ(back.step, 3u);
    EXPECT_EQ(back.adam.t, 3u);
    EXPECT_EQ(back.rng, r.final.rng);
    ASSERT_EQ(back.params.size(), r.final.params.size());
    for (std::size_t i = 0; i < back.params.size(); ++i) {
        EXPECT_EQ(back.params[i].first, r.final.params[i].first);
        EXPECT_EQ(back.params[i].second.values(), r.final.params[i].second.values());
        EXPECT_EQ(back.adam.m[i].values(), r.final.adam.m[i].values());
        EXPECT_EQ(back.adam.v[i].values(), r.final.adam.v[i].values());
    }

    const auto path = fresh_dir("roundtrip") / "c.bin";
    save_checkpoint(r.final, path);
    EXPECT_EQ(read_bytes(path), bytes);
    EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);
}

TEST(Checkpoint, RejectsDamagedFiles) {
    const auto r = train(desk(), toy(), {.steps = 1});
    const std::string bytes = serialize_checkpoint(r.final);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, cut)), CorruptCheckpoint) << cut;
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(magic), CorruptCheckpoint);
    std::string version = bytes;
    version[4] = 2;
    EXPECT_THROW(deserialize_checkpoint(version), CorruptCheckpoint);
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), CorruptCheckpoint);
    EXPECT_THROW(load_checkpoint(fresh_dir("missing") / "none.bin"), DataError);
}

TEST(Checkpoint, ConfigMismatch) {
    const HipaConfig cfg = desk();
    HipaConfig wider = cfg;
    wider.channels = 12;
    HipaConfig reseeded = cfg;
    reseeded.seed = 9;
    EXPECT_THROW(require_same_config(wider, cfg), ConfigMismatch);
    EXPECT_THROW(require_same_config(reseeded, cfg), ConfigMismatch);
    EXPECT_NO_THROW(require_same_config(reseeded, cfg, true));
    EXPECT_THROW(require_same_config(wider, cfg, true), ConfigMismatch);

    const auto dir = fresh_dir("mismatch");
    train(cfg, toy(), {.steps = 2, .out_dir = dir});
    TrainOptions resume{.steps = 4, .out_dir = dir, .resume = dir / "ckpt_final.bin"};
    EXPECT_THROW(train(wider, toy(), resume), ConfigMismatch);
}

TEST(Train, DeterministicForSameSeed) {
    const auto a = train(desk(), toy(), {.steps = 10});
    const auto b = train(desk(), toy(), {.steps = 10});
    EXPECT_EQ(serialize_checkpoint(a.final), serialize_checkpoint(b.final));
    HipaConfig other = desk();
    other.seed = 1;
    EXPECT_NE(serialize_checkpoint(a.final), serialize_checkpoint(train(other, toy(), {.steps = 10}).final));
}

TEST(Train, LossFallsOverTwoHundredSteps) {
    const auto r = train(desk(), toy(4), {.steps = 200});
    ASSERT_EQ(r.log.size(), 200u);
    for (const auto& row : r.log) ASSERT_TRUE(std::isfinite(row.loss));
    EXPECT_LT(moving_average(r.log, 200, 50), moving_average(r.log, 50, 50));
}

TEST(Train, ResumeReproducesUninterruptedRun) {
    HipaConfig cfg = desk();
    cfg.ckpt_every = 10;
    const auto full_dir = fresh_dir("full"), cut_dir = fresh_dir("cut");
    const auto full = train(cfg, toy(), {.steps = 30, .out_dir = full_dir});

    // Interrupted after 17 steps; the last checkpoint is step 10.
    train(cfg, toy(), {.steps = 30, .out_dir = cut_dir, .stop_after = 17});
    EXPECT_FALSE(fs::exists(cut_dir / "ckpt_final.bin"));
    EXPECT_EQ(read_train_log(cut_dir / "train_log.csv").size(), 17u);
    const auto resumed = train(cfg, toy(), {.steps = 30, .out_dir = cut_dir, .resume = cut_dir / "ckpt_10.bin"});

    EXPECT_EQ(read_bytes(cut_dir / "ckpt_final.bin"), read_bytes(full_dir / "ckpt_final.bin"));
    EXPECT_EQ(serialize_checkpoint(resumed.final), serialize_checkpoint(full.final));
    const auto log = read_train_log(cut_dir / "train_log.csv");
    ASSERT_EQ(log.size(), 30u);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(log[i].step, i + 1);
        EXPECT_EQ(log[i].loss, full.log[i].loss);
    }
}

TEST(Train, FinalOnlyWeightsLeaveEarlierHeadsUntouched) {
    HipaConfig cfg = desk();
    cfg.loss_weights = {0.0, 0.0, 1.0};
    const HipaModel<float> before(cfg);
    const auto r = train(cfg, toy(), {.steps = 5});
    int heads = 0, moved = 0;
    for (const auto& [name, t] : r.final.params) {
        const bool early_head = name.rfind("stage1.head.", 0) == 0 || name.rfind("stage2.head.", 0) == 0;
        const bool same = t.values() == before.params().at(name).values();
        if (early_head) {
            ++heads;
            EXPECT_TRUE(same) << name;
        } else if (!same) {
            ++moved;
        }
    }
    EXPECT_GT(heads, 0);
    EXPECT_GT(moved, 0);
}

TEST(Train, ScheduleHookControlsLearningRate) {
    const HipaModel<float> before(desk());
    TrainOptions frozen{.steps = 3};
    frozen.lr_schedule = [](std::uint64_t) { return 0.0; };
    const auto r = train(desk(), toy(), frozen);
    for (const auto& [name, t] : r.final.params) EXPECT_EQ(t.values(), before.params().at(name).values()) << name;
    EXPECT_EQ(r.final.adam.t, 3u);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
    auto data = toy(2);
    for (auto& p : data) std::fill(p.lr.data().begin(), p.lr.data().end(), std::numeric_limits<float>::quiet_NaN());
    const auto dir = fresh_dir("nan");
    try {
        train(desk(), data, {.steps = 5, .out_dir = dir});
        FAIL() << "expected NanLoss";
    } catch (const NanLoss& e) {
        EXPECT_EQ(e.step(), 1);
        EXPECT_NE(e.batch_ids().find("toy"), std::string::npos);
    }
    const std::string dump = read_bytes(dir / "nan_dump.txt");
    EXPECT_NE(dump.find("step 1"), std::string::npos);
    EXPECT_NE(dump.find("toy"), std::string::npos);
}

TEST(Train, RejectsBadInputs) {
    EXPECT_THROW(train(desk(), {}, {.steps = 1}), DataError);
    EXPECT_THROW(train(desk(), synthetic_dataset(1, 32, 3, 0), {.steps = 1}), DataError);
    EXPECT_THROW(train(desk(), synthetic_dataset(1, 16, 2, 0), {.steps = 1}), TooSmall);
}
