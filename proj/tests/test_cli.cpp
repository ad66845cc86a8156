#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hipa/image.hpp"
#include "hipa/trainer.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "hipa_test_cli";
const std::string kDesk = std::string(HIPA_SOURCE_DIR) + "/configs/desk.cfg";

struct Run {
    int code = -1;
    std::string err;
};

/// Runs the CLI with `args`, capturing stderr.
Run hipa_cli(const std::string& args) {
    const fs::path err = kRoot / "stderr.txt";
    const std::string cmd = std::string(HIPA_CLI) + " " + args + " >" + (kRoot / "stdout.txt").string() + " 2>" +
                            err.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    r.err.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        ASSERT_EQ(hipa_cli("synth --out " + data_dir().string() + " --count 4 --size 32").code, 0);
        ASSERT_EQ(hipa_cli(train_args("run", 50)).code, 0);
    }

    static fs::path data_dir() { return kRoot / "toy"; }
    static std::string manifest() { return (data_dir() / "manifest.txt").string(); }
    static std::string train_args(const std::string& out, int steps, const std::string& extra = "") {
        return "train --config " + kDesk + " --data " + manifest() + " --steps " + std::to_string(steps) + " --out " +
               (kRoot / out).string() + " " + extra;
    }
    static std::string ckpt() { return (kRoot / "run" / "ckpt_final.bin").string(); }
};

} // namespace

TEST_F(Cli, TrainWritesCheckpointAndLog) {
    EXPECT_TRUE(fs::exists(kRoot / "run" / "ckpt_final.bin"));
    EXPECT_FALSE(fs::exists(kRoot / "run" / "ckpt_50.bin"));  // cadence is 100
    const auto log = lines(kRoot / "run" / "train_log.csv");
    ASSERT_EQ(log.size(), 51u);
    EXPECT_EQ(log[0], "step,loss,seconds");
    EXPECT_EQ(log.back().substr(0, 3), "50,");
}

TEST_F(Cli, MissingConfigIsExitTwoNamingPath) {
    const std::string missing = (kRoot / "nope.cfg").string();
    const auto r = hipa_cli("train --config " + missing + " --data " + manifest() + " --steps 1 --out " +
                            (kRoot / "x").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrorsAreExitTwo) {
    const fs::path bad = kRoot / "typo.cfg";
    std::ofstream(bad) << slurp(kDesk) << "model.chanels = 8\n";
    const auto r = hipa_cli("train --config " + bad.string() + " --data " + manifest() + " --steps 1 --out " +
                            (kRoot / "typo").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("model.chanels"), std::string::npos) << r.err;
    EXPECT_EQ(hipa_cli("train --config " + kDesk).code, 2);
    EXPECT_EQ(hipa_cli("").code, 2);
}

TEST_F(Cli, DataErrorsAreExitThree) {
    const auto r = hipa_cli("train --config " + kDesk + " --data " + (kRoot / "none.txt").string() +
                            " --steps 1 --out " + (kRoot / "nodata").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(hipa_cli("eval --ckpt " + (kRoot / "absent.bin").string() + " --data " + manifest() +
                       " --scale 2 --out " + (kRoot / "e.csv").string())
                  .code,
              3);
    std::ofstream(kRoot / "broken.png") << "garbage";
    EXPECT_EQ(hipa_cli("sr --ckpt " + ckpt() + " --in " + (kRoot / "broken.png").string() + " --out " +
                       (kRoot / "o.png").string())
                  .code,
              3);
}

TEST_F(Cli, SameSeedGivesIdenticalCheckpoints) {
    ASSERT_EQ(hipa_cli(train_args("seed_a", 10, "--seed 7")).code, 0);
    ASSERT_EQ(hipa_cli(train_args("seed_b", 10, "--seed 7")).code, 0);
    EXPECT_EQ(slurp(kRoot / "seed_a" / "ckpt_final.bin"), slurp(kRoot / "seed_b" / "ckpt_final.bin"));
    EXPECT_EQ(hipa::load_checkpoint(kRoot / "seed_a" / "ckpt_final.bin").config.seed, 7u);
}

TEST_F(Cli, EvalReportsEveryImageAndMean) {
    const fs::path out = kRoot / "eval.csv";
    ASSERT_EQ(hipa_cli("eval --ckpt " + ckpt() + " --data " + manifest() + " --scale 2 --out " + out.string()).code, 0);
    const auto rows = lines(out);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0], "id,psnr_db,ssim");
    EXPECT_EQ(rows[1].substr(0, 9), "toy0.png,");
    EXPECT_EQ(rows[5].substr(0, 5), "mean,");

    const fs::path base = kRoot / "bicubic.csv";
    ASSERT_EQ(hipa_cli("eval --baseline bicubic --data " + manifest() + " --scale 2 --out " + base.string()).code, 0);
    const auto brows = lines(base);
    ASSERT_EQ(brows.size(), 6u);
    EXPECT_NE(brows[5], rows[5]);
}

TEST_F(Cli, EvalConfigMismatchIsExitFive) {
    const fs::path other = kRoot / "wide.cfg";
    std::string text = slurp(kDesk);
    text.replace(text.find("model.channels = 8"), 18, "model.channels = 12");
    std::ofstream(other) << text;
    const auto r = hipa_cli("eval --ckpt " + ckpt() + " --config " + other.string() + " --data " + manifest() +
                            " --scale 2 --out " + (kRoot / "m.csv").string());
    EXPECT_EQ(r.code, 5) << r.err;
    EXPECT_EQ(hipa_cli("eval --ckpt " + ckpt() + " --data " + manifest() + " --scale 3 --out " +
                       (kRoot / "m.csv").string())
                  .code,
              5);
    EXPECT_EQ(hipa_cli("train --config " + other.string() + " --data " + manifest() + " --steps 60 --out " +
                       (kRoot / "resume").string() + " --resume " + ckpt())
                  .code,
              5);
}

TEST_F(Cli, SuperResolveAnySizeAndStages) {
    hipa::Image lr(hipa::Shape{3, 17, 23});
    hipa::Rng rng(3);
    for (float& v : lr.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
    const fs::path in = kRoot / "sr" / "in.png";
    fs::create_directories(in.parent_path());
    hipa::save_png(in, lr);
    const fs::path out = kRoot / "sr" / "out.png";
    ASSERT_EQ(hipa_cli("sr --ckpt " + ckpt() + " --in " + in.string() + " --out " + out.string() + " --emit-stages")
                  .code,
              0);
    const auto hr = hipa::load_png(out);
    EXPECT_EQ(hr.shape(), (hipa::Shape{3, 34, 46}));
    hipa::save_png(kRoot / "sr" / "again.png", hr);
    EXPECT_EQ(hipa::load_png(kRoot / "sr" / "again.png").values(), hr.values());
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(kRoot / "sr"))
        if (e.path().filename() != "in.png" && e.path().filename() != "again.png") ++files;
    EXPECT_EQ(files, 3u);
    EXPECT_TRUE(fs::exists(kRoot / "sr" / "out_stage1.png"));
    EXPECT_TRUE(fs::exists(kRoot / "sr" / "out_stage2.png"));
}

TEST_F(Cli, AblateApeSuiteEmitsThreeRowsWithAudit) {
    const fs::path out = kRoot / "ablate";
    ASSERT_EQ(hipa_cli("ablate --suite ape --config " + kDesk + " --data " + manifest() + " --steps 3 --out " +
                       out.string())
                  .code,
              0);
    const auto rows = lines(out / "ape.csv");
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "variant,psnr_db,ssim,params");
    EXPECT_EQ(rows[1].substr(0, 3), "pe,");
    EXPECT_EQ(rows[2].substr(0, 4), "cpe,");
    EXPECT_EQ(rows[3].substr(0, 4), "ape,");
    EXPECT_NE(slurp(out / "ape_audit.txt").find("fairness"), std::string::npos);
    EXPECT_EQ(hipa_cli("ablate --suite nope --config " + kDesk + " --data " + manifest() + " --steps 1 --out " +
                       out.string())
                  .code,
              2);
}

TEST_F(Cli, NanAbortIsExitFour) {
    const fs::path dir = kRoot / "nan";
    fs::create_directories(dir);
    // A config whose learning rate is so large the weights overflow.
    std::string text = slurp(kDesk);
    text.replace(text.find("train.lr = 1e-4"), 15, "train.lr = 1e30");
    std::ofstream(dir / "hot.cfg") << text;
    const auto r = hipa_cli("train --config " + (dir / "hot.cfg").string() + " --data " + manifest() +
                            " --steps 20 --out " + (dir / "run").string());
    EXPECT_EQ(r.code, 4) << r.err;
    EXPECT_TRUE(fs::exists(dir / "run" / "nan_dump.txt"));
}
