#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hipa/ablation.hpp"
#include "hipa/checkpoint.hpp"
#include "hipa/dataset.hpp"
#include "hipa/metrics.hpp"
#include "hipa/parallel.hpp"
#include "hipa/synthetic.hpp"
#include "hipa/trainer.hpp"

namespace fs = std::filesystem;
using namespace hipa;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, data_error = 3, nan_abort = 4, config_mismatch = 5 };

HipaConfig read_config(const std::string& path, std::optional<std::uint64_t> seed) {
    if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path);
    HipaConfig cfg = HipaConfig::load(path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

std::vector<ImagePair> read_data(const std::string& manifest, int scale) {
    return load_dataset(load_manifest(manifest, scale));
}

struct TrainArgs {
    std::string config, data, out, resume;
    std::uint64_t steps = 0;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
    const HipaConfig cfg = read_config(a.config, a.seed);
    const auto data = read_data(a.data, cfg.scale);
    TrainOptions opt;
    opt.steps = a.steps;
    opt.out_dir = a.out;
    opt.verbose = true;
    if (!a.resume.empty()) {
        if (!fs::is_regular_file(a.resume)) throw DataError("checkpoint not found: " + a.resume);
        opt.resume = a.resume;
    }
    const auto r = train(cfg, data, opt);
    std::cerr << "trained to step " << r.final.step << "; wrote " << (fs::path(a.out) / "ckpt_final.bin").string() << '\n';
    return ok;
}

struct EvalArgs {
    std::string ckpt, data, out, baseline, config;
    int scale = 0;
};

int cmd_eval(const EvalArgs& a) {
    EvalReport rep;
    if (a.baseline == "bicubic") {
        if (a.scale < 1) throw ConfigError("--scale is required for the bicubic baseline");
        rep = evaluate(bicubic_predictor(a.scale), read_data(a.data, a.scale), a.scale);
    } else {
        if (!a.baseline.empty()) throw ConfigError("unknown baseline '" + a.baseline + "'");
        if (a.ckpt.empty()) throw ConfigError("--ckpt is required unless --baseline is given");
        if (!fs::is_regular_file(a.ckpt)) throw DataError("checkpoint not found: " + a.ckpt);
        const Checkpoint c = load_checkpoint(a.ckpt);
        if (!a.config.empty()) require_same_config(read_config(a.config, std::nullopt), c.config, true);
        const int scale = a.scale ? a.scale : c.config.scale;
        if (scale != c.config.scale)
            throw ConfigMismatch("--scale " + std::to_string(scale) + " but the checkpoint model is x" +
                                 std::to_string(c.config.scale));
        const HipaModel<float> model = model_from_checkpoint(c);
        rep = evaluate(model_predictor(model), read_data(a.data, scale), scale);
    }
    write_report_csv(a.out, rep);
    std::printf("mean PSNR %s dB, mean SSIM %s over %zu images\n", format_metric(rep.mean_psnr).c_str(),
                format_metric(rep.mean_ssim).c_str(), rep.rows.size());
    return ok;
}

struct SrArgs {
    std::string ckpt, in, out;
    bool emit_stages = false;
};

int cmd_sr(const SrArgs& a) {
    if (!fs::is_regular_file(a.ckpt)) throw DataError("checkpoint not found: " + a.ckpt);
    const HipaModel<float> model = model_from_checkpoint(load_checkpoint(a.ckpt));
    Image lr;
    try {
        lr = load_png(a.in);
    } catch (const Error& e) {
        throw DataError(e.what());
    }
    const auto preds = model.infer(reshape(lr, Shape{1, 3, lr.dim(1), lr.dim(2)}));
    auto to_image = [](const Tensor<float>& t) { return reshape(t, Shape{3, t.dim(2), t.dim(3)}); };
    save_png(a.out, to_image(preds.final));
    if (a.emit_stages) {
        const fs::path out(a.out);
        const fs::path stem = out.parent_path() / out.stem();
        save_png(stem.string() + "_stage1.png", to_image(preds.stage1));
        save_png(stem.string() + "_stage2.png", to_image(preds.stage2));
    }
    return ok;
}

struct AblateArgs {
    std::string suite, config, data, out;
    std::uint64_t steps = 0;
    std::optional<std::uint64_t> seed;
};

int cmd_ablate(const AblateArgs& a) {
    const HipaConfig cfg = read_config(a.config, a.seed);
    ablation_variants(a.suite, cfg);  // reject an unknown suite before loading data
    const auto rows = run_ablation(a.suite, cfg, read_data(a.data, cfg.scale), a.steps, a.out, true);
    for (const auto& r : rows)
        std::printf("%-9s %s dB  ssim %s  params %lld\n", r.variant.c_str(), format_metric(r.psnr_db).c_str(),
                    format_metric(r.ssim).c_str(), static_cast<long long>(r.params));
    return ok;
}

struct SynthArgs {
    std::string out;
    int count = 8;
    int size = 64;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    fs::create_directories(a.out);
    std::string manifest;
    const auto imgs = synthetic_images(a.count, a.size, a.seed);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        const std::string name = "toy" + std::to_string(i) + ".png";
        save_png(fs::path(a.out) / name, imgs[i]);
        manifest += name + "\n";
    }
    detail::write_text_atomically(fs::path(a.out) / "manifest.txt", manifest);
    return ok;
}

template <class Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const NanLoss& e) {
        std::cerr << "error: " << e.what() << " (batch: " << e.batch_ids() << ")\n";
        return nan_abort;
    } catch (const ConfigMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return config_mismatch;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const InvalidHyperparam& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NotDivisible& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const UnsupportedScale& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const Error& e) {
        // Data, decode, size and checkpoint problems.
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
}

} // namespace

int main(int argc, char** argv) {
    configure_threads_from_env();
    CLI::App app{"Hierarchical-patch transformer for single image super-resolution"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", ta.config, "Config file")->required();
    train_cmd->add_option("--data", ta.data, "Manifest of HR training images")->required();
    train_cmd->add_option("--steps", ta.steps, "Total optimizer steps")->required();
    train_cmd->add_option("--out", ta.out, "Output directory")->required();
    train_cmd->add_option("--seed", ta.seed, "Override train.seed");
    train_cmd->add_option("--resume", ta.resume, "Checkpoint to continue from");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint or baseline (Y-channel PSNR/SSIM)");
    eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint");
    eval_cmd->add_option("--data", ea.data, "Manifest of HR evaluation images")->required();
    eval_cmd->add_option("--scale", ea.scale, "Upscaling factor");
    eval_cmd->add_option("--out", ea.out, "CSV report path")->required();
    eval_cmd->add_option("--baseline", ea.baseline, "Evaluate a baseline instead of a model")
        ->check(CLI::IsMember({"bicubic"}));
    eval_cmd->add_option("--config", ea.config, "Expected model config");

    SrArgs sa;
    auto* sr_cmd = app.add_subcommand("sr", "Super-resolve one PNG");
    sr_cmd->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
    sr_cmd->add_option("--in", sa.in, "Input PNG")->required();
    sr_cmd->add_option("--out", sa.out, "Output PNG")->required();
    sr_cmd->add_flag("--emit-stages", sa.emit_stages, "Also write stage-1 and stage-2 predictions");

    AblateArgs aa;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare the variants of an ablation suite");
    ablate_cmd->add_option("--suite", aa.suite, "patch, ape or mrfag")->required();
    ablate_cmd->add_option("--config", aa.config, "Base config")->required();
    ablate_cmd->add_option("--data", aa.data, "Manifest of HR training images")->required();
    ablate_cmd->add_option("--steps", aa.steps, "Steps per variant")->required();
    ablate_cmd->add_option("--out", aa.out, "Output directory")->required();
    ablate_cmd->add_option("--seed", aa.seed, "Override train.seed");

    SynthArgs ya;
    auto* synth_cmd = app.add_subcommand("synth", "Write the structured toy image set and its manifest");
    synth_cmd->add_option("--out", ya.out, "Output directory")->required();
    synth_cmd->add_option("--count", ya.count, "Number of images");
    synth_cmd->add_option("--size", ya.size, "Image side in pixels");
    synth_cmd->add_option("--seed", ya.seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    if (*train_cmd) return guarded([&] { return cmd_train(ta); });
    if (*eval_cmd) return guarded([&] { return cmd_eval(ea); });
    if (*sr_cmd) return guarded([&] { return cmd_sr(sa); });
    if (*ablate_cmd) return guarded([&] { return cmd_ablate(aa); });
    return guarded([&] { return cmd_synth(ya); });
}
