#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hipa/checkpoint.hpp"
#include "hipa/dataset.hpp"
#include "hipa/model.hpp"
#include "hipa/optim.hpp"

namespace hipa {

struct StepLog {
    std::uint64_t step = 0;
    double loss = 0.0;
    double seconds = 0.0;
};

struct TrainOptions {
    std::uint64_t steps = 0;  // absolute step count to reach
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    /// Learning rate as a function of the 1-based step; empty means constant.
    std::function<double(std::uint64_t)> lr_schedule;
    /// Stop early after this many steps of this invocation (simulated interruption).
    std::optional<std::uint64_t> stop_after;
    bool verbose = false;
};

struct TrainResult {
    Checkpoint final;
    std::vector<StepLog> log;
};

inline std::string train_log_csv(const std::vector<StepLog>& log) {
    std::ostringstream os;
    os << "step,loss,seconds\n";
    os.precision(std::numeric_limits<double>::max_digits10);
    for (const auto& r : log) os << r.step << ',' << r.loss << ',' << r.seconds << '\n';
    return os.str();
}

inline std::vector<StepLog> read_train_log(const std::filesystem::path& path) {
    std::vector<StepLog> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        StepLog r;
        char comma = 0;
        if (ss >> r.step >> comma >> r.loss >> comma >> r.seconds) out.push_back(r);
    }
    return out;
}

/// Draws one training batch: image index, crop window and dihedral transform per slot.
inline Batch sample_batch(const std::vector<ImagePair>& data, const HipaConfig& cfg, Rng& rng) {
    std::vector<ImagePair> pairs;
    pairs.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
        const auto& src = data[static_cast<std::size_t>(rng.below(data.size()))];
        pairs.push_back(augment(sample_crop(src, cfg.lr_crop, rng), rng));
    }
    return stack_pairs(pairs);
}

/// Optimizes the hierarchical loss with Adam. The data stream is derived from
/// the config seed, so (config, dataset) fixes the whole trajectory.
inline TrainResult train(const HipaConfig& cfg, const std::vector<ImagePair>& data, const TrainOptions& opt) {
    if (data.empty()) throw DataError("training set is empty");
    cfg.validate();
    for (const auto& p : data)
        if (p.scale != cfg.scale) throw DataError(p.id + ": dataset scale differs from model scale");
    if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

    std::optional<HipaModel<float>> model;
    AdamState<float> adam;
    Rng rng;
    std::uint64_t step = 0;
    std::vector<StepLog> log;
    if (opt.resume) {
        Checkpoint c = load_checkpoint(*opt.resume);
        require_same_config(cfg, c.config);
        model.emplace(model_from_checkpoint(c));
        adam = std::move(c.adam);
        rng = Rng::from_state(c.rng);
        step = c.step;
        if (!opt.out_dir.empty())
            for (const auto& r : read_train_log(opt.out_dir / "train_log.csv"))
                if (r.step <= step) log.push_back(r);
    } else {
        model.emplace(cfg);
        adam = AdamState<float>(model->params(), cfg.lr);
        rng = Rng(cfg.seed).split(1);
    }
    auto& params = model->params();

    auto persist = [&](const std::string& name) {
        if (opt.out_dir.empty()) return;
        save_checkpoint(make_checkpoint(*model, adam, step, rng), opt.out_dir / name);
        detail::write_text_atomically(opt.out_dir / "train_log.csv", train_log_csv(log));
    };

    std::uint64_t ran = 0;
    while (step < opt.steps) {
        if (opt.stop_after && ran >= *opt.stop_after) break;
        const auto t0 = std::chrono::steady_clock::now();
        const Batch batch = sample_batch(data, cfg, rng);
        adam.lr = opt.lr_schedule ? opt.lr_schedule(step + 1) : cfg.lr;

        params.zero_grad();
        double loss_value = 0.0;
        {
            TapeScope<float> scope;
            const auto preds = model->forward(batch.lr);
            const Tensor<float> loss = model->loss(preds, batch.hr);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                if (!opt.out_dir.empty()) {
                    std::ostringstream dump;
                    dump << "step " << step + 1 << "\nloss " << loss_value << "\nbatch";
                    for (const auto& id : batch.ids) dump << ' ' << id;
                    dump << '\n';
                    detail::write_text_atomically(opt.out_dir / "nan_dump.txt", dump.str());
                }
                std::string ids;
                for (const auto& id : batch.ids) ids += (ids.empty() ? "" : " ") + id;
                throw NanLoss("non-finite loss at step " + std::to_string(step + 1), static_cast<long>(step + 1), ids);
            }
            backward(loss);
        }
        adam_step(params, adam);
        params.zero_grad();
        ++step;
        ++ran;

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back({step, loss_value, secs});
        if (opt.verbose && (step % 50 == 0 || step == 1))
            std::cerr << "step " << step << " loss " << loss_value << " (" << secs << " s)\n";
        if (step % static_cast<std::uint64_t>(cfg.ckpt_every) == 0) persist("ckpt_" + std::to_string(step) + ".bin");
    }
    if (step >= opt.steps) persist("ckpt_final.bin");
    else if (!opt.out_dir.empty())
        detail::write_text_atomically(opt.out_dir / "train_log.csv", train_log_csv(log));

    return {make_checkpoint(*model, adam, step, rng), std::move(log)};
}

/// Mean of `loss` over the `window` steps ending at `step` (1-based).
inline double moving_average(const std::vector<StepLog>& log, std::uint64_t step, std::uint64_t window) {
    double total = 0.0;
    std::uint64_t n = 0;
    for (const auto& r : log)
        if (r.step <= step && r.step + window > step) {
            total += r.loss;
            ++n;
        }
    return n ? total / static_cast<double>(n) : std::nan("");
}

} // namespace hipa
