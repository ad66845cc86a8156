#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hipa/metrics.hpp"
#include "hipa/trainer.hpp"

namespace hipa {

struct AblationVariant {
    std::string name;
    HipaConfig config;
};

struct AblationRow {
    std::string variant;
    double psnr_db = 0.0;
    double ssim = 0.0;
    Index params = 0;
};

/// Variants of one suite; every variant keeps the base seed and training settings.
inline std::vector<AblationVariant> ablation_variants(const std::string& suite, const HipaConfig& base) {
    std::vector<AblationVariant> out;
    if (suite == "patch") {
        for (auto h : {Hierarchy::variable, Hierarchy::fixed}) {
            HipaConfig c = base;
            c.hierarchy = h;
            out.push_back({to_string(h), c});
        }
    } else if (suite == "ape") {
        for (auto m : {ApeMode::pe, ApeMode::cpe, ApeMode::ape}) {
            HipaConfig c = base;
            c.ape_mode = m;
            out.push_back({to_string(m), c});
        }
    } else if (suite == "mrfag") {
        // Branches 1, 2, 3 have receptive fields 1, 3, 5.
        const std::vector<std::vector<int>> subsets{{1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}};
        for (std::size_t i = 0; i < subsets.size(); ++i) {
            HipaConfig c = base;
            c.branches = subsets[i];
            out.push_back({"mod" + std::to_string(i), c});
        }
    } else {
        throw ConfigError("unknown ablation suite '" + suite + "' (expected patch, ape or mrfag)");
    }
    for (auto& v : out) v.config.validate();
    return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,psnr_db,ssim,params\n";
    for (const auto& r : rows)
        out += r.variant + "," + format_metric(r.psnr_db) + "," + format_metric(r.ssim) + "," + std::to_string(r.params) + "\n";
    return out;
}

/// Trains and scores each variant on the training set under the same seed and data.
/// Writes `<suite>.csv`, `<suite>_audit.txt` and one subdirectory per variant.
inline std::vector<AblationRow> run_ablation(const std::string& suite, const HipaConfig& base,
                                             const std::vector<ImagePair>& data, std::uint64_t steps,
                                             const std::filesystem::path& out_dir, bool verbose = false) {
    const auto variants = ablation_variants(suite, base);
    std::filesystem::create_directories(out_dir);
    std::ostringstream audit;
    audit << "suite " << suite << "\nsteps " << steps << "\nimages";
    for (const auto& p : data) audit << ' ' << p.id;
    audit << '\n';
    for (const auto& v : variants)
        if (v.config.seed != base.seed || v.config.lr != base.lr || v.config.batch != base.batch ||
            v.config.lr_crop != base.lr_crop || v.config.loss_weights != base.loss_weights)
            throw ConfigError("ablation variant " + v.name + " differs from the base in training settings");
    audit << "fairness: every variant uses seed " << base.seed << ", the same training settings and the same images\n";

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        audit << "variant " << v.name << " seed " << v.config.seed << " lr " << v.config.lr << " batch "
              << v.config.batch << " lr_crop " << v.config.lr_crop << '\n';
        std::cerr << "ablation " << suite << ": " << v.name << " (seed " << v.config.seed << ")\n";
        TrainOptions opt;
        opt.steps = steps;
        opt.out_dir = out_dir / v.name;
        opt.verbose = verbose;
        const TrainResult r = train(v.config, data, opt);
        const HipaModel<float> model = model_from_checkpoint(r.final);
        const EvalReport rep = evaluate(model_predictor(model), data, v.config.scale);
        rows.push_back({v.name, rep.mean_psnr, rep.mean_ssim, model.params().num_elements()});
    }
    detail::write_text_atomically(out_dir / (suite + ".csv"), ablation_csv(rows));
    detail::write_text_atomically(out_dir / (suite + "_audit.txt"), audit.str());
    return rows;
}

} // namespace hipa
