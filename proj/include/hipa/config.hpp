#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hipa/error.hpp"
#include "hipa/layers.hpp"
#include "hipa/util.hpp"

namespace hipa {

enum class Hierarchy { variable, fixed };

inline const char* to_string(Hierarchy h) { return h == Hierarchy::variable ? "variable" : "fixed"; }

/// Architecture and training hyperparameters. Defaults are the full-size model.
struct HipaConfig {
    int scale = 2;
    int channels = 64;
    std::array<int, 3> groups{5, 5, 20};  // MRFAMs per stage
    int res_blocks = 5;
    int patch_size = 4;
    int heads = 4;
    int layers = 4;
    ApeMode ape_mode = ApeMode::ape;
    Hierarchy hierarchy = Hierarchy::variable;
    std::vector<int> branches{1, 2, 3};
    int ca_channels = 4;
    int mlp_ratio = 2;
    int ape_reduction = 4;
    std::array<double, 3> loss_weights{1.0, 1.0, 1.0};
    std::uint64_t seed = 0;

    double lr = 1e-4;
    int batch = 4;
    int lr_crop = 48;
    int ckpt_every = 100;

    LayerSpec layer_spec() const {
        LayerSpec s;
        s.channels = channels;
        s.ca_channels = ca_channels;
        s.res_blocks = res_blocks;
        s.branches = branches;
        s.patch = patch_size;
        s.heads = heads;
        s.layers = layers;
        s.mlp_ratio = mlp_ratio;
        s.ape_reduction = ape_reduction;
        return s;
    }

    /// Input extents must be multiples of this for the hierarchical split.
    int granularity() const { return 2 * patch_size; }

    void validate() const {
        if (scale != 2 && scale != 3 && scale != 4)
            throw UnsupportedScale("scale must be 2, 3 or 4, got " + std::to_string(scale));
        for (int g : groups)
            if (g < 1) throw InvalidHyperparam("every stage needs G >= 1");
        if (res_blocks < 1) throw InvalidHyperparam("M must be >= 1");
        layer_spec().validate();
        for (std::size_t i = 0; i < branches.size(); ++i)
            for (std::size_t j = i + 1; j < branches.size(); ++j)
                if (branches[i] == branches[j]) throw InvalidHyperparam("duplicate branch id");
        for (double w : loss_weights)
            if (!(w >= 0.0)) throw InvalidHyperparam("loss weights must be non-negative");
        if (!(lr > 0.0)) throw InvalidHyperparam("learning rate must be positive");
        if (batch < 1) throw InvalidHyperparam("batch must be >= 1");
        if (lr_crop < 1 || lr_crop % granularity() != 0)
            throw NotDivisible("train.lr_crop (" + std::to_string(lr_crop) + ") must be a multiple of 2*patch_size");
        if (ckpt_every < 1) throw InvalidHyperparam("train.ckpt_every must be >= 1");
    }

    /// Canonical `key = value` text; parse(to_text()) reproduces the config.
    std::string to_text() const;
    static HipaConfig parse(std::string_view text);
    static HipaConfig load(const std::filesystem::path& path);

    friend bool operator==(const HipaConfig&, const HipaConfig&) = default;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class Num>
Num parse_number(const std::string& key, const std::string& v) {
    Num out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("invalid value for " + key + ": '" + v + "'");
    return out;
}

template <class Num>
std::vector<Num> parse_list(const std::string& key, const std::string& v) {
    std::vector<Num> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<Num>(key, trim(item)));
    return out;
}

template <class Num>
std::string join(const std::vector<Num>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<Num>)
            out += format_double(xs[i]);
        else
            out += std::to_string(xs[i]);
    }
    return out;
}

} // namespace detail

inline std::string HipaConfig::to_text() const {
    std::ostringstream os;
    os << "model.scale = " << scale << '\n'
       << "model.channels = " << channels << '\n'
       << "model.groups = " << detail::join(std::vector<int>(groups.begin(), groups.end())) << '\n'
       << "model.res_blocks = " << res_blocks << '\n'
       << "model.patch_size = " << patch_size << '\n'
       << "model.heads = " << heads << '\n'
       << "model.layers = " << layers << '\n'
       << "model.ape_mode = " << to_string(ape_mode) << '\n'
       << "model.hierarchy = " << to_string(hierarchy) << '\n'
       << "model.branches = " << detail::join(branches) << '\n'
       << "model.ca_channels = " << ca_channels << '\n'
       << "model.mlp_ratio = " << mlp_ratio << '\n'
       << "model.ape_reduction = " << ape_reduction << '\n'
       << "loss.weights = " << detail::join(std::vector<double>(loss_weights.begin(), loss_weights.end())) << '\n'
       << "train.seed = " << seed << '\n'
       << "train.lr = " << detail::format_double(lr) << '\n'
       << "train.batch = " << batch << '\n'
       << "train.lr_crop = " << lr_crop << '\n'
       << "train.ckpt_every = " << ckpt_every << '\n';
    return os.str();
}

inline HipaConfig HipaConfig::parse(std::string_view text) {
    using detail::parse_list;
    using detail::parse_number;
    HipaConfig c;
    std::map<std::string, int> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string val = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty() || val.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        if (seen[key]++) throw ConfigError("duplicate key: " + key);

        auto triple_int = [&](std::array<int, 3>& dst) {
            auto v = parse_list<int>(key, val);
            if (v.size() != 3) throw ConfigError(key + " needs three comma-separated values");
            std::copy(v.begin(), v.end(), dst.begin());
        };

        if (key == "model.scale") c.scale = parse_number<int>(key, val);
        else if (key == "model.channels") c.channels = parse_number<int>(key, val);
        else if (key == "model.groups") triple_int(c.groups);
        else if (key == "model.res_blocks") c.res_blocks = parse_number<int>(key, val);
        else if (key == "model.patch_size") c.patch_size = parse_number<int>(key, val);
        else if (key == "model.heads") c.heads = parse_number<int>(key, val);
        else if (key == "model.layers") c.layers = parse_number<int>(key, val);
        else if (key == "model.ape_mode") {
            if (val == "none") c.ape_mode = ApeMode::none;
            else if (val == "pe") c.ape_mode = ApeMode::pe;
            else if (val == "cpe") c.ape_mode = ApeMode::cpe;
            else if (val == "ape") c.ape_mode = ApeMode::ape;
            else throw ConfigError("model.ape_mode must be none, pe, cpe or ape");
        } else if (key == "model.hierarchy") {
            if (val == "variable") c.hierarchy = Hierarchy::variable;
            else if (val == "fixed") c.hierarchy = Hierarchy::fixed;
            else throw ConfigError("model.hierarchy must be variable or fixed");
        } else if (key == "model.branches") c.branches = parse_list<int>(key, val);
        else if (key == "model.ca_channels") c.ca_channels = parse_number<int>(key, val);
        else if (key == "model.mlp_ratio") c.mlp_ratio = parse_number<int>(key, val);
        else if (key == "model.ape_reduction") c.ape_reduction = parse_number<int>(key, val);
        else if (key == "loss.weights") {
            auto v = parse_list<double>(key, val);
            if (v.size() != 3) throw ConfigError("loss.weights needs three comma-separated values");
            std::copy(v.begin(), v.end(), c.loss_weights.begin());
        } else if (key == "train.seed") c.seed = parse_number<std::uint64_t>(key, val);
        else if (key == "train.lr") c.lr = parse_number<double>(key, val);
        else if (key == "train.batch") c.batch = parse_number<int>(key, val);
        else if (key == "train.lr_crop") c.lr_crop = parse_number<int>(key, val);
        else if (key == "train.ckpt_every") c.ckpt_every = parse_number<int>(key, val);
        else throw ConfigError("unknown key: " + key);
    }
    try {
        c.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline HipaConfig HipaConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace hipa
