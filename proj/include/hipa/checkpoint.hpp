#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "hipa/config.hpp"
#include "hipa/model.hpp"
#include "hipa/optim.hpp"
#include "hipa/rng.hpp"
#include "hipa/util.hpp"

namespace hipa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training exactly.
struct Checkpoint {
    HipaConfig config;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    AdamState<float> adam;
    std::uint64_t step = 0;
    Rng::State rng{};
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const std::string& s) { buf_ += s; }

    void tensor(const std::string& name, const Tensor<float>& t) {
        if (name.size() > 0xffff) throw InvalidHyperparam("tensor name too long: " + name);
        if (t.ndim() > 0xff) throw InvalidHyperparam("tensor rank too large: " + name);
        u16(static_cast<std::uint16_t>(name.size()));
        bytes(name);
        u8(static_cast<std::uint8_t>(t.ndim()));
        for (Index d : t.shape()) u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) f32(v);
    }

    const std::string& str() const { return buf_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::pair<std::string, Tensor<float>> tensor() {
        std::string name = bytes(u16());
        const std::uint8_t nd = u8();
        Shape shape;
        std::uint64_t count = 1;
        for (std::uint8_t i = 0; i < nd; ++i) {
            shape.push_back(static_cast<Index>(u32()));
            count *= static_cast<std::uint64_t>(shape.back());
        }
        need(count * 4);
        std::vector<float> values(static_cast<std::size_t>(count));
        for (float& v : values) v = f32();
        return {std::move(name), Tensor<float>(std::move(shape), std::move(values))};
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > data_.size() - pos_) throw CorruptCheckpoint("checkpoint is truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::uint64_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string data_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.bytes("HIPA");
    w.u32(kCheckpointVersion);
    const std::string cfg = c.config.to_text();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    w.u32(static_cast<std::uint32_t>(c.params.size()));
    for (const auto& [name, t] : c.params) w.tensor(name, t);
    w.u32(static_cast<std::uint32_t>(2 * c.adam.names.size()));
    for (std::size_t i = 0; i < c.adam.names.size(); ++i) {
        w.tensor("adam.m." + c.adam.names[i], c.adam.m[i]);
        w.tensor("adam.v." + c.adam.names[i], c.adam.v[i]);
    }
    w.u64(c.step);
    for (std::uint64_t s : c.rng) w.u64(s);
    return w.str();
}

/// Parses and validates a checkpoint against a model built from its embedded config.
inline Checkpoint deserialize_checkpoint(std::string bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.bytes(4) != "HIPA") throw CorruptCheckpoint("bad checkpoint magic");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(v));
    Checkpoint c;
    try {
        c.config = HipaConfig::parse(r.bytes(r.u32()));
    } catch (const ConfigError& e) {
        throw CorruptCheckpoint(std::string("embedded config invalid: ") + e.what());
    }
    c.adam.lr = c.config.lr;

    const HipaModel<float> reference(c.config);
    const auto& expected = reference.params();
    const std::uint32_t count = r.u32();
    if (count != expected.size())
        throw CorruptCheckpoint("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                                std::to_string(expected.size()));
    auto check = [&](const std::string& name, const Tensor<float>& t, const std::string& want) {
        if (name != want) throw CorruptCheckpoint("expected tensor " + want + ", found " + name);
    };
    std::size_t i = 0;
    for (const auto& [name, ref] : expected) {
        auto entry = r.tensor();
        check(entry.first, entry.second, name);
        if (entry.second.shape() != ref.shape()) throw CorruptCheckpoint("shape mismatch for " + name);
        c.params.push_back(std::move(entry));
        ++i;
    }
    if (r.u32() != 2 * count) throw CorruptCheckpoint("optimizer state does not match parameter count");
    for (const auto& [name, ref] : expected) {
        auto m = r.tensor();
        auto v = r.tensor();
        check(m.first, m.second, "adam.m." + name);
        check(v.first, v.second, "adam.v." + name);
        if (m.second.shape() != ref.shape() || v.second.shape() != ref.shape())
            throw CorruptCheckpoint("optimizer shape mismatch for " + name);
        c.adam.names.push_back(name);
        c.adam.m.push_back(std::move(m.second));
        c.adam.v.push_back(std::move(v.second));
    }
    c.step = r.u64();
    c.adam.t = c.step;
    for (auto& s : c.rng) s = r.u64();
    if (!r.done()) throw CorruptCheckpoint("trailing bytes after checkpoint");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    detail::write_text_atomically(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(bytes));
}

/// Architecture lines (`model.*`) of the canonical config text.
inline std::string architecture_text(const HipaConfig& c) {
    std::string out, line;
    std::istringstream in(c.to_text());
    while (std::getline(in, line))
        if (line.rfind("model.", 0) == 0) out += line + '\n';
    return out;
}

/// Raises ConfigMismatch when a user-supplied config disagrees with the checkpoint's.
/// With `architecture_only`, training-only keys (seed, lr, crop, ...) may differ.
inline void require_same_config(const HipaConfig& supplied, const HipaConfig& in_checkpoint,
                                bool architecture_only = false) {
    const bool same = architecture_only ? architecture_text(supplied) == architecture_text(in_checkpoint)
                                        : supplied == in_checkpoint;
    if (!same) throw ConfigMismatch("checkpoint was trained with a different configuration");
}

/// Snapshot of a model, its optimizer and the data stream position.
inline Checkpoint make_checkpoint(const HipaModel<float>& model, const AdamState<float>& adam, std::uint64_t step,
                                  const Rng& rng) {
    Checkpoint c;
    c.config = model.config();
    for (const auto& [name, t] : model.params()) c.params.emplace_back(name, t.clone());
    c.adam.names = adam.names;
    for (const auto& t : adam.m) c.adam.m.push_back(t.clone());
    for (const auto& t : adam.v) c.adam.v.push_back(t.clone());
    c.adam.t = adam.t;
    c.adam.lr = adam.lr;
    c.step = step;
    c.rng = rng.state();
    return c;
}

/// Model with the checkpoint's weights installed.
inline HipaModel<float> model_from_checkpoint(const Checkpoint& c) {
    HipaModel<float> model(c.config);
    for (const auto& [name, t] : c.params) {
        auto dst = model.params().at(name).data();
        std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
    return model;
}

} // namespace hipa
