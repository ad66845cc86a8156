#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hipa/ops.hpp"
#include "hipa/params.hpp"

namespace hipa {

/// Hyperparameters shared by the building blocks of one model.
struct LayerSpec {
    Index channels = 64;
    Index ca_channels = 4;  // squeeze width of the dilated channel attention gate
    Index res_blocks = 5;
    std::vector<int> branches{1, 2, 3};
    Index patch = 4;
    Index heads = 4;
    Index layers = 4;
    Index mlp_ratio = 2;
    Index ape_reduction = 4;

    Index token_dim() const { return patch * patch * channels; }

    void validate() const {
        if (channels < 1) throw InvalidHyperparam("channels must be >= 1");
        if (ca_channels < 1) throw InvalidHyperparam("channel attention reduction width must be >= 1");
        if (res_blocks < 0) throw InvalidHyperparam("residual block count must be >= 0");
        if (patch < 1) throw InvalidHyperparam("patch size must be >= 1");
        if (heads < 1 || token_dim() % heads != 0)
            throw InvalidHyperparam("head count must divide the token dimension " + std::to_string(token_dim()));
        if (layers < 0) throw InvalidHyperparam("encoder layer count must be >= 0");
        if (mlp_ratio < 1 || ape_reduction < 1) throw InvalidHyperparam("mlp ratio and APE reduction must be >= 1");
        if (branches.empty()) throw InvalidHyperparam("at least one attention branch is required");
        for (int b : branches)
            if (b < 1 || b > 3) throw InvalidHyperparam("branch ids are 1, 2 or 3");
    }
};

template <class T>
struct Conv2d {
    Tensor<T> weight;
    Tensor<T> bias;
    ConvParams params;

    Conv2d() = default;
    Conv2d(ParamBuilder<T> pb, Index cin, Index cout, Index kernel, Index dilation = 1, Index groups = 1) {
        if (kernel < 1 || kernel % 2 == 0) throw InvalidHyperparam("conv kernels must be odd");
        params.dilation = dilation;
        params.groups = groups;
        params.padding = dilation * (kernel - 1) / 2;
        const Index fan_in = cin / groups * kernel * kernel;
        weight = pb.fan_in_uniform("weight", {cout, cin / groups, kernel, kernel}, fan_in);
        bias = pb.fan_in_uniform("bias", {cout}, fan_in);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, params); }
};

/// y = x W + b over the last axis; W is (in, out).
template <class T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;

    Linear() = default;
    Linear(ParamBuilder<T> pb, Index in, Index out) {
        weight = pb.fan_in_uniform("weight", {in, out}, in);
        bias = pb.fan_in_uniform("bias", {out}, in);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
};

template <class T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    LayerNorm(ParamBuilder<T> pb, Index dim) {
        gamma = pb.constant("gamma", {dim}, T(1));
        beta = pb.constant("beta", {dim}, T(0));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
};

/// x + conv(relu(conv(x))), 3x3 convolutions.
template <class T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;

    ResidualBlock() = default;
    ResidualBlock(ParamBuilder<T> pb, Index channels)
        : conv1(pb.child("conv1"), channels, channels, 3), conv2(pb.child("conv2"), channels, channels, 3) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.ndim() != 4 || x.dim(1) != conv1.weight.dim(1))
            throw ShapeMismatch("residual block expects " + std::to_string(conv1.weight.dim(1)) + " channels");
        return add(x, conv2(relu(conv1(x))));
    }
};

/// Squeeze-and-excitation gate: sigmoid(expand(relu(squeeze(avgpool(x))))), shape (n, c, 1, 1).
template <class T>
struct ChannelGate {
    Conv2d<T> squeeze, expand;

    ChannelGate() = default;
    ChannelGate(ParamBuilder<T> pb, Index channels, Index width)
        : squeeze(pb.child("squeeze"), channels, width, 1), expand(pb.child("expand"), width, channels, 1) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return sigmoid(expand(relu(squeeze(global_avg_pool(x)))));
    }
};

/// One receptive-field branch: a (dilated) spatial conv followed by a channel gate.
/// Branch 1: 1x1 (RF 1). Branch 2: 3x3 (RF 3). Branch 3: 3x3 dilation 2 (RF 5).
template <class T>
struct DilatedChannelAttention {
    int branch = 1;
    Conv2d<T> conv;
    ChannelGate<T> gate;

    DilatedChannelAttention() = default;
    DilatedChannelAttention(ParamBuilder<T> pb, int branch_id, Index channels, Index width) : branch(branch_id) {
        switch (branch_id) {
        case 1: conv = Conv2d<T>(pb.child("conv"), channels, channels, 1, 1); break;
        case 2: conv = Conv2d<T>(pb.child("conv"), channels, channels, 3, 1); break;
        case 3: conv = Conv2d<T>(pb.child("conv"), channels, channels, 3, 2); break;
        default: throw InvalidHyperparam("branch must be 1, 2 or 3");
        }
        gate = ChannelGate<T>(pb.child("gate"), channels, width);
    }

    static Index receptive_field(int branch_id) { return branch_id == 1 ? 1 : (branch_id == 2 ? 3 : 5); }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.ndim() != 4 || x.dim(1) != conv.weight.dim(0))
            throw ShapeMismatch("dilated channel attention: channel mismatch");
        Tensor<T> feat = conv(x);
        return mul(feat, gate(feat));
    }
};

/// Multi-reception-field attention module. The stage input is added to the
/// fused branch output (source-shared skip).
template <class T>
struct Mrfam {
    std::vector<ResidualBlock<T>> blocks;
    std::vector<DilatedChannelAttention<T>> branches;
    Conv2d<T> fusion;

    Mrfam() = default;
    Mrfam(ParamBuilder<T> pb, const LayerSpec& spec) {
        for (Index m = 0; m < spec.res_blocks; ++m)
            blocks.emplace_back(pb.child("rb" + std::to_string(m)), spec.channels);
        for (int b : spec.branches)
            branches.emplace_back(pb.child("branch" + std::to_string(b)), b, spec.channels, spec.ca_channels);
        fusion = Conv2d<T>(pb.child("fusion"), spec.channels * static_cast<Index>(branches.size()), spec.channels, 1);
    }

    /// Everything except the skip.
    Tensor<T> body(const Tensor<T>& x) const {
        Tensor<T> r = x;
        for (const auto& rb : blocks) r = rb(r);
        std::vector<Tensor<T>> outs;
        outs.reserve(branches.size());
        for (const auto& br : branches) outs.push_back(br(r));
        return fusion(outs.size() == 1 ? outs.front() : concat(outs, 1));
    }

    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& stage_input) const {
        if (x.shape() != stage_input.shape())
            throw ShapeMismatch("mrfam: " + to_string(x.shape()) + " vs stage input " + to_string(stage_input.shape()));
        return add(stage_input, body(x));
    }
};

/// G chained MRFAMs sharing the group input as skip, then a tail 3x3 conv
/// added back onto the group input.
template <class T>
struct Mrfag {
    std::vector<Mrfam<T>> modules;
    Conv2d<T> tail;

    Mrfag() = default;
    Mrfag(ParamBuilder<T> pb, const LayerSpec& spec, Index groups) {
        if (groups < 1) throw InvalidHyperparam("MRFAG needs G >= 1, got " + std::to_string(groups));
        for (Index g = 0; g < groups; ++g) modules.emplace_back(pb.child("mrfam" + std::to_string(g)), spec);
        tail = Conv2d<T>(pb.child("tail"), spec.channels, spec.channels, 3);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> f = x;
        for (const auto& m : modules) f = m(f, x);
        return add(x, tail(f));
    }
};

/// (n, C, h, w) -> (n, (h/P)(w/P), C*P*P). Token t covers patch (t / (w/P), t % (w/P));
/// its features are the patch's NCHW values flattened channel-major.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& f, Index P) {
    if (f.ndim() != 4) throw ShapeMismatch("patch_embed expects NCHW");
    const Index n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    if (P < 1 || h % P != 0 || w % P != 0)
        throw NotDivisible("patch size " + std::to_string(P) + " does not divide " + std::to_string(h) + "x" +
                           std::to_string(w));
    const Index gh = h / P, gw = w / P;
    Tensor<T> t = reshape(f, {n, c, gh, P, gw, P});
    t = permute(t, {0, 2, 4, 1, 3, 5});
    return reshape(t, {n, gh * gw, c * P * P});
}

template <class T>
Tensor<T> patch_fold(const Tensor<T>& tokens, Index P, Index C, Index h, Index w) {
    if (tokens.ndim() != 3) throw ShapeMismatch("patch_fold expects (n, N, D)");
    if (P < 1 || h % P != 0 || w % P != 0) throw ShapeMismatch("patch_fold: P must divide h and w");
    const Index n = tokens.dim(0), gh = h / P, gw = w / P;
    if (tokens.dim(1) != gh * gw || tokens.dim(2) != C * P * P)
        throw ShapeMismatch("patch_fold: tokens " + to_string(tokens.shape()) + " do not tile " + std::to_string(C) +
                            "x" + std::to_string(h) + "x" + std::to_string(w) + " with P=" + std::to_string(P));
    Tensor<T> t = reshape(tokens, {n, gh, gw, C, P, P});
    t = permute(t, {0, 3, 1, 4, 2, 5});
    return reshape(t, {n, C, h, w});
}

/// (n, gh*gw, D) -> (n, D, gh, gw)
template <class T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, Index gh, Index gw) {
    if (tokens.ndim() != 3 || tokens.dim(1) != gh * gw)
        throw ShapeMismatch("token count " + std::to_string(tokens.ndim() == 3 ? tokens.dim(1) : -1) +
                            " does not match grid " + std::to_string(gh) + "x" + std::to_string(gw));
    return permute(reshape(tokens, {tokens.dim(0), gh, gw, tokens.dim(2)}), {0, 3, 1, 2});
}

template <class T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
    const Index n = map.dim(0), d = map.dim(1), gh = map.dim(2), gw = map.dim(3);
    return reshape(permute(map, {0, 2, 3, 1}), {n, gh * gw, d});
}

/// Row-interpolation matrix (out x in) for half-pixel bilinear resampling.
template <class T>
Tensor<T> bilinear_matrix(Index out, Index in) {
    Tensor<T> m(Shape{out, in});
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<Index>(std::floor(src));
        const Index i1 = std::min(i0 + 1, in - 1);
        const double frac = src - static_cast<double>(i0);
        m.at(o, i0) += static_cast<T>(1.0 - frac);
        m.at(o, i1) += static_cast<T>(frac);
    }
    return m;
}

enum class ApeMode { none, pe, cpe, ape };

inline const char* to_string(ApeMode m) {
    switch (m) {
    case ApeMode::none: return "none";
    case ApeMode::pe: return "pe";
    case ApeMode::cpe: return "cpe";
    case ApeMode::ape: return "ape";
    }
    return "?";
}

/// Position encodings added to patch tokens.
///  ape: 3x3 conv on the token grid, gated by channel attention.
///  cpe: 3x3 depthwise conv on the token grid.
///  pe:  learned table for a reference grid, bilinearly resized when the grid differs.
template <class T>
struct PositionEncoder {
    ApeMode mode = ApeMode::none;
    Conv2d<T> conv;
    ChannelGate<T> gate;
    Tensor<T> table;
    Index ref_h = 0, ref_w = 0;

    PositionEncoder() = default;
    PositionEncoder(ParamBuilder<T> pb, ApeMode m, Index dim, Index reduction, Index grid_h, Index grid_w)
        : mode(m), ref_h(grid_h), ref_w(grid_w) {
        switch (mode) {
        case ApeMode::ape:
            conv = Conv2d<T>(pb.child("conv"), dim, dim, 3);
            gate = ChannelGate<T>(pb.child("gate"), dim, std::max<Index>(1, dim / reduction));
            break;
        case ApeMode::cpe: conv = Conv2d<T>(pb.child("conv"), dim, dim, 3, 1, dim); break;
        case ApeMode::pe:
            if (grid_h < 1 || grid_w < 1) throw InvalidHyperparam("pe needs a reference token grid");
            table = pb.uniform("table", {1, grid_h * grid_w, dim}, 0.02);
            break;
        case ApeMode::none: break;
        }
    }

    bool enabled() const { return mode != ApeMode::none; }

    /// The encoding for `tokens` laid out on a gh x gw grid; same shape as tokens.
    Tensor<T> operator()(const Tensor<T>& tokens, Index gh, Index gw) const {
        switch (mode) {
        case ApeMode::ape: {
            Tensor<T> feat = conv(tokens_to_map(tokens, gh, gw));
            return map_to_tokens(mul(feat, gate(feat)));
        }
        case ApeMode::cpe: return map_to_tokens(conv(tokens_to_map(tokens, gh, gw)));
        case ApeMode::pe: {
            if (tokens.dim(1) != gh * gw) throw ShapeMismatch("pe: token count does not match grid");
            if (gh == ref_h && gw == ref_w) return table;
            const Index d = table.dim(2);
            Tensor<T> rows = matmul(bilinear_matrix<T>(gh, ref_h), reshape(table, {ref_h, ref_w * d}));
            Tensor<T> grid = matmul(bilinear_matrix<T>(gw, ref_w), reshape(rows, {gh, ref_w, d}));
            return reshape(grid, {1, gh * gw, d});
        }
        case ApeMode::none: break;
        }
        return Tensor<T>::zeros(tokens.shape());
    }
};

/// Pre-norm Transformer encoder: x += MHA(LN(x)); x += MLP(LN(x)).
template <class T>
struct EncoderLayer {
    Index heads = 1;
    LayerNorm<T> ln1, ln2;
    Linear<T> wq, wk, wv, proj;
    Linear<T> fc1, fc2;

    EncoderLayer() = default;
    EncoderLayer(ParamBuilder<T> pb, Index dim, Index num_heads, Index mlp_ratio) : heads(num_heads) {
        if (num_heads < 1 || dim % num_heads != 0)
            throw InvalidHyperparam("heads (" + std::to_string(num_heads) + ") must divide token dim " +
                                    std::to_string(dim));
        ln1 = LayerNorm<T>(pb.child("ln1"), dim);
        wq = Linear<T>(pb.child("attn.q"), dim, dim);
        wk = Linear<T>(pb.child("attn.k"), dim, dim);
        wv = Linear<T>(pb.child("attn.v"), dim, dim);
        proj = Linear<T>(pb.child("attn.proj"), dim, dim);
        ln2 = LayerNorm<T>(pb.child("ln2"), dim);
        fc1 = Linear<T>(pb.child("mlp.fc1"), dim, dim * mlp_ratio);
        fc2 = Linear<T>(pb.child("mlp.fc2"), dim * mlp_ratio, dim);
    }

    Index dim() const { return wq.weight.dim(0); }

    Tensor<T> attention(const Tensor<T>& x) const {
        const Index n = x.dim(0), N = x.dim(1), D = x.dim(2), hd = D / heads;
        auto split_heads = [&](const Tensor<T>& t) { return permute(reshape(t, {n, N, heads, hd}), {0, 2, 1, 3}); };
        Tensor<T> q = split_heads(wq(x));
        Tensor<T> kt = permute(reshape(wk(x), {n, N, heads, hd}), {0, 2, 3, 1});
        Tensor<T> v = split_heads(wv(x));
        Tensor<T> scores = scale(matmul(q, kt), T(1) / std::sqrt(static_cast<T>(hd)));
        Tensor<T> ctx = matmul(softmax(scores, -1), v);
        return proj(reshape(permute(ctx, {0, 2, 1, 3}), {n, N, D}));
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.ndim() != 3 || x.dim(2) != dim()) throw ShapeMismatch("encoder layer: token dim mismatch");
        Tensor<T> y = add(x, attention(ln1(x)));
        return add(y, fc2(gelu(fc1(ln2(y)))));
    }
};

/// Patch embedding, optional position encoding, stacked encoders, fold back.
template <class T>
struct ApeVit {
    Index patch = 1;
    Index channels = 1;
    PositionEncoder<T> position;
    std::vector<EncoderLayer<T>> layers;

    ApeVit() = default;
    ApeVit(ParamBuilder<T> pb, const LayerSpec& spec, ApeMode mode, Index ref_grid_h = 0, Index ref_grid_w = 0)
        : patch(spec.patch), channels(spec.channels) {
        const Index d = spec.token_dim();
        position = PositionEncoder<T>(pb.child("pos"), mode, d, spec.ape_reduction, ref_grid_h, ref_grid_w);
        for (Index l = 0; l < spec.layers; ++l)
            layers.emplace_back(pb.child("layer" + std::to_string(l)), d, spec.heads, spec.mlp_ratio);
    }

    Tensor<T> encode_tokens(Tensor<T> tokens, Index gh, Index gw) const {
        if (position.enabled()) tokens = add(tokens, position(tokens, gh, gw));
        for (const auto& layer : layers) tokens = layer(tokens);
        return tokens;
    }

    Tensor<T> operator()(const Tensor<T>& f) const {
        const Index h = f.dim(2), w = f.dim(3);
        Tensor<T> tokens = patch_embed(f, patch);
        tokens = encode_tokens(tokens, h / patch, w / patch);
        return patch_fold(tokens, patch, channels, h, w);
    }
};

/// Sub-pixel upsampling: x2 and x3 use one conv + shuffle, x4 two x2 steps.
template <class T>
struct Upsampler {
    std::vector<Conv2d<T>> convs;
    std::vector<Index> factors;

    Upsampler() = default;
    Upsampler(ParamBuilder<T> pb, Index channels, Index scale) {
        if (scale == 2 || scale == 3) {
            factors = {scale};
        } else if (scale == 4) {
            factors = {2, 2};
        } else {
            throw UnsupportedScale("upsampling supports x2, x3 and x4, got x" + std::to_string(scale));
        }
        for (std::size_t i = 0; i < factors.size(); ++i)
            convs.emplace_back(pb.child("conv" + std::to_string(i)), channels, channels * factors[i] * factors[i], 3);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> y = x;
        for (std::size_t i = 0; i < convs.size(); ++i) y = pixel_shuffle(convs[i](y), factors[i]);
        return y;
    }
};

} // namespace hipa
