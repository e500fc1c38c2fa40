#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invreg/layers.hpp"
#include "invreg/tensor.hpp"
#include "invreg/volume.hpp"

namespace invreg {

enum class LayerKind { conv3, leaky_relu, upsample2, add_skip, sub_skip, concat };

struct LayerSpec {
    LayerKind kind;
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int stride = 1;             // conv3 only
    int skip_source = -1;       // encoder level (0-based), add_skip/sub_skip only
    int64_t param_offset = -1;  // conv3 only
};

inline constexpr double kLeakySlope = 0.2;

/// One shared encoder feeding two decoders. The forward decoder combines
/// skip features by addition, the backward decoder by subtraction
/// (encoder - decoder); otherwise the branches are identical. Both end in a
/// 3-channel convolution with no activation — the displacement field heads.
template <typename T>
struct Network {
    int levels = 0;
    int64_t base_channels = 0;
    Shape3 input_shape{0, 0, 0};
    std::vector<LayerSpec> encoder, decoder_fwd, decoder_bwd;
    std::vector<T> params, grads;
    int64_t encoder_params = 0;  // encoder block size; each decoder follows with equal size
    int64_t decoder_params = 0;

    int64_t param_count() const { return (int64_t)params.size(); }
    int64_t decoder_fwd_offset() const { return encoder_params; }
    int64_t decoder_bwd_offset() const { return encoder_params + decoder_params; }

    void zero_grads() { std::fill(grads.begin(), grads.end(), T(0)); }
};

namespace detail {

inline std::vector<LayerSpec> decoder_layers(int levels, int64_t base, bool backward) {
    std::vector<LayerSpec> d;
    d.push_back({LayerKind::conv3, base, base, 1, -1, -1});
    d.push_back({LayerKind::leaky_relu, base, base});
    d.push_back({LayerKind::upsample2, base, base});
    for (int i = 1; i <= levels - 1; ++i) {
        int64_t out_ch = (i == levels - 1) ? 8 : base;
        int src = levels - i - 1;  // encoder feature at the current resolution
        d.push_back({backward ? LayerKind::sub_skip : LayerKind::add_skip, base, base, 1, src});
        d.push_back({LayerKind::concat, base, 2 * base});
        d.push_back({LayerKind::conv3, 2 * base, out_ch, 1, -1, -1});
        d.push_back({LayerKind::leaky_relu, out_ch, out_ch});
        d.push_back({LayerKind::upsample2, out_ch, out_ch});
    }
    d.push_back({LayerKind::conv3, 8, 8, 1, -1, -1});
    d.push_back({LayerKind::leaky_relu, 8, 8});
    d.push_back({LayerKind::conv3, 8, 3, 1, -1, -1});  // flow head
    return d;
}

inline int64_t assign_conv_offsets(std::vector<LayerSpec>& layers, int64_t offset) {
    for (auto& l : layers)
        if (l.kind == LayerKind::conv3) {
            l.param_offset = offset;
            offset += 27 * l.in_channels * l.out_channels + l.out_channels;
        }
    return offset;
}

}  // namespace detail

/// Architecture only; parameters zero-filled.
template <typename T>
Network<T> build_architecture(int levels, int64_t base_channels, Shape3 input_shape) {
    require(levels >= 2, "build_network: levels must be >= 2");
    require(base_channels >= 1, "build_network: base_channels must be >= 1");
    int64_t div = int64_t(1) << levels;
    for (int a = 0; a < 3; ++a)
        require(input_shape[a] % div == 0,
                "build_network: input shape " + shape_str(input_shape) +
                    " not divisible by 2^levels = " + std::to_string(div));

    Network<T> net;
    net.levels = levels;
    net.base_channels = base_channels;
    net.input_shape = input_shape;
    for (int k = 0; k < levels; ++k) {
        net.encoder.push_back({LayerKind::conv3, k == 0 ? 2 : base_channels, base_channels, 2, -1, -1});
        net.encoder.push_back({LayerKind::leaky_relu, base_channels, base_channels});
    }
    net.decoder_fwd = detail::decoder_layers(levels, base_channels, false);
    net.decoder_bwd = detail::decoder_layers(levels, base_channels, true);

    int64_t off = detail::assign_conv_offsets(net.encoder, 0);
    net.encoder_params = off;
    off = detail::assign_conv_offsets(net.decoder_fwd, off);
    net.decoder_params = off - net.encoder_params;
    off = detail::assign_conv_offsets(net.decoder_bwd, off);
    net.params.assign((size_t)off, T(0));
    net.grads.assign((size_t)off, T(0));
    return net;
}

/// Glorot-uniform weights, zero biases; the two flow-head convolutions start
/// all-zero so the initial transform is the identity.
template <typename T>
void init_params(Network<T>& net, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto init_branch = [&](std::vector<LayerSpec>& layers, bool zero_last_conv) {
        int64_t last_conv = -1;
        for (int64_t i = 0; i < (int64_t)layers.size(); ++i)
            if (layers[(size_t)i].kind == LayerKind::conv3) last_conv = i;
        for (int64_t i = 0; i < (int64_t)layers.size(); ++i) {
            const auto& l = layers[(size_t)i];
            if (l.kind != LayerKind::conv3) continue;
            int64_t w_count = 27 * l.in_channels * l.out_channels;
            if (zero_last_conv && i == last_conv) {
                std::fill_n(net.params.begin() + l.param_offset, w_count + l.out_channels, T(0));
                continue;
            }
            double fan_in = 27.0 * (double)l.in_channels;
            double fan_out = 27.0 * (double)l.out_channels;
            double limit = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (int64_t j = 0; j < w_count; ++j)
                net.params[(size_t)(l.param_offset + j)] = (T)dist(rng);
            std::fill_n(net.params.begin() + l.param_offset + w_count, l.out_channels, T(0));
        }
    };
    init_branch(net.encoder, false);
    init_branch(net.decoder_fwd, true);
    init_branch(net.decoder_bwd, true);
}

template <typename T>
Network<T> build_network(int levels, int64_t base_channels, Shape3 input_shape, uint64_t seed) {
    Network<T> net = build_architecture<T>(levels, base_channels, input_shape);
    init_params(net, seed);
    return net;
}

template <typename T>
struct BranchTape {
    std::vector<Tensor3<T>> inputs;  // filled for conv3 / leaky_relu layers
};

template <typename T>
struct NetTape {
    Tensor3<T> input;                    // 2-channel concat of (S, T)
    std::vector<Tensor3<T>> enc_preact;  // encoder conv outputs before activation
    std::vector<Tensor3<T>> enc_feat;    // e_1 .. e_L after activation
    BranchTape<T> fwd, bwd;
    bool has_bwd = false;
};

namespace detail {

template <typename T>
Tensor3<T> run_branch(const Network<T>& net, const std::vector<LayerSpec>& branch,
                      const std::vector<Tensor3<T>>& enc_feat, Tensor3<T> cur,
                      BranchTape<T>* tape) {
    Tensor3<T> partner;
    for (const auto& l : branch) {
        switch (l.kind) {
            case LayerKind::conv3: {
                if (tape) tape->inputs.push_back(cur);
                Tensor3<T> out(conv_output_shape(cur.shape, l.stride), l.out_channels);
                const T* W = net.params.data() + l.param_offset;
                const T* b = W + 27 * l.in_channels * l.out_channels;
                conv3_forward(cur, out, W, b, l.stride);
                cur = std::move(out);
                break;
            }
            case LayerKind::leaky_relu: {
                if (tape) tape->inputs.push_back(cur);
                leaky_relu_forward(cur, (T)kLeakySlope);
                break;
            }
            case LayerKind::upsample2: {
                if (tape) tape->inputs.emplace_back();
                cur = upsample2_forward(cur);
                break;
            }
            case LayerKind::add_skip:
            case LayerKind::sub_skip: {
                if (tape) tape->inputs.emplace_back();
                const Tensor3<T>& e = enc_feat[(size_t)l.skip_source];
                require(e.shape == cur.shape && e.channels == cur.channels,
                        "network: skip feature shape mismatch");
                partner = cur;
                if (l.kind == LayerKind::add_skip) {
                    for (size_t i = 0; i < cur.v.size(); ++i) cur.v[i] = e.v[i] + partner.v[i];
                } else {
                    for (size_t i = 0; i < cur.v.size(); ++i) cur.v[i] = e.v[i] - partner.v[i];
                }
                break;
            }
            case LayerKind::concat: {
                if (tape) tape->inputs.emplace_back();
                cur = concat_channels(cur, partner);
                break;
            }
        }
    }
    return cur;
}

// Reverse sweep over one decoder branch. Accumulates conv parameter
// gradients, adds skip gradients into enc_feat_grads, returns the gradient
// with respect to the branch input (the deepest encoder feature).
template <typename T>
Tensor3<T> branch_backward(Network<T>& net, const std::vector<LayerSpec>& branch,
                           const BranchTape<T>& tape, std::vector<Tensor3<T>>& enc_feat_grads,
                           Tensor3<T> gcur) {
    require(tape.inputs.size() == branch.size(), "network backward: stale or mismatched tape");
    Tensor3<T> pending;  // gradient for the decoder feature parked at the skip
    for (int64_t i = (int64_t)branch.size() - 1; i >= 0; --i) {
        const auto& l = branch[(size_t)i];
        switch (l.kind) {
            case LayerKind::conv3: {
                const Tensor3<T>& in = tape.inputs[(size_t)i];
                T* gW = net.grads.data() + l.param_offset;
                T* gB = gW + 27 * l.in_channels * l.out_channels;
                conv3_backward_params(gcur, in, gW, gB, l.stride);
                Tensor3<T> gin(in.shape, l.in_channels);
                conv3_backward_input(gcur, gin, net.params.data() + l.param_offset, l.stride,
                                     l.in_channels);
                gcur = std::move(gin);
                break;
            }
            case LayerKind::leaky_relu:
                leaky_relu_backward(tape.inputs[(size_t)i], gcur, (T)kLeakySlope);
                break;
            case LayerKind::upsample2:
                gcur = upsample2_adjoint(gcur, {gcur.nx() / 2, gcur.ny() / 2, gcur.nz() / 2});
                break;
            case LayerKind::concat: {
                Tensor3<T> gcomb(gcur.shape, l.in_channels);
                pending = Tensor3<T>(gcur.shape, l.out_channels - l.in_channels);
                std::copy_n(gcur.v.begin(), gcomb.v.size(), gcomb.v.begin());
                std::copy_n(gcur.v.begin() + gcomb.v.size(), pending.v.size(), pending.v.begin());
                gcur = std::move(gcomb);
                break;
            }
            case LayerKind::add_skip:
            case LayerKind::sub_skip: {
                Tensor3<T>& ge = enc_feat_grads[(size_t)l.skip_source];
                if (ge.v.empty()) ge = Tensor3<T>(gcur.shape, gcur.channels);
                for (size_t j = 0; j < gcur.v.size(); ++j) ge.v[j] += gcur.v[j];
                T sign = l.kind == LayerKind::sub_skip ? T(-1) : T(1);
                for (size_t j = 0; j < gcur.v.size(); ++j)
                    gcur.v[j] = sign * gcur.v[j] + pending.v[j];
                break;
            }
        }
    }
    return gcur;
}

}  // namespace detail

template <typename T>
struct NetFlows {
    Tensor3<T> flow_st, flow_ts;
};

/// Runs the network on a pair (S, T). Both flows come out of the single
/// shared-encoder pass. Pass a tape to retain activations for net_backward;
/// skip the backward decoder for the single-decoder ablation.
template <typename T>
NetFlows<T> net_forward(const Network<T>& net, const Tensor3<T>& S, const Tensor3<T>& Tv,
                        NetTape<T>* tape = nullptr, bool run_backward_decoder = true) {
    require(S.channels == 1 && Tv.channels == 1, "net_forward: inputs must be single channel");
    require(S.shape == net.input_shape && Tv.shape == net.input_shape,
            "net_forward: input shape " + shape_str(S.shape) + " != network shape " +
                shape_str(net.input_shape));

    Tensor3<T> cur = concat_channels(S, Tv);
    if (tape) {
        *tape = NetTape<T>{};
        tape->input = cur;
    }
    std::vector<Tensor3<T>> enc_feat;
    for (size_t i = 0; i < net.encoder.size(); ++i) {
        const auto& l = net.encoder[i];
        if (l.kind == LayerKind::conv3) {
            Tensor3<T> out(conv_output_shape(cur.shape, l.stride), l.out_channels);
            const T* W = net.params.data() + l.param_offset;
            const T* b = W + 27 * l.in_channels * l.out_channels;
            conv3_forward(cur, out, W, b, l.stride);
            cur = std::move(out);
            if (tape) tape->enc_preact.push_back(cur);
        } else {
            leaky_relu_forward(cur, (T)kLeakySlope);
            enc_feat.push_back(cur);
        }
    }
    if (tape) tape->enc_feat = enc_feat;

    NetFlows<T> out;
    out.flow_st = detail::run_branch(net, net.decoder_fwd, enc_feat, enc_feat.back(),
                                     tape ? &tape->fwd : nullptr);
    if (run_backward_decoder) {
        out.flow_ts = detail::run_branch(net, net.decoder_bwd, enc_feat, enc_feat.back(),
                                         tape ? &tape->bwd : nullptr);
        if (tape) tape->has_bwd = true;
    } else {
        out.flow_ts = Tensor3<T>(net.input_shape, 3);
    }
    return out;
}

/// Accumulates d(upstream)/d(params) into net.grads given the tape of the
/// matching forward call. grad_flow_ts is ignored when the tape was recorded
/// without the backward decoder.
template <typename T>
void net_backward(Network<T>& net, const NetTape<T>& tape, const Tensor3<T>& grad_flow_st,
                  const Tensor3<T>& grad_flow_ts) {
    require(tape.input.shape == net.input_shape, "net_backward: stale or mismatched tape");
    require((int64_t)tape.enc_feat.size() == net.levels, "net_backward: stale or mismatched tape");

    std::vector<Tensor3<T>> enc_feat_grads((size_t)net.levels);
    Tensor3<T> g_deep =
        detail::branch_backward(net, net.decoder_fwd, tape.fwd, enc_feat_grads, grad_flow_st);
    if (tape.has_bwd) {
        Tensor3<T> g2 =
            detail::branch_backward(net, net.decoder_bwd, tape.bwd, enc_feat_grads, grad_flow_ts);
        for (size_t i = 0; i < g_deep.v.size(); ++i) g_deep.v[i] += g2.v[i];
    }
    if (enc_feat_grads.back().v.empty())
        enc_feat_grads.back() = Tensor3<T>(g_deep.shape, g_deep.channels);
    for (size_t i = 0; i < g_deep.v.size(); ++i) enc_feat_grads.back().v[i] += g_deep.v[i];

    // Encoder: e_{k+1} = lrelu(conv_k(e_k)), e_0 being the network input.
    Tensor3<T> g = std::move(enc_feat_grads.back());
    for (int k = net.levels - 1; k >= 0; --k) {
        const auto& l = net.encoder[(size_t)(2 * k)];
        leaky_relu_backward(tape.enc_preact[(size_t)k], g, (T)kLeakySlope);
        const Tensor3<T>& in = k == 0 ? tape.input : tape.enc_feat[(size_t)(k - 1)];
        T* gW = net.grads.data() + l.param_offset;
        T* gB = gW + 27 * l.in_channels * l.out_channels;
        conv3_backward_params(g, in, gW, gB, l.stride);
        if (k == 0) break;
        Tensor3<T> gin(in.shape, l.in_channels);
        conv3_backward_input(g, gin, net.params.data() + l.param_offset, l.stride, l.in_channels);
        g = std::move(gin);
        if (!enc_feat_grads[(size_t)(k - 1)].v.empty())
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += enc_feat_grads[(size_t)(k - 1)].v[i];
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "IVRCKPT1", u32 LE JSON config length, JSON config,
// then the parameter vector as little-endian f32 in layer-declaration order.

inline constexpr char kCheckpointMagic[9] = "IVRCKPT1";

struct CheckpointMeta {
    int64_t window = 9;
    double cycle_weight = 1.0;
    uint64_t seed = 0;
    int64_t epoch = 0;
};

inline void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta,
                            const std::string& path) {
    nlohmann::json j;
    j["levels"] = net.levels;
    j["base_channels"] = net.base_channels;
    j["input_shape"] = {net.input_shape[0], net.input_shape[1], net.input_shape[2]};
    j["window"] = meta.window;
    j["cycle_weight"] = meta.cycle_weight;
    j["seed"] = meta.seed;
    j["epoch"] = meta.epoch;
    std::string json = j.dump();
    uint32_t len = (uint32_t)json.size();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), path + ": cannot open for writing");
    f.write(kCheckpointMagic, 8);
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(json.data(), (std::streamsize)json.size());
    f.write(reinterpret_cast<const char*>(net.params.data()),
            (std::streamsize)(net.params.size() * sizeof(float)));
    f.flush();
    require(f.good(), path + ": write failed");
}

struct Checkpoint {
    Network<float> net;
    CheckpointMeta meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), path + ": cannot open");
    char magic[8];
    f.read(magic, 8);
    require(f.gcount() == 8 && std::memcmp(magic, kCheckpointMagic, 8) == 0,
            path + ": bad checkpoint magic");
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    require(f.gcount() == 4, path + ": truncated checkpoint config length");
    std::string json(len, '\0');
    f.read(json.data(), len);
    require((uint32_t)f.gcount() == len, path + ": truncated checkpoint config");

    Checkpoint ck;
    try {
        nlohmann::json j = nlohmann::json::parse(json);
        Shape3 shape{j.at("input_shape")[0].get<int64_t>(), j.at("input_shape")[1].get<int64_t>(),
                     j.at("input_shape")[2].get<int64_t>()};
        ck.net = build_architecture<float>(j.at("levels").get<int>(),
                                           j.at("base_channels").get<int64_t>(), shape);
        ck.meta.window = j.at("window").get<int64_t>();
        ck.meta.cycle_weight = j.at("cycle_weight").get<double>();
        ck.meta.seed = j.at("seed").get<uint64_t>();
        ck.meta.epoch = j.at("epoch").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": malformed checkpoint config: " + e.what());
    }
    f.read(reinterpret_cast<char*>(ck.net.params.data()),
           (std::streamsize)(ck.net.params.size() * sizeof(float)));
    require(f.gcount() == (std::streamsize)(ck.net.params.size() * sizeof(float)),
            path + ": truncated checkpoint parameters");
    f.peek();
    require(f.eof(), path + ": trailing bytes after checkpoint parameters");
    return ck;
}

/// Volume-level wrapper: one forward pass yields both displacement fields.
struct RegisteredFlows {
    FlowField3 flow_st, flow_ts;
};

inline RegisteredFlows register_pair(const Network<float>& net, const Volume3& S, const Volume3& T) {
    auto flows = net_forward<float>(net, to_tensor<float>(S), to_tensor<float>(T));
    RegisteredFlows out;
    out.flow_st = to_flow(flows.flow_st, S.header.voxel_size_mm);
    out.flow_ts = to_flow(flows.flow_ts, S.header.voxel_size_mm);
    return out;
}

}  // namespace invreg
