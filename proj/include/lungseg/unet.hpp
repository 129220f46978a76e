#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lungseg/ops.hpp"
#include "lungseg/rng.hpp"
#include "lungseg/tensor.hpp"

namespace lungseg {

// Architecture hyperparameters. `desk` is the small profile used by the test
// suite; `paper` is the full-scale profile.
struct UNetConfig {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t depth = 4;          // number of pooling stages
    int64_t base_channels = 64; // channels at the first encoder level
    int64_t input_size = 512;   // expected square input size

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0 || depth <= 0 || base_channels <= 0 || input_size <= 0)
            throw ConfigError("all UNetConfig fields must be positive");
        const int64_t factor = int64_t(1) << depth;
        if (input_size % factor != 0)
            throw ConfigError("input_size " + std::to_string(input_size) + " not divisible by 2^depth = " +
                              std::to_string(factor));
    }

    static UNetConfig desk() { return UNetConfig{1, 1, 3, 8, 64}; }
    static UNetConfig paper() { return UNetConfig{1, 1, 4, 64, 512}; }
};

// Named parameter tensors. std::map keys iterate lexicographically, which is
// the canonical parameter order everywhere (checkpoints, Adam, gradients).
template <typename T>
struct ParamStore {
    std::map<std::string, Tensor<T>> by_name;

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [name, t] : by_name) n += t.numel();
        return n;
    }

    const Tensor<T>& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw UsageError("no parameter named " + name);
        return it->second;
    }
};

// One convolution layer of the network plan: name is the parameter prefix
// ("<name>.w" / "<name>.b").
struct ConvSpec {
    std::string name;
    int64_t cin;
    int64_t cout;
    int64_t kernel;
};

// The fixed layer schedule, in construction order. Encoder level i runs two
// 3x3 convs at base*2^i channels then pools; the bottleneck doubles once
// more; decoder level i upsamples, reduces channels with a 3x3 conv,
// concatenates the level-i skip and applies two more 3x3 convs; a 1x1 head
// maps to out_channels.
inline std::vector<ConvSpec> unet_layer_plan(const UNetConfig& cfg) {
    cfg.validate();
    std::vector<ConvSpec> plan;
    const int64_t base = cfg.base_channels;
    auto level_ch = [base](int64_t i) { return base << i; };

    int64_t prev = cfg.in_channels;
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const int64_t ch = level_ch(i);
        plan.push_back({"enc" + std::to_string(i) + ".conv1", prev, ch, 3});
        plan.push_back({"enc" + std::to_string(i) + ".conv2", ch, ch, 3});
        prev = ch;
    }
    const int64_t mid = level_ch(cfg.depth);
    plan.push_back({"bottleneck.conv1", prev, mid, 3});
    plan.push_back({"bottleneck.conv2", mid, mid, 3});
    prev = mid;
    for (int64_t i = cfg.depth - 1; i >= 0; --i) {
        const int64_t ch = level_ch(i);
        plan.push_back({"dec" + std::to_string(i) + ".up", prev, ch, 3});
        plan.push_back({"dec" + std::to_string(i) + ".conv1", 2 * ch, ch, 3});
        plan.push_back({"dec" + std::to_string(i) + ".conv2", ch, ch, 3});
        prev = ch;
    }
    plan.push_back({"head", prev, cfg.out_channels, 1});
    return plan;
}

// Builds the parameter set: He-initialized weights (sigma = sqrt(2/fan_in))
// from one seeded stream consumed in plan order, zero biases.
template <typename T>
ParamStore<T> build_unet(const UNetConfig& cfg, uint64_t seed) {
    ParamStore<T> params;
    Rng rng(seed);
    for (const ConvSpec& layer : unet_layer_plan(cfg)) {
        const int64_t fan_in = layer.cin * layer.kernel * layer.kernel;
        const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor<T> w({layer.cout, layer.cin, layer.kernel, layer.kernel});
        for (T& v : w.data) v = static_cast<T>(rng.normal() * sigma);
        params.by_name.emplace(layer.name + ".w", std::move(w));
        params.by_name.emplace(layer.name + ".b", Tensor<T>({layer.cout}));
    }
    return params;
}

// Tracked copies of the parameters made for one forward pass; used to pull
// per-parameter gradients off the tape after backward().
template <typename T>
using ParamBindings = std::map<std::string, Tensor<T>>;

// Runs the network. Spatial dims must be divisible by 2^depth; the output
// keeps the input's spatial size and is sigmoid-squashed. Pass a tape (and
// optionally a bindings map) to record gradients for training.
template <typename T>
Tensor<T> unet_forward(const ParamStore<T>& params, const UNetConfig& cfg, const Tensor<T>& x,
                       Tape<T>* tape = nullptr, ParamBindings<T>* bindings = nullptr) {
    cfg.validate();
    if (x.shape.size() != 4) throw ShapeError("unet_forward input must be NCHW, got " + shape_str(x.shape));
    if (x.shape[1] != cfg.in_channels)
        throw ShapeError("unet_forward expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                         std::to_string(x.shape[1]));
    const int64_t factor = int64_t(1) << cfg.depth;
    if (x.shape[2] % factor != 0 || x.shape[3] % factor != 0)
        throw ShapeError("unet_forward spatial dims " + shape_str(x.shape) + " not divisible by 2^depth = " +
                         std::to_string(factor));

    ParamBindings<T> local;
    ParamBindings<T>& bound = bindings != nullptr ? *bindings : local;
    auto param = [&](const std::string& name) -> const Tensor<T>& {
        if (tape == nullptr) return params.at(name);
        auto it = bound.find(name);
        if (it == bound.end()) {
            Tensor<T> copy = params.at(name);
            tape->track(copy, /*needs_grad=*/true);
            it = bound.emplace(name, std::move(copy)).first;
        }
        return it->second;
    };
    auto conv_relu = [&](const Tensor<T>& in, const std::string& name, int64_t k) {
        return relu(conv2d(in, param(name + ".w"), param(name + ".b"), 1, (k - 1) / 2));
    };

    Tensor<T> cur = x;
    if (tape != nullptr && !cur.tracked()) tape->track(cur, /*needs_grad=*/false);

    std::vector<Tensor<T>> skips;
    skips.reserve(static_cast<size_t>(cfg.depth));
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const std::string lv = "enc" + std::to_string(i);
        cur = conv_relu(cur, lv + ".conv1", 3);
        cur = conv_relu(cur, lv + ".conv2", 3);
        skips.push_back(cur);
        cur = max_pool2(cur);
    }
    cur = conv_relu(cur, "bottleneck.conv1", 3);
    cur = conv_relu(cur, "bottleneck.conv2", 3);
    for (int64_t i = cfg.depth - 1; i >= 0; --i) {
        const std::string lv = "dec" + std::to_string(i);
        cur = conv_relu(upsample_nearest2(cur), lv + ".up", 3);
        cur = concat_channels(skips[static_cast<size_t>(i)], cur);
        cur = conv_relu(cur, lv + ".conv1", 3);
        cur = conv_relu(cur, lv + ".conv2", 3);
    }
    return sigmoid(conv2d(cur, param("head.w"), param("head.b"), 1, 0));
}

}  // namespace lungseg
