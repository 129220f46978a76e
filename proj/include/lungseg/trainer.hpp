#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lungseg/checkpoint.hpp"
#include "lungseg/dataset.hpp"
#include "lungseg/eval.hpp"
#include "lungseg/ops.hpp"
#include "lungseg/unet.hpp"

namespace lungseg {

// Mean binary cross-entropy over all elements, with predictions clamped to
// [1e-7, 1-1e-7] before the logs. Gradients flow to `pred` only; elements in
// the clamped region get zero gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape != target.shape)
        throw ShapeError("bce_loss shape mismatch: " + shape_str(pred.shape) + " vs " + shape_str(target.shape));

    const T lo = T(1e-7), hi = T(1) - T(1e-7);
    const int64_t n = pred.numel();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T raw = pred.data[static_cast<size_t>(i)];
        const T p = raw < lo ? lo : (raw > hi ? hi : raw);  // NaN passes through
        const T t = target.data[static_cast<size_t>(i)];
        acc += -(t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
    }
    Tensor<T> out({1});
    out.data[0] = acc / static_cast<T>(n);
    detail::check_finite("bce_loss", out);

    Tape<T>* tape = detail::common_tape<T>({&pred});
    if (tape == nullptr) return out;

    const int64_t pn = pred.node;
    out.tape = tape;
    out.node = tape->emit(out.shape, [pd = pred.data, td = target.data, lo, hi, n, pn](Tape<T>& tp,
                                                                                       int64_t out_node) {
        if (!tp.wants_grad(pn)) return;
        const T g = tp.grad_buffer(out_node)[0];
        std::vector<T>& dp = tp.grad_buffer_mut(pn);
        const T inv_n = T(1) / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i) {
            const T raw = pd[static_cast<size_t>(i)];
            if (raw < lo || raw > hi) continue;  // clamped: flat region
            const T t = td[static_cast<size_t>(i)];
            dp[static_cast<size_t>(i)] += g * inv_n * (raw - t) / (raw * (T(1) - raw));
        }
    });
    return out;
}

// Per-parameter first/second moment state for Adam.
template <typename T>
struct AdamState {
    T lr = T(0.0005);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    int64_t t = 0;
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;

    static AdamState init(const ParamStore<T>& params, T lr) {
        AdamState s;
        s.lr = lr;
        for (const auto& [name, p] : params.by_name) {
            s.m.emplace(name, Tensor<T>(p.shape));
            s.v.emplace(name, Tensor<T>(p.shape));
        }
        return s;
    }
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// One Adam update with bias correction:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& params, const GradMap<T>& grads) {
    state.t += 1;
    const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
    const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
    for (auto& [name, p] : params.by_name) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw UsageError("adam_step: missing gradient for parameter " + name);
        const Tensor<T>& g = git->second;
        if (g.shape != p.shape)
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        Tensor<T>& m = state.m.at(name);
        Tensor<T>& v = state.v.at(name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            const T gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * gi * gi;
            const T m_hat = m.data[i] / bc1;
            const T v_hat = v.data[i] / bc2;
            p.data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

struct TrainConfig {
    int64_t epochs = 200;
    int64_t batch_size = 4;
    double lr = 0.0005;
    uint64_t seed = 42;
    bool augment = true;
    PipelineConfig pipeline;       // image size, dilation, augment parameters
    std::string checkpoint_path;   // best-val-DICE weights land here (empty: keep in memory only)
    int64_t report_every = 1;      // progress line cadence in epochs; 0 silences
    std::ostream* log = nullptr;
};

struct EpochStats {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

// Runs one forward/backward/update step on a batch and returns the loss.
template <typename T>
double train_step(ParamStore<T>& params, const UNetConfig& net, AdamState<T>& opt, const Batch<T>& batch) {
    Tape<T> tape;
    ParamBindings<T> bound;
    Tensor<T> x = batch.images;
    tape.track(x, /*needs_grad=*/false);
    const Tensor<T> pred = unet_forward(params, net, x, &tape, &bound);
    const Tensor<T> loss = bce_loss(pred, batch.masks);
    const double loss_value = static_cast<double>(loss.data[0]);
    tape.backward(loss);
    GradMap<T> grads;
    for (const auto& [name, t] : bound) grads.emplace(name, tape.grad(t));
    adam_step(opt, params, grads);
    return loss_value;
}

// Epoch loop: seeded batches, Adam updates, per-epoch validation loss/DICE,
// best-validation-DICE checkpointing. Identical config and seed reproduce
// the history bit for bit.
template <typename T>
TrainHistory train_epochs(ParamStore<T>& params, const UNetConfig& net, const TrainConfig& cfg,
                          const Manifest& train_manifest, const Manifest& val_manifest) {
    if (cfg.epochs < 1) throw UsageError("train_epochs: epochs must be at least 1");
    if (cfg.batch_size < 1) throw UsageError("train_epochs: batch_size must be at least 1");
    if (train_manifest.count(Split::train) == 0) throw UsageError("train_epochs: empty train manifest");
    if (val_manifest.count(Split::val) == 0) throw UsageError("train_epochs: empty val manifest");

    PipelineConfig pipe = cfg.pipeline;
    pipe.batch_size = cfg.batch_size;
    AdamState<T> opt = AdamState<T>::init(params, static_cast<T>(cfg.lr));

    TrainHistory history;
    double best_dice = -1.0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const uint64_t epoch_seed = Rng::mix(cfg.seed, static_cast<uint64_t>(epoch));
        BatchStream<T> stream(train_manifest, Split::train, pipe, epoch_seed, cfg.augment);

        double loss_sum = 0.0;
        int64_t sample_sum = 0;
        int64_t batch_index = 0;
        while (auto batch = stream.next()) {
            const double loss = train_step(params, net, opt, *batch);
            if (!std::isfinite(loss))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            loss_sum += loss * static_cast<double>(batch->ids.size());
            sample_sum += static_cast<int64_t>(batch->ids.size());
            ++batch_index;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(sample_sum);

        // validation: no augmentation, no gradient tracking
        double val_loss_sum = 0.0, val_dice_sum = 0.0;
        int64_t val_count = 0;
        for (const auto& rec : val_manifest.records) {
            if (rec.split != Split::val) continue;
            auto [img, mask] = load_sample(rec, pipe);
            const int64_t s = pipe.image_size;
            Tensor<T> x({1, 1, s, s});
            Tensor<T> target({1, 1, s, s});
            for (int64_t i = 0; i < s * s; ++i) {
                x.data[static_cast<size_t>(i)] = static_cast<T>(img.pixels[static_cast<size_t>(i)]);
                target.data[static_cast<size_t>(i)] = static_cast<T>(mask.bits[static_cast<size_t>(i)]);
            }
            const Tensor<T> pred = unet_forward(params, net, x);
            val_loss_sum += static_cast<double>(bce_loss(pred, target).data[0]);
            val_dice_sum += dice(binarize_plane(pred, 0, 0, 0.5), mask);
            ++val_count;
        }
        stats.val_loss = val_loss_sum / static_cast<double>(val_count);
        stats.val_dice = val_dice_sum / static_cast<double>(val_count);
        history.push_back(stats);

        if (stats.val_dice > best_dice) {
            best_dice = stats.val_dice;
            if (!cfg.checkpoint_path.empty()) save_checkpoint(params, net, cfg.checkpoint_path);
        }
        if (cfg.log != nullptr && cfg.report_every > 0 &&
            (epoch % cfg.report_every == 0 || epoch == cfg.epochs - 1)) {
            char line[160];
            std::snprintf(line, sizeof(line), "epoch %lld  train_loss %.6f  val_loss %.6f  val_dice %.6f",
                          static_cast<long long>(epoch), stats.train_loss, stats.val_loss, stats.val_dice);
            (*cfg.log) << line << std::endl;
        }
    }
    return history;
}

// History TSV: optional "# key=value" comment lines, then one row per epoch.
inline void write_history_tsv(const TrainHistory& history, const std::string& path,
                              const std::vector<std::string>& header_comments = {}) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open history for writing: " + path);
    for (const auto& line : header_comments) os << "# " << line << "\n";
    os << "# epoch\ttrain_loss\tval_loss\tval_dice\n";
    char buf[160];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6f\t%.6f", static_cast<long long>(e.epoch),
                      e.train_loss, e.val_loss, e.val_dice);
        os << buf << "\n";
    }
    if (!os) throw IoError("write failed for history: " + path);
}

}  // namespace lungseg
