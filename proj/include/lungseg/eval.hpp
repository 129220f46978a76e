#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lungseg/dataset.hpp"
#include "lungseg/image.hpp"
#include "lungseg/unet.hpp"

namespace lungseg {

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;
    int64_t tn = 0;

    int64_t total() const { return tp + fp + fn + tn; }
};

// Thresholds a real-valued raster; ties at the threshold go to foreground.
inline BinaryMask binarize(const GrayImage& pred, double threshold = 0.5) {
    BinaryMask out(pred.width, pred.height);
    for (size_t i = 0; i < pred.pixels.size(); ++i)
        out.bits[i] = static_cast<double>(pred.pixels[i]) >= threshold ? 1 : 0;
    return out;
}

// Thresholds one [H,W] plane of an NCHW tensor.
template <typename T>
BinaryMask binarize_plane(const Tensor<T>& t, int64_t n, int64_t c, double threshold = 0.5) {
    if (t.shape.size() != 4) throw ShapeError("binarize_plane expects an NCHW tensor");
    const int64_t h = t.shape[2], w = t.shape[3];
    BinaryMask out(w, h);
    const T* src = t.data.data() + ((n * t.shape[1] + c) * h) * w;
    for (int64_t i = 0; i < h * w; ++i) out.bits[static_cast<size_t>(i)] = static_cast<double>(src[i]) >= threshold ? 1 : 0;
    return out;
}

inline ConfusionCounts confusion(const BinaryMask& s, const BinaryMask& gt) {
    if (s.width != gt.width || s.height != gt.height)
        throw ShapeError("confusion mask dimension mismatch");
    ConfusionCounts c;
    for (size_t i = 0; i < s.bits.size(); ++i) {
        const bool ps = s.bits[i] != 0, pg = gt.bits[i] != 0;
        if (ps && pg) ++c.tp;
        else if (ps && !pg) ++c.fp;
        else if (!ps && pg) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// 2*TP / (2*TP + FN + FP). Two empty masks agree perfectly: 1.0.
inline double dice_from_counts(const ConfusionCounts& c) {
    const int64_t denom = 2 * c.tp + c.fn + c.fp;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double dice(const BinaryMask& s, const BinaryMask& gt) { return dice_from_counts(confusion(s, gt)); }

// DICE scores reported by earlier published work on these datasets, carried
// in evaluation summaries for context. Percentages; not locally reproduced.
struct ReferenceScore {
    const char* method;
    double dice_percent;
};

inline constexpr ReferenceScore kReferenceScores[] = {
    {"Candemir et al.", 94.1},
    {"ED-CNN", 97.4},
    {"FCN", 97.7},
    {"proposed model", 98.6},
};

struct EvalReport {
    std::vector<std::pair<std::string, double>> per_sample;  // (id, dice)
    double mean_dice = 0.0;
    double std_dice = 0.0;

    int64_t sample_count() const { return static_cast<int64_t>(per_sample.size()); }
};

// Evaluates a model over one split of a manifest: deterministic, no
// augmentation, mean-over-images DICE.
template <typename T>
EvalReport evaluate(const ParamStore<T>& params, const UNetConfig& net, const Manifest& manifest,
                    Split split_tag, const PipelineConfig& pipe, double threshold = 0.5) {
    std::vector<const SampleRecord*> members;
    for (const auto& r : manifest.records)
        if (r.split == split_tag) members.push_back(&r);
    if (members.empty())
        throw UsageError(std::string("evaluate: split '") + to_string(split_tag) + "' has no samples");

    EvalReport report;
    const int64_t s = pipe.image_size;
    for (const SampleRecord* rec : members) {
        auto [img, mask] = load_sample(*rec, pipe);
        Tensor<T> x({1, 1, s, s});
        for (int64_t i = 0; i < s * s; ++i) x.data[static_cast<size_t>(i)] = static_cast<T>(img.pixels[static_cast<size_t>(i)]);
        const Tensor<T> pred = unet_forward(params, net, x);
        report.per_sample.emplace_back(rec->id, dice(binarize_plane(pred, 0, 0, threshold), mask));
    }

    double sum = 0.0;
    for (const auto& [id, d] : report.per_sample) sum += d;
    report.mean_dice = sum / static_cast<double>(report.per_sample.size());
    double var = 0.0;
    for (const auto& [id, d] : report.per_sample) var += (d - report.mean_dice) * (d - report.mean_dice);
    report.std_dice = std::sqrt(var / static_cast<double>(report.per_sample.size()));
    return report;
}

inline void write_report_tsv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open report for writing: " + path);
    os << "# id\tdice\n";
    char buf[64];
    for (const auto& [id, d] : report.per_sample) {
        std::snprintf(buf, sizeof(buf), "%.6f", d);
        os << id << '\t' << buf << '\n';
    }
    if (!os) throw IoError("write failed for report: " + path);
}

inline std::string format_summary(const EvalReport& report) {
    std::ostringstream os;
    char buf[64];
    os << "samples evaluated: " << report.sample_count() << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", report.mean_dice);
    os << "mean DICE: " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", report.std_dice);
    os << "std DICE:  " << buf << "\n";
    os << "reference DICE scores (paper-reported, not locally reproduced):\n";
    for (const ReferenceScore& ref : kReferenceScores) {
        std::snprintf(buf, sizeof(buf), "%.1f", ref.dice_percent);
        os << "  " << ref.method;
        for (size_t pad = std::strlen(ref.method); pad < 18; ++pad) os << ' ';
        os << buf << "\n";
    }
    return os.str();
}

}  // namespace lungseg
