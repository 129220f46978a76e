#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lungseg/image.hpp"
#include "lungseg/image_io.hpp"
#include "lungseg/rng.hpp"
#include "lungseg/tensor.hpp"

namespace lungseg {

enum class Source { montgomery, shenzhen, generic, synthetic };
enum class Split { train, val, test, unassigned };

inline const char* to_string(Source s) {
    switch (s) {
        case Source::montgomery: return "montgomery";
        case Source::shenzhen: return "shenzhen";
        case Source::generic: return "generic";
        case Source::synthetic: return "synthetic";
    }
    return "generic";
}

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

inline Source source_from_string(const std::string& s) {
    if (s == "montgomery") return Source::montgomery;
    if (s == "shenzhen") return Source::shenzhen;
    if (s == "generic") return Source::generic;
    if (s == "synthetic") return Source::synthetic;
    throw FormatError("unknown source tag: " + s);
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    throw FormatError("unknown split tag: " + s);
}

// One dataset sample. Montgomery records carry two mask paths (left/right);
// every other source carries exactly one.
struct SampleRecord {
    std::string id;
    std::string image_path;
    std::vector<std::string> mask_paths;
    Source source = Source::generic;
    Split split = Split::unassigned;
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::string provenance;

    int64_t count(Split s) const {
        int64_t n = 0;
        for (const auto& r : records) n += r.split == s ? 1 : 0;
        return n;
    }

    Manifest subset(Split s) const {
        Manifest m;
        m.provenance = provenance;
        for (const auto& r : records)
            if (r.split == s) m.records.push_back(r);
        return m;
    }
};

enum class DatasetLayout { montgomery, shenzhen, generic };

inline const char* to_string(DatasetLayout l) {
    switch (l) {
        case DatasetLayout::montgomery: return "montgomery";
        case DatasetLayout::shenzhen: return "shenzhen";
        case DatasetLayout::generic: return "generic";
    }
    return "generic";
}

inline DatasetLayout layout_from_string(const std::string& s) {
    if (s == "montgomery") return DatasetLayout::montgomery;
    if (s == "shenzhen") return DatasetLayout::shenzhen;
    if (s == "generic") return DatasetLayout::generic;
    throw UsageError("unknown dataset layout: " + s + " (expected montgomery, shenzhen or generic)");
}

struct SkippedEntry {
    std::string path;
    std::string reason;
};

struct ScanResult {
    Manifest manifest;
    std::vector<SkippedEntry> skipped;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".pgm";
}

inline bool path_has_dir(const std::filesystem::path& p, const std::string& dir_name) {
    for (const auto& part : p.parent_path())
        if (part.string() == dir_name) return true;
    return false;
}

inline bool stem_ends_with(const std::string& stem, const std::string& suffix) {
    return stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Discovers image/mask pairs under `root`. Layout conventions:
//   montgomery: masks live under leftMask/ and rightMask/ directories and
//               share the image's file stem; a record needs both sides.
//   shenzhen:   one mask per image, stem equal to the image stem or the
//               image stem + "_mask" (the public layout uses the latter).
//   generic:    "<stem>_mask.<ext>" next to "<stem>.<ext>".
// Images without a complete mask set go to the skipped-report instead of
// being silently dropped.
inline ScanResult scan_dataset(const std::string& root, DatasetLayout layout) {
    namespace fs = std::filesystem;
    if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && detail::is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());  // directory iteration order is unspecified

    ScanResult result;
    result.manifest.provenance = "root=" + root + " layout=" + to_string(layout);
    std::set<std::string> used_ids;

    auto add_record = [&](const std::string& stem, const fs::path& image, std::vector<std::string> masks,
                          Source source) {
        if (!used_ids.insert(stem).second) {
            result.skipped.push_back({image.string(), "duplicate sample id '" + stem + "'"});
            return;
        }
        result.manifest.records.push_back({stem, image.string(), std::move(masks), source, Split::unassigned});
    };

    if (layout == DatasetLayout::montgomery) {
        std::map<std::string, fs::path> left, right;
        std::vector<fs::path> images;
        for (const auto& f : files) {
            if (detail::path_has_dir(f, "leftMask")) left[f.stem().string()] = f;
            else if (detail::path_has_dir(f, "rightMask")) right[f.stem().string()] = f;
            else images.push_back(f);
        }
        for (const auto& img : images) {
            const std::string stem = img.stem().string();
            const auto l = left.find(stem);
            const auto r = right.find(stem);
            if (l == left.end() || r == right.end()) {
                result.skipped.push_back(
                    {img.string(), l == left.end() ? "missing left mask" : "missing right mask"});
                continue;
            }
            add_record(stem, img, {l->second.string(), r->second.string()}, Source::montgomery);
        }
    } else if (layout == DatasetLayout::shenzhen) {
        std::map<std::string, fs::path> masks;
        std::vector<fs::path> images;
        for (const auto& f : files) {
            const std::string stem = f.stem().string();
            if (detail::path_has_dir(f, "mask") || detail::path_has_dir(f, "masks") ||
                detail::stem_ends_with(stem, "_mask"))
                masks[stem] = f;
            else
                images.push_back(f);
        }
        for (const auto& img : images) {
            const std::string stem = img.stem().string();
            auto m = masks.find(stem);
            if (m == masks.end()) m = masks.find(stem + "_mask");
            if (m == masks.end()) {
                result.skipped.push_back({img.string(), "missing mask"});
                continue;
            }
            add_record(stem, img, {m->second.string()}, Source::shenzhen);
        }
    } else {
        std::map<std::string, fs::path> masks;
        std::vector<fs::path> images;
        for (const auto& f : files) {
            const std::string stem = f.stem().string();
            if (detail::stem_ends_with(stem, "_mask")) masks[stem] = f;
            else images.push_back(f);
        }
        for (const auto& img : images) {
            const std::string stem = img.stem().string();
            const auto m = masks.find(stem + "_mask");
            if (m == masks.end()) {
                result.skipped.push_back({img.string(), "missing mask"});
                continue;
            }
            add_record(stem, img, {m->second.string()}, Source::generic);
        }
    }

    if (result.manifest.records.empty()) {
        std::ostringstream os;
        os << "no image/mask pairs found under " << root << " (layout " << to_string(layout) << ")";
        for (size_t i = 0; i < result.skipped.size() && i < 20; ++i)
            os << "\n  skipped: " << result.skipped[i].path << " (" << result.skipped[i].reason << ")";
        throw UsageError(os.str());
    }
    return result;
}

// Assigns splits in place with a seeded uniform shuffle:
// round(test_frac*N) test samples, round(val_frac*(N-test)) validation
// samples out of the remainder, rest train. Rounding is half-up.
inline void split(Manifest& manifest, uint64_t seed, double test_frac = 0.2, double val_frac_of_train = 0.1) {
    const int64_t n = static_cast<int64_t>(manifest.records.size());
    if (n < 3) throw UsageError("cannot split a manifest with fewer than 3 samples");
    for (const auto& r : manifest.records)
        if (r.split != Split::unassigned) throw UsageError("manifest already carries split assignments");

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    shuffle(order, rng);

    const int64_t n_test = std::llround(test_frac * static_cast<double>(n));
    const int64_t n_val = std::llround(val_frac_of_train * static_cast<double>(n - n_test));
    for (int64_t i = 0; i < n; ++i) {
        SampleRecord& rec = manifest.records[static_cast<size_t>(order[static_cast<size_t>(i)])];
        rec.split = i < n_test ? Split::test : (i < n_test + n_val ? Split::val : Split::train);
    }
    std::ostringstream os;
    os << manifest.provenance << " | split seed=" << seed << " test_frac=" << test_frac
       << " val_frac_of_train=" << val_frac_of_train;
    manifest.provenance = os.str();
}

// --- manifest / report persistence ---

inline void write_manifest_tsv(const Manifest& manifest, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open manifest for writing: " + path);
    if (!manifest.provenance.empty()) os << "# " << manifest.provenance << "\n";
    os << "# id\timage_path\tmask_paths\tsource\tsplit\n";
    for (const auto& r : manifest.records) {
        os << r.id << '\t' << r.image_path << '\t';
        for (size_t i = 0; i < r.mask_paths.size(); ++i) os << (i ? ";" : "") << r.mask_paths[i];
        os << '\t' << to_string(r.source) << '\t' << to_string(r.split) << '\n';
    }
    if (!os) throw IoError("write failed for manifest: " + path);
}

inline Manifest read_manifest_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    Manifest manifest;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (manifest.provenance.empty() && line.size() > 2) manifest.provenance = line.substr(2);
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 5) throw FormatError("malformed manifest row (expected 5 columns): " + line);
        SampleRecord rec;
        rec.id = cols[0];
        rec.image_path = cols[1];
        std::stringstream ms(cols[2]);
        std::string mp;
        while (std::getline(ms, mp, ';'))
            if (!mp.empty()) rec.mask_paths.push_back(mp);
        rec.source = source_from_string(cols[3]);
        rec.split = split_from_string(cols[4]);
        if (rec.mask_paths.empty()) throw FormatError("manifest row without mask paths: " + line);
        manifest.records.push_back(std::move(rec));
    }
    std::set<std::string> ids;
    for (const auto& r : manifest.records)
        if (!ids.insert(r.id).second) throw FormatError("duplicate sample id in manifest: " + r.id);
    return manifest;
}

inline void write_skipped_report(const std::vector<SkippedEntry>& skipped, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open skipped-report for writing: " + path);
    for (const auto& e : skipped) os << e.path << '\t' << e.reason << '\n';
}

// --- batch loading ---

struct PipelineConfig {
    int64_t image_size = 64;        // square side S every sample is resized to
    int64_t batch_size = 4;
    int64_t dilate_iterations = 1;  // applied to the combined montgomery mask
    AugmentParams aug;
};

template <typename T>
struct Batch {
    Tensor<T> images;  // [N,1,S,S], values in [0,1]
    Tensor<T> masks;   // [N,1,S,S], values in {0,1}
    std::vector<std::string> ids;
};

// Runs one record through the preprocessing chain: load, combine+dilate
// masks (montgomery), resize (bilinear image / nearest mask), normalize.
// Augmentation is applied separately by the caller.
inline std::pair<GrayImage, BinaryMask> load_sample(const SampleRecord& rec, const PipelineConfig& cfg) {
    GrayImage img = read_gray_image(rec.image_path);
    if (rec.mask_paths.empty()) throw UsageError("record " + rec.id + " has no mask paths");
    BinaryMask mask = read_mask(rec.mask_paths[0]);
    if (rec.source == Source::montgomery) {
        if (rec.mask_paths.size() != 2)
            throw UsageError("montgomery record " + rec.id + " must have exactly two mask paths");
        mask = dilate(union_masks(mask, read_mask(rec.mask_paths[1])), cfg.dilate_iterations);
    } else if (rec.mask_paths.size() != 1) {
        throw UsageError("record " + rec.id + " must have exactly one mask path");
    }
    img = normalize(resize(img, cfg.image_size, cfg.image_size, ResizeMode::bilinear));
    mask = resize(mask, cfg.image_size, cfg.image_size);
    return {std::move(img), std::move(mask)};
}

// Streams seeded-permutation batches of one split. The final partial batch
// is yielded as-is. Augmentation uses a per-sample stream derived from
// (epoch_seed, manifest index) so the sequence is reproducible.
template <typename T>
class BatchStream {
public:
    BatchStream(const Manifest& manifest, Split split, const PipelineConfig& cfg, uint64_t epoch_seed,
                bool augment_on)
        : manifest_(&manifest), cfg_(cfg), epoch_seed_(epoch_seed), augment_(augment_on) {
        if (cfg.batch_size < 1) throw UsageError("batch_size must be at least 1");
        for (size_t i = 0; i < manifest.records.size(); ++i)
            if (manifest.records[i].split == split) order_.push_back(static_cast<int64_t>(i));
        if (order_.empty())
            throw UsageError(std::string("split '") + to_string(split) + "' has no samples");
        Rng rng(epoch_seed);
        shuffle(order_, rng);
    }

    int64_t sample_count() const { return static_cast<int64_t>(order_.size()); }

    std::optional<Batch<T>> next() {
        if (cursor_ >= order_.size()) return std::nullopt;
        const size_t take = std::min(static_cast<size_t>(cfg_.batch_size), order_.size() - cursor_);
        const int64_t s = cfg_.image_size;

        Batch<T> batch;
        batch.images = Tensor<T>({static_cast<int64_t>(take), 1, s, s});
        batch.masks = Tensor<T>({static_cast<int64_t>(take), 1, s, s});
        for (size_t k = 0; k < take; ++k) {
            const int64_t rec_index = order_[cursor_ + k];
            const SampleRecord& rec = manifest_->records[static_cast<size_t>(rec_index)];
            auto [img, mask] = load_sample(rec, cfg_);
            if (augment_) {
                Rng rng(Rng::mix(epoch_seed_, static_cast<uint64_t>(rec_index)));
                std::tie(img, mask) = augment(img, mask, rng, cfg_.aug);
            }
            T* ip = batch.images.data.data() + static_cast<int64_t>(k) * s * s;
            T* mp = batch.masks.data.data() + static_cast<int64_t>(k) * s * s;
            for (int64_t i = 0; i < s * s; ++i) {
                ip[i] = static_cast<T>(img.pixels[static_cast<size_t>(i)]);
                mp[i] = static_cast<T>(mask.bits[static_cast<size_t>(i)]);
            }
            batch.ids.push_back(rec.id);
        }
        cursor_ += take;
        return batch;
    }

private:
    const Manifest* manifest_;
    PipelineConfig cfg_;
    uint64_t epoch_seed_;
    bool augment_;
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
};

template <typename T>
BatchStream<T> batch_iter(const Manifest& manifest, Split split, const PipelineConfig& cfg,
                          uint64_t epoch_seed, bool augment_on) {
    return BatchStream<T>(manifest, split, cfg, epoch_seed, augment_on);
}

}  // namespace lungseg
