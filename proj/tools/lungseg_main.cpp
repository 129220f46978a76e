// lungseg: lung-field segmentation for chest radiographs.
//
// Subcommands:
//   synth    generate synthetic phantom image/mask pairs (generic layout)
//   train    scan dataset roots, split, train a U-Net, write checkpoint
//   eval     evaluate a checkpoint on one split, report per-sample DICE
//   predict  segment a single radiograph with a trained checkpoint
//
// Exit codes: 0 success, 1 usage/config, 2 I/O or file format, 3 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "lungseg/checkpoint.hpp"
#include "lungseg/dataset.hpp"
#include "lungseg/eval.hpp"
#include "lungseg/image_io.hpp"
#include "lungseg/phantom.hpp"
#include "lungseg/trainer.hpp"
#include "lungseg/unet.hpp"

namespace {

using namespace lungseg;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

// key=value lines shown on stdout and prepended to emitted TSV files.
struct RunHeader {
    std::vector<std::string> lines;

    void add(const std::string& key, const std::string& value) { lines.push_back(key + "=" + value); }
    void add(const std::string& key, int64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, uint64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, double value) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%g", value);
        add(key, std::string(buf));
    }
    void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }

    void print(std::ostream& os) const {
        for (const auto& line : lines) os << line << "\n";
    }
};

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out_dir;
    int64_t count = 0;
    int64_t size = 64;
    uint64_t seed = 42;
    std::string format = "png";
};

int run_synth(const SynthArgs& args) {
    if (args.count < 1) throw UsageError("--count must be at least 1");
    if (args.format != "png" && args.format != "pgm") throw UsageError("--format must be png or pgm");

    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + args.out_dir);

    RunHeader header;
    header.add("command", std::string("synth"));
    header.add("out", args.out_dir);
    header.add("count", args.count);
    header.add("size", args.size);
    header.add("seed", args.seed);
    header.print(std::cout);

    Manifest manifest;
    manifest.provenance = "synthetic phantoms seed=" + std::to_string(args.seed) +
                          " size=" + std::to_string(args.size);
    for (int64_t i = 0; i < args.count; ++i) {
        Rng rng(Rng::mix(args.seed, static_cast<uint64_t>(i)));
        auto [img, mask] = synth_phantom(rng, args.size);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "phantom_%04lld", static_cast<long long>(i));
        const std::string image_path = args.out_dir + "/" + stem + "." + args.format;
        const std::string mask_path = args.out_dir + "/" + stem + "_mask." + args.format;
        write_gray_image(img, image_path);
        write_mask(mask, mask_path);
        manifest.records.push_back({stem, image_path, {mask_path}, Source::synthetic, Split::unassigned});
    }
    write_manifest_tsv(manifest, args.out_dir + "/manifest.tsv");
    std::cout << "wrote " << args.count << " phantom pairs to " << args.out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// shared dataset scanning for train/eval

Manifest scan_roots(const std::vector<std::string>& roots, const std::vector<std::string>& layouts,
                    std::vector<SkippedEntry>* skipped_out = nullptr) {
    if (roots.empty()) throw UsageError("at least one --data root is required");
    if (layouts.size() > 1 && layouts.size() != roots.size())
        throw UsageError("--layout must be given once or once per --data root");

    Manifest merged;
    for (size_t i = 0; i < roots.size(); ++i) {
        const std::string& layout_name = layouts.empty() ? "generic" : layouts[std::min(i, layouts.size() - 1)];
        ScanResult scan = scan_dataset(roots[i], layout_from_string(layout_name));
        for (const auto& e : scan.skipped) {
            std::cerr << "skipped: " << e.path << " (" << e.reason << ")\n";
            if (skipped_out != nullptr) skipped_out->push_back(e);
        }
        for (auto& rec : scan.manifest.records) {
            for (const auto& existing : merged.records)
                if (existing.id == rec.id)
                    throw UsageError("duplicate sample id across roots: " + rec.id);
            merged.records.push_back(std::move(rec));
        }
        merged.provenance += (merged.provenance.empty() ? "" : " + ") + scan.manifest.provenance;
    }
    return merged;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::vector<std::string> roots;
    std::vector<std::string> layouts;
    std::string out_ckpt;
    std::string history_path;
    std::string manifest_path;
    std::string config_path;
    std::string profile = "desk";
    // -1 means "take the profile default"
    int64_t epochs = -1;
    int64_t batch = 4;
    double lr = 0.0005;
    uint64_t seed = 42;
    int64_t size = -1;
    int64_t depth = -1;
    int64_t base = -1;
    int64_t dilate_iters = 1;
    double zoom_range = 0.05;
    double shift_range = 0.05;
    double hflip_prob = 0.5;
    bool no_augment = false;
};

// Flat key=value config file: file values fill in anything not set by a
// command-line flag, and unknown keys are errors.
void apply_train_config(const std::string& path, const CLI::App& cmd, TrainArgs& args) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);

    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    auto to_i64 = [](const std::string& key, const std::string& v) -> int64_t {
        try {
            size_t used = 0;
            const long long r = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw UsageError("config value for '" + key + "' is not an integer: " + v);
        }
    };
    auto to_f64 = [](const std::string& key, const std::string& v) -> double {
        try {
            size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw UsageError("config value for '" + key + "' is not a number: " + v);
        }
    };
    auto to_bool = [](const std::string& key, const std::string& v) -> bool {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw UsageError("config value for '" + key + "' is not a boolean: " + v);
    };
    auto flag_given = [&cmd](const std::string& flag) { return cmd.count(flag) > 0; };

    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) + " is not key=value: " + text);
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));

        if (key == "epochs") { if (!flag_given("--epochs")) args.epochs = to_i64(key, value); }
        else if (key == "batch") { if (!flag_given("--batch")) args.batch = to_i64(key, value); }
        else if (key == "lr") { if (!flag_given("--lr")) args.lr = to_f64(key, value); }
        else if (key == "seed") { if (!flag_given("--seed")) args.seed = static_cast<uint64_t>(to_i64(key, value)); }
        else if (key == "size") { if (!flag_given("--size")) args.size = to_i64(key, value); }
        else if (key == "depth") { if (!flag_given("--depth")) args.depth = to_i64(key, value); }
        else if (key == "base") { if (!flag_given("--base")) args.base = to_i64(key, value); }
        else if (key == "profile") { if (!flag_given("--profile")) args.profile = value; }
        else if (key == "dilate_iters") { if (!flag_given("--dilate-iters")) args.dilate_iters = to_i64(key, value); }
        else if (key == "zoom_range") { if (!flag_given("--zoom-range")) args.zoom_range = to_f64(key, value); }
        else if (key == "shift_range") { if (!flag_given("--shift-range")) args.shift_range = to_f64(key, value); }
        else if (key == "hflip_prob") { if (!flag_given("--hflip-prob")) args.hflip_prob = to_f64(key, value); }
        else if (key == "augment") { if (!flag_given("--no-augment")) args.no_augment = !to_bool(key, value); }
        else if (key == "data") { if (!flag_given("--data")) args.roots.push_back(value); }
        else if (key == "layout") { if (!flag_given("--layout")) args.layouts.push_back(value); }
        else if (key == "out") { if (!flag_given("--out")) args.out_ckpt = value; }
        else if (key == "history") { if (!flag_given("--history")) args.history_path = value; }
        else if (key == "manifest") { if (!flag_given("--manifest")) args.manifest_path = value; }
        else throw UsageError("unknown config key: " + key);
    }
}

void resolve_profile(const std::string& profile, int64_t& size, int64_t& depth, int64_t& base,
                     int64_t& epochs) {
    if (profile == "desk") {
        if (size < 0) size = 64;
        if (depth < 0) depth = 3;
        if (base < 0) base = 8;
        if (epochs < 0) epochs = 10;
    } else if (profile == "paper") {
        if (size < 0) size = 512;
        if (depth < 0) depth = 4;
        if (base < 0) base = 64;
        if (epochs < 0) epochs = 200;
    } else {
        throw UsageError("unknown profile: " + profile + " (expected desk or paper)");
    }
}

int run_train(TrainArgs args) {
    resolve_profile(args.profile, args.size, args.depth, args.base, args.epochs);
    if (args.out_ckpt.empty()) throw UsageError("--out checkpoint path is required");
    if (args.history_path.empty()) args.history_path = args.out_ckpt + ".history.tsv";

    UNetConfig net;
    net.in_channels = 1;
    net.out_channels = 1;
    net.depth = args.depth;
    net.base_channels = args.base;
    net.input_size = args.size;
    net.validate();

    TrainConfig cfg;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.lr = args.lr;
    cfg.seed = args.seed;
    cfg.augment = !args.no_augment;
    cfg.pipeline.image_size = args.size;
    cfg.pipeline.dilate_iterations = args.dilate_iters;
    cfg.pipeline.aug.zoom_range = args.zoom_range;
    cfg.pipeline.aug.shift_range = args.shift_range;
    cfg.pipeline.aug.hflip_prob = args.hflip_prob;
    cfg.checkpoint_path = args.out_ckpt;
    cfg.log = &std::cout;

    RunHeader header;
    header.add("command", std::string("train"));
    for (const auto& r : args.roots) header.add("data", r);
    header.add("profile", args.profile);
    header.add("size", args.size);
    header.add("depth", args.depth);
    header.add("base_channels", args.base);
    header.add("epochs", cfg.epochs);
    header.add("batch_size", cfg.batch_size);
    header.add("lr", cfg.lr);
    header.add("seed", cfg.seed);
    header.add("augment", cfg.augment);
    header.add("zoom_range", cfg.pipeline.aug.zoom_range);
    header.add("shift_range", cfg.pipeline.aug.shift_range);
    header.add("hflip_prob", cfg.pipeline.aug.hflip_prob);
    header.add("dilate_iterations", args.dilate_iters);
    header.add("checkpoint", args.out_ckpt);
    header.print(std::cout);

    std::vector<SkippedEntry> skipped;
    Manifest manifest = scan_roots(args.roots, args.layouts, &skipped);
    if (!skipped.empty()) {
        const std::string skipped_path = args.out_ckpt + ".skipped.txt";
        write_skipped_report(skipped, skipped_path);
        std::cout << "skipped " << skipped.size() << " file(s), see " << skipped_path << "\n";
    }
    split(manifest, args.seed);
    std::cout << "samples: " << manifest.records.size() << " (train " << manifest.count(Split::train)
              << ", val " << manifest.count(Split::val) << ", test " << manifest.count(Split::test) << ")\n";
    if (!args.manifest_path.empty()) write_manifest_tsv(manifest, args.manifest_path);

    auto params = build_unet<float>(net, args.seed);
    const TrainHistory history = train_epochs(params, net, cfg, manifest, manifest);
    write_history_tsv(history, args.history_path, header.lines);

    std::cout << "best checkpoint: " << args.out_ckpt << "\n";
    std::cout << "history: " << args.history_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string ckpt;
    std::vector<std::string> roots;
    std::vector<std::string> layouts;
    std::string manifest_path;
    std::string split_name = "test";
    std::string out_tsv = "eval_report.tsv";
    uint64_t seed = 42;
    double threshold = 0.5;
    int64_t dilate_iters = 1;
};

int run_eval(const EvalArgs& args) {
    if (args.threshold < 0.0 || args.threshold > 1.0) throw UsageError("--threshold must be in [0,1]");
    auto [params, net] = load_checkpoint(args.ckpt);

    Manifest manifest;
    if (!args.manifest_path.empty()) {
        manifest = read_manifest_tsv(args.manifest_path);
    } else {
        manifest = scan_roots(args.roots, args.layouts);
        split(manifest, args.seed);
    }
    const Split split_tag = split_from_string(args.split_name);

    PipelineConfig pipe;
    pipe.image_size = net.input_size;
    pipe.dilate_iterations = args.dilate_iters;

    RunHeader header;
    header.add("command", std::string("eval"));
    header.add("checkpoint", args.ckpt);
    header.add("split", args.split_name);
    header.add("threshold", args.threshold);
    header.add("size", net.input_size);
    header.add("depth", net.depth);
    header.add("base_channels", net.base_channels);
    header.add("seed", args.seed);
    header.print(std::cout);

    const EvalReport report = evaluate(params, net, manifest, split_tag, pipe, args.threshold);
    write_report_tsv(report, args.out_tsv);
    std::cout << format_summary(report);
    std::cout << "per-sample report: " << args.out_tsv << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::string ckpt;
    std::string image_path;
    std::string out_mask;
    std::string overlay_path;
    double threshold = 0.5;
};

int run_predict(const PredictArgs& args) {
    if (args.threshold < 0.0 || args.threshold > 1.0) throw UsageError("--threshold must be in [0,1]");
    auto [params, net] = load_checkpoint(args.ckpt);

    const GrayImage original = read_gray_image(args.image_path);
    const GrayImage scaled = normalize(resize(original, net.input_size, net.input_size, ResizeMode::bilinear));

    Tensor<float> x({1, 1, net.input_size, net.input_size});
    for (size_t i = 0; i < scaled.pixels.size(); ++i) x.data[i] = scaled.pixels[i];
    const Tensor<float> pred = unet_forward(params, net, x);

    const BinaryMask small = binarize_plane(pred, 0, 0, args.threshold);
    const BinaryMask mask = resize(small, original.width, original.height);
    write_mask(mask, args.out_mask);
    std::cout << "mask: " << args.out_mask << " (" << mask.width << "x" << mask.height << ", foreground "
              << mask.foreground_count() << ")\n";

    if (!args.overlay_path.empty()) {
        write_gray_image(draw_boundary_overlay(normalize(original), mask), args.overlay_path);
        std::cout << "overlay: " << args.overlay_path << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lung-field segmentation toolkit for chest radiographs"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic phantom pairs");
    synth_cmd->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth_cmd->add_option("--count", synth_args.count, "number of phantom pairs")->required();
    synth_cmd->add_option("--size", synth_args.size, "square image size (min 32)");
    synth_cmd->add_option("--seed", synth_args.seed, "generator seed");
    synth_cmd->add_option("--format", synth_args.format, "image format: png or pgm");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train a segmentation model");
    train_cmd->add_option("--data", train_args.roots, "dataset root(s)");
    train_cmd->add_option("--layout", train_args.layouts, "dataset layout per root (montgomery|shenzhen|generic)");
    train_cmd->add_option("--out", train_args.out_ckpt, "checkpoint output path");
    train_cmd->add_option("--history", train_args.history_path, "history TSV path (default <ckpt>.history.tsv)");
    train_cmd->add_option("--manifest", train_args.manifest_path, "write the split manifest TSV here");
    train_cmd->add_option("--config", train_args.config_path, "key=value config file (flags override file values)");
    train_cmd->add_option("--profile", train_args.profile, "desk (64px) or paper (512px) defaults");
    train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
    train_cmd->add_option("--batch", train_args.batch, "batch size");
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
    train_cmd->add_option("--seed", train_args.seed, "split/init/shuffle seed");
    train_cmd->add_option("--size", train_args.size, "input size override");
    train_cmd->add_option("--depth", train_args.depth, "pooling stages override");
    train_cmd->add_option("--base", train_args.base, "first-level channels override");
    train_cmd->add_option("--dilate-iters", train_args.dilate_iters, "dilation iterations for montgomery masks");
    train_cmd->add_option("--zoom-range", train_args.zoom_range, "augmentation zoom range");
    train_cmd->add_option("--shift-range", train_args.shift_range, "augmentation shift range");
    train_cmd->add_option("--hflip-prob", train_args.hflip_prob, "augmentation horizontal flip probability");
    train_cmd->add_flag("--no-augment", train_args.no_augment, "disable data augmentation");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_args.roots, "dataset root(s)");
    eval_cmd->add_option("--layout", eval_args.layouts, "dataset layout per root");
    eval_cmd->add_option("--manifest", eval_args.manifest_path, "use a previously written manifest TSV");
    eval_cmd->add_option("--split", eval_args.split_name, "split to evaluate (default test)");
    eval_cmd->add_option("--seed", eval_args.seed, "split seed (must match training)");
    eval_cmd->add_option("--out", eval_args.out_tsv, "per-sample report TSV path");
    eval_cmd->add_option("--threshold", eval_args.threshold, "binarization threshold");
    eval_cmd->add_option("--dilate-iters", eval_args.dilate_iters, "dilation iterations for montgomery masks");

    PredictArgs predict_args;
    CLI::App* predict_cmd = app.add_subcommand("predict", "segment one radiograph");
    predict_cmd->add_option("--ckpt", predict_args.ckpt, "checkpoint path")->required();
    predict_cmd->add_option("--image", predict_args.image_path, "input radiograph (PNG or PGM)")->required();
    predict_cmd->add_option("--out", predict_args.out_mask, "output mask path")->required();
    predict_cmd->add_option("--overlay", predict_args.overlay_path, "optional boundary overlay image");
    predict_cmd->add_option("--threshold", predict_args.threshold, "binarization threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (train_cmd->parsed()) {
            if (!train_args.config_path.empty()) apply_train_config(train_args.config_path, *train_cmd, train_args);
            return run_train(train_args);
        }
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (predict_cmd->parsed()) return run_predict(predict_args);
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
