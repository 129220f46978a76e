#include <gtest/gtest.h>

#include <fstream>

#include "lungseg/checkpoint.hpp"
#include "lungseg/unet.hpp"
#include "test_util.hpp"

using namespace lungseg;
using lungseg::testing::random_tensor;
using lungseg::testing::TempDir;

namespace {

// Parameter-count oracle: enumerates the layer schedule independently of
// unet_layer_plan and sums cout*cin*k*k + cout per convolution.
int64_t expected_param_count(int64_t in_ch, int64_t out_ch, int64_t depth, int64_t base) {
    auto conv = [](int64_t cin, int64_t cout, int64_t k) { return cout * cin * k * k + cout; };
    int64_t total = 0;
    int64_t prev = in_ch;
    for (int64_t i = 0; i < depth; ++i) {
        const int64_t ch = base << i;
        total += conv(prev, ch, 3) + conv(ch, ch, 3);
        prev = ch;
    }
    const int64_t mid = base << depth;
    total += conv(prev, mid, 3) + conv(mid, mid, 3);
    prev = mid;
    for (int64_t i = depth - 1; i >= 0; --i) {
        const int64_t ch = base << i;
        total += conv(prev, ch, 3) + conv(2 * ch, ch, 3) + conv(ch, ch, 3);
        prev = ch;
    }
    total += conv(prev, out_ch, 1);
    return total;
}

}  // namespace

TEST(BuildUNet, SameSeedGivesIdenticalParams) {
    const auto cfg = UNetConfig::desk();
    const auto a = build_unet<float>(cfg, 17);
    const auto b = build_unet<float>(cfg, 17);
    ASSERT_EQ(a.by_name.size(), b.by_name.size());
    for (const auto& [name, t] : a.by_name) {
        const auto& u = b.at(name);
        EXPECT_EQ(t.shape, u.shape) << name;
        EXPECT_EQ(t.data, u.data) << name;
    }
}

TEST(BuildUNet, DifferentSeedDiffers) {
    const auto cfg = UNetConfig::desk();
    const auto a = build_unet<float>(cfg, 17);
    const auto b = build_unet<float>(cfg, 18);
    EXPECT_NE(a.at("enc0.conv1.w").data, b.at("enc0.conv1.w").data);
}

TEST(BuildUNet, ParamCountMatchesCountingOracle) {
    const auto desk = build_unet<float>(UNetConfig::desk(), 1);
    EXPECT_EQ(desk.total_elements(), expected_param_count(1, 1, 3, 8));
    EXPECT_EQ(desk.total_elements(), 134121);

    UNetConfig other{2, 3, 2, 4, 32};
    const auto params = build_unet<float>(other, 1);
    EXPECT_EQ(params.total_elements(), expected_param_count(2, 3, 2, 4));
}

TEST(BuildUNet, BiasesAreZeroAndWeightsScaled) {
    const auto params = build_unet<double>(UNetConfig::desk(), 23);
    for (const auto& [name, t] : params.by_name) {
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
            for (double v : t.data) EXPECT_EQ(v, 0.0) << name;
        }
    }
    // He scaling: sample stddev of a big weight tensor tracks sqrt(2/fan_in)
    const auto& w = params.at("bottleneck.conv2.w");  // fan_in = 64*9
    double sq = 0.0;
    for (double v : w.data) sq += v * v;
    const double sd = std::sqrt(sq / static_cast<double>(w.numel()));
    const double expected = std::sqrt(2.0 / (64.0 * 9.0));
    EXPECT_NEAR(sd, expected, 0.15 * expected);
}

TEST(BuildUNet, IndivisibleInputSizeIsConfigError) {
    UNetConfig cfg{1, 1, 3, 8, 100};
    EXPECT_THROW(build_unet<float>(cfg, 1), ConfigError);
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(BuildUNet, NonPositiveFieldsAreConfigErrors) {
    EXPECT_THROW((UNetConfig{0, 1, 3, 8, 64}).validate(), ConfigError);
    EXPECT_THROW((UNetConfig{1, 1, 3, -8, 64}).validate(), ConfigError);
}

TEST(LayerPlan, SkipConcatChannelBookkeeping) {
    const auto cfg = UNetConfig::desk();
    const auto params = build_unet<float>(cfg, 3);
    // at decoder level i the first conv consumes the concatenated tensor,
    // which must carry exactly 2*base*2^i channels
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const auto& w = params.at("dec" + std::to_string(i) + ".conv1.w");
        EXPECT_EQ(w.shape[1], 2 * (cfg.base_channels << i)) << i;
        EXPECT_EQ(w.shape[0], cfg.base_channels << i) << i;
    }
}

TEST(UNetForward, PreservesSpatialDimsAndSigmoidRange) {
    for (const int64_t size : {32, 64, 128}) {
        for (const int64_t depth : {1, 2, 3}) {
            UNetConfig cfg{1, 1, depth, 4, size};
            const auto params = build_unet<float>(cfg, 5);
            const auto x = random_tensor<float>({1, 1, size, size}, 6, 0.0, 1.0);
            const auto y = unet_forward(params, cfg, x);
            ASSERT_EQ(y.shape, (Shape{1, 1, size, size})) << size << " depth " << depth;
            for (const float v : y.data) {
                ASSERT_GT(v, 0.0f);
                ASSERT_LT(v, 1.0f);
            }
        }
    }
}

TEST(UNetForward, NonSquareInputsWork) {
    UNetConfig cfg{1, 1, 2, 4, 32};
    const auto params = build_unet<float>(cfg, 12);
    const auto x = random_tensor<float>({1, 1, 32, 64}, 13, 0.0, 1.0);
    EXPECT_EQ(unet_forward(params, cfg, x).shape, (Shape{1, 1, 32, 64}));
}

TEST(UNetForward, IndivisibleSpatialSizeThrows) {
    UNetConfig cfg{1, 1, 3, 4, 64};
    const auto params = build_unet<float>(cfg, 7);
    EXPECT_THROW(unet_forward(params, cfg, random_tensor<float>({1, 1, 50, 50}, 8)), ShapeError);
    EXPECT_THROW(unet_forward(params, cfg, random_tensor<float>({1, 1, 64, 36}, 8)), ShapeError);
}

TEST(UNetForward, WrongChannelCountThrows) {
    UNetConfig cfg{1, 1, 2, 4, 32};
    const auto params = build_unet<float>(cfg, 9);
    EXPECT_THROW(unet_forward(params, cfg, random_tensor<float>({1, 2, 32, 32}, 10)), ShapeError);
}

TEST(UNetForward, SeedReproducibleOutputs) {
    const auto cfg = UNetConfig::desk();
    const auto x = random_tensor<float>({1, 1, 64, 64}, 11, 0.0, 1.0);
    const auto y1 = unet_forward(build_unet<float>(cfg, 42), cfg, x);
    const auto y2 = unet_forward(build_unet<float>(cfg, 42), cfg, x);
    EXPECT_EQ(y1.data, y2.data);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir tmp;
    UNetConfig cfg{1, 1, 2, 4, 32};
    const auto params = build_unet<float>(cfg, 21);
    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(params, cfg, path);

    const auto [loaded, loaded_cfg] = load_checkpoint(path);
    EXPECT_EQ(loaded_cfg.depth, cfg.depth);
    EXPECT_EQ(loaded_cfg.base_channels, cfg.base_channels);
    EXPECT_EQ(loaded_cfg.input_size, cfg.input_size);
    ASSERT_EQ(loaded.by_name.size(), params.by_name.size());
    for (const auto& [name, t] : params.by_name) EXPECT_EQ(loaded.at(name).data, t.data) << name;

    const auto x = random_tensor<float>({1, 1, 32, 32}, 22, 0.0, 1.0);
    EXPECT_EQ(unet_forward(params, cfg, x).data, unet_forward(loaded, loaded_cfg, x).data);
}

TEST(Checkpoint, CorruptedMagicIsFormatError) {
    TempDir tmp;
    UNetConfig cfg{1, 1, 1, 2, 16};
    const std::string path = tmp.file("bad.ckpt");
    save_checkpoint(build_unet<float>(cfg, 1), cfg, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
    TempDir tmp;
    UNetConfig cfg{1, 1, 1, 2, 16};
    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(build_unet<float>(cfg, 1), cfg, path);

    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string cut = tmp.file("cut.ckpt");
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    EXPECT_THROW(load_checkpoint(cut), FormatError);
}

TEST(Checkpoint, NameSetMismatchIsFormatError) {
    TempDir tmp;
    UNetConfig cfg{1, 1, 2, 2, 16};
    const std::string path = tmp.file("model.ckpt");
    save_checkpoint(build_unet<float>(cfg, 1), cfg, path);
    {
        // depth lives at byte 16 (magic 4, version 4, in 4, out 4); bumping it
        // to 1 keeps the config valid but desyncs the expected name set
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(16);
        const char one[4] = {1, 0, 0, 0};
        f.write(one, 4);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, MissingFileIsIoError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), IoError);
}

TEST(Checkpoint, LoadedConfigReportsDepth) {
    TempDir tmp;
    UNetConfig cfg{1, 1, 3, 2, 32};
    const std::string path = tmp.file("d3.ckpt");
    save_checkpoint(build_unet<float>(cfg, 2), cfg, path);
    EXPECT_EQ(load_checkpoint(path).second.depth, 3);
}
