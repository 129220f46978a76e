#include <gtest/gtest.h>

#include <fstream>

#include "lungseg/eval.hpp"
#include "lungseg/phantom.hpp"
#include "test_util.hpp"

using namespace lungseg;
using lungseg::testing::mirror_h;
using lungseg::testing::random_mask;
using lungseg::testing::TempDir;

namespace {

// independent double-loop confusion oracle
ConfusionCounts naive_confusion(const BinaryMask& s, const BinaryMask& gt) {
    ConfusionCounts c;
    for (int64_t y = 0; y < s.height; ++y)
        for (int64_t x = 0; x < s.width; ++x) {
            if (s.at(y, x) && gt.at(y, x)) ++c.tp;
            if (s.at(y, x) && !gt.at(y, x)) ++c.fp;
            if (!s.at(y, x) && gt.at(y, x)) ++c.fn;
            if (!s.at(y, x) && !gt.at(y, x)) ++c.tn;
        }
    return c;
}

double set_count_dice(const BinaryMask& s, const BinaryMask& gt) {
    int64_t inter = 0, cs = 0, cg = 0;
    for (size_t i = 0; i < s.bits.size(); ++i) {
        inter += (s.bits[i] && gt.bits[i]) ? 1 : 0;
        cs += s.bits[i];
        cg += gt.bits[i];
    }
    if (cs + cg == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(cs + cg);
}

}  // namespace

TEST(Binarize, AllAboveThresholdIsOnes) {
    GrayImage p(4, 4);
    for (auto& v : p.pixels) v = 0.9f;
    EXPECT_EQ(binarize(p).foreground_count(), 16);
}

TEST(Binarize, AllBelowThresholdIsZeros) {
    GrayImage p(4, 4);
    for (auto& v : p.pixels) v = 0.1f;
    EXPECT_EQ(binarize(p).foreground_count(), 0);
}

TEST(Binarize, TieGoesToForeground) {
    GrayImage p(1, 1);
    p.pixels[0] = 0.5f;
    EXPECT_EQ(binarize(p, 0.5).at(0, 0), 1);
}

TEST(Confusion, IdenticalMasksHaveNoErrors) {
    const auto m = random_mask(12, 12, 1);
    const auto c = confusion(m, m);
    EXPECT_EQ(c.fp, 0);
    EXPECT_EQ(c.fn, 0);
    EXPECT_EQ(c.tp, m.foreground_count());
}

TEST(Confusion, ComplementHasNoTruePositives) {
    auto m = random_mask(10, 10, 2);
    auto inv = m;
    for (auto& b : inv.bits) b = b ? 0 : 1;
    const auto c = confusion(m, inv);
    EXPECT_EQ(c.tp, 0);
    EXPECT_EQ(c.tn, 0);
}

TEST(Confusion, MatchesNaiveOracleExactly) {
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_mask(16, 16, 100 + trial);
        const auto gt = random_mask(16, 16, 200 + trial);
        const auto fast = confusion(s, gt);
        const auto slow = naive_confusion(s, gt);
        EXPECT_EQ(fast.tp, slow.tp);
        EXPECT_EQ(fast.fp, slow.fp);
        EXPECT_EQ(fast.fn, slow.fn);
        EXPECT_EQ(fast.tn, slow.tn);
        EXPECT_EQ(fast.total(), 256);
    }
}

TEST(Confusion, DimensionMismatchThrows) {
    EXPECT_THROW(confusion(BinaryMask(4, 4), BinaryMask(4, 5)), ShapeError);
}

TEST(Dice, IdenticalNonEmptyMasksScoreOne) {
    const auto m = random_mask(8, 8, 3, 0.4);
    ASSERT_GT(m.foreground_count(), 0);
    EXPECT_DOUBLE_EQ(dice(m, m), 1.0);
}

TEST(Dice, DisjointNonEmptyMasksScoreZero) {
    BinaryMask a(6, 6), b(6, 6);
    a.at(0, 0) = 1;
    b.at(5, 5) = 1;
    EXPECT_DOUBLE_EQ(dice(a, b), 0.0);
}

TEST(Dice, HandCountedCase) {
    // |S| = 3, |GT| = 2, overlap 2: tp=2, fp=1, fn=0 -> 2*2/(4+1) = 0.8
    BinaryMask s(5, 1), gt(5, 1);
    s.at(0, 0) = s.at(0, 1) = s.at(0, 2) = 1;
    gt.at(0, 0) = gt.at(0, 1) = 1;
    EXPECT_DOUBLE_EQ(dice(s, gt), 0.8);
}

TEST(Dice, BothEmptyMasksScoreOne) {
    EXPECT_DOUBLE_EQ(dice(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
}

TEST(Dice, SymmetricAndMirrorInvariant) {
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_mask(14, 9, 300 + trial);
        const auto gt = random_mask(14, 9, 400 + trial);
        EXPECT_EQ(dice(s, gt), dice(gt, s));
        EXPECT_EQ(dice(mirror_h(s), mirror_h(gt)), dice(s, gt));
    }
}

TEST(Dice, EqualsSetCountFormExactly) {
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = random_mask(16, 16, 500 + trial, 0.3);
        const auto gt = random_mask(16, 16, 600 + trial, 0.3);
        EXPECT_EQ(dice(s, gt), set_count_dice(s, gt));  // bit-equal doubles
    }
}

TEST(Dice, OneIffEqualGivenForeground) {
    auto m = random_mask(10, 10, 7, 0.4);
    ASSERT_GT(m.foreground_count(), 0);
    EXPECT_EQ(dice(m, m), 1.0);
    auto perturbed = m;
    perturbed.bits[0] = perturbed.bits[0] ? 0 : 1;
    EXPECT_LT(dice(m, perturbed), 1.0);
}

TEST(ReferenceScores, CarryPublishedBaselines) {
    ASSERT_EQ(std::size(kReferenceScores), 4u);
    EXPECT_DOUBLE_EQ(kReferenceScores[3].dice_percent, 98.6);
    EXPECT_DOUBLE_EQ(kReferenceScores[0].dice_percent, 94.1);
    const std::string summary = format_summary(EvalReport{{{"a", 1.0}}, 1.0, 0.0});
    EXPECT_NE(summary.find("98.6"), std::string::npos);
    EXPECT_NE(summary.find("paper-reported, not locally reproduced"), std::string::npos);
}

TEST(Evaluate, ModelAgainstItsOwnPredictionsScoresOne) {
    TempDir tmp;
    UNetConfig net{1, 1, 2, 4, 32};
    const auto params = build_unet<float>(net, 31);

    PipelineConfig pipe;
    pipe.image_size = 32;

    Manifest manifest;
    for (int i = 0; i < 4; ++i) {
        Rng rng(Rng::mix(900, static_cast<uint64_t>(i)));
        auto [img, mask] = synth_phantom(rng, 32);
        const std::string stem = "p" + std::to_string(i);
        const std::string img_path = tmp.file(stem + ".png");
        write_gray_image(img, img_path);

        // ground truth := the net's own binarized prediction on the stored file
        SampleRecord probe{stem, img_path, {img_path}, Source::generic, Split::test};
        const auto [loaded, ignored] = load_sample(probe, pipe);
        Tensor<float> x({1, 1, 32, 32});
        for (int64_t k = 0; k < 32 * 32; ++k) x.data[static_cast<size_t>(k)] = loaded.pixels[static_cast<size_t>(k)];
        const auto pred = unet_forward(params, net, x);
        const std::string mask_path = tmp.file(stem + "_mask.png");
        write_mask(binarize_plane(pred, 0, 0, 0.5), mask_path);
        manifest.records.push_back({stem, img_path, {mask_path}, Source::generic, Split::test});
    }

    const EvalReport report = evaluate(params, net, manifest, Split::test, pipe);
    EXPECT_DOUBLE_EQ(report.mean_dice, 1.0);
    for (const auto& [id, d] : report.per_sample) EXPECT_DOUBLE_EQ(d, 1.0) << id;
}

TEST(Evaluate, EmptySplitThrows) {
    UNetConfig net{1, 1, 1, 2, 16};
    const auto params = build_unet<float>(net, 1);
    Manifest manifest;
    manifest.records.push_back({"a", "x.png", {"y.png"}, Source::generic, Split::train});
    PipelineConfig pipe;
    EXPECT_THROW(evaluate(params, net, manifest, Split::test, pipe), UsageError);
}

TEST(Evaluate, MeanIsArithmeticMeanOfPerSample) {
    TempDir tmp;
    UNetConfig net{1, 1, 2, 4, 32};
    const auto params = build_unet<float>(net, 32);
    PipelineConfig pipe;
    pipe.image_size = 32;

    Manifest manifest;
    for (int i = 0; i < 5; ++i) {
        Rng rng(Rng::mix(910, static_cast<uint64_t>(i)));
        auto [img, mask] = synth_phantom(rng, 32);
        const std::string stem = "q" + std::to_string(i);
        write_gray_image(img, tmp.file(stem + ".png"));
        write_mask(mask, tmp.file(stem + "_mask.png"));
        manifest.records.push_back(
            {stem, tmp.file(stem + ".png"), {tmp.file(stem + "_mask.png")}, Source::generic, Split::test});
    }
    const EvalReport report = evaluate(params, net, manifest, Split::test, pipe);
    double mean = 0.0;
    for (const auto& [id, d] : report.per_sample) {
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        mean += d;
    }
    mean /= static_cast<double>(report.per_sample.size());
    EXPECT_NEAR(report.mean_dice, mean, 1e-12);
}

TEST(ReportTsv, OneRowPerSample) {
    TempDir tmp;
    EvalReport report;
    report.per_sample = {{"a", 0.5}, {"b", 0.75}};
    report.mean_dice = 0.625;
    const std::string path = tmp.file("report.tsv");
    write_report_tsv(report, path);
    std::ifstream is(path);
    std::string line;
    int rows = 0, comments = 0;
    while (std::getline(is, line)) (line[0] == '#' ? comments : rows)++;
    EXPECT_EQ(rows, 2);
    EXPECT_EQ(comments, 1);
}
