#include <gtest/gtest.h>

#include "lungseg/ops.hpp"
#include "test_util.hpp"

using namespace lungseg;
using lungseg::testing::random_tensor;

namespace {

struct FiniteCheckGuard {
    FiniteCheckGuard() { set_finite_checks(true); }
    ~FiniteCheckGuard() { set_finite_checks(false); }
};

Tensor<float> zero_bias(int64_t cout) { return Tensor<float>({cout}); }

}  // namespace

TEST(Conv2d, IdentityKernel) {
    const auto x = random_tensor<float>({1, 1, 5, 5}, 11);
    Tensor<float> w({1, 1, 1, 1});
    w.data[0] = 1.0f;
    const auto y = conv2d(x, w, zero_bias(1), 1, 0);
    ASSERT_EQ(y.shape, x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) EXPECT_EQ(y.data[i], x.data[i]);
}

TEST(Conv2d, AllOnesSumsWindow) {
    const auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    const auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    const auto y = conv2d(x, w, zero_bias(1), 1, 0);
    ASSERT_EQ(y.shape, (Shape{1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y.data[0], 9.0f);
}

TEST(Conv2d, SamePaddingKeepsSpatialDims) {
    const auto x = random_tensor<float>({1, 1, 8, 8}, 3);
    const auto w = random_tensor<float>({4, 1, 3, 3}, 4);
    const auto y = conv2d(x, w, zero_bias(4), 1, 1);
    EXPECT_EQ(y.shape, (Shape{1, 4, 8, 8}));
}

TEST(Conv2d, ChannelMismatchThrows) {
    const auto x = random_tensor<float>({1, 2, 4, 4}, 5);
    const auto w = random_tensor<float>({1, 3, 3, 3}, 6);
    EXPECT_THROW(conv2d(x, w, zero_bias(1), 1, 1), ShapeError);
}

TEST(Conv2d, KernelLargerThanPaddedInputThrows) {
    const auto x = random_tensor<float>({1, 1, 2, 2}, 7);
    const auto w = random_tensor<float>({1, 1, 3, 3}, 8);
    EXPECT_THROW(conv2d(x, w, zero_bias(1), 1, 0), ShapeError);
    EXPECT_NO_THROW(conv2d(x, w, zero_bias(1), 1, 1));
}

TEST(Conv2d, BadStrideOrPadThrows) {
    const auto x = random_tensor<float>({1, 1, 4, 4}, 9);
    const auto w = random_tensor<float>({1, 1, 3, 3}, 10);
    EXPECT_THROW(conv2d(x, w, zero_bias(1), 0, 0), UsageError);
    EXPECT_THROW(conv2d(x, w, zero_bias(1), 1, -1), UsageError);
}

// output-shape formula over randomized valid geometries
TEST(Conv2d, ShapeFormulaRandomized) {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t h = 1 + rng.uniform_int(12);
        const int64_t w = 1 + rng.uniform_int(12);
        const int64_t kh = 1 + rng.uniform_int(3);
        const int64_t kw = 1 + rng.uniform_int(3);
        const int64_t pad = rng.uniform_int(3);
        const int64_t stride = 1 + rng.uniform_int(2);
        if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
        const auto x = random_tensor<float>({2, 2, h, w}, 1000 + trial);
        const auto wt = random_tensor<float>({3, 2, kh, kw}, 2000 + trial);
        const auto y = conv2d(x, wt, zero_bias(3), stride, pad);
        EXPECT_EQ(y.shape[2], (h + 2 * pad - kh) / stride + 1);
        EXPECT_EQ(y.shape[3], (w + 2 * pad - kw) / stride + 1);
    }
}

TEST(Conv2d, LinearInInput) {
    const auto x = random_tensor<float>({1, 2, 6, 6}, 21);
    const auto w = random_tensor<float>({3, 2, 3, 3}, 22);
    const float alpha = 2.375f;
    Tensor<float> ax = x;
    for (auto& v : ax.data) v *= alpha;
    const auto y1 = conv2d(ax, w, zero_bias(3), 1, 1);
    auto y2 = conv2d(x, w, zero_bias(3), 1, 1);
    for (auto& v : y2.data) v *= alpha;
    for (size_t i = 0; i < y1.data.size(); ++i) {
        const float denom = std::max(1e-5f, std::abs(y1.data[i]) + std::abs(y2.data[i]));
        EXPECT_LT(std::abs(y1.data[i] - y2.data[i]) / denom, 1e-5f);
    }
}

TEST(MaxPool2, WindowMax) {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto y = max_pool2(x);
    ASSERT_EQ(y.shape, (Shape{1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y.data[0], 4.0f);
}

TEST(MaxPool2, HalvesSpatialDims) {
    const auto x = random_tensor<float>({1, 1, 4, 4}, 31);
    EXPECT_EQ(max_pool2(x).shape, (Shape{1, 1, 2, 2}));
}

TEST(MaxPool2, OddDimsThrow) {
    EXPECT_THROW(max_pool2(random_tensor<float>({1, 1, 3, 4}, 32)), ShapeError);
    EXPECT_THROW(max_pool2(random_tensor<float>({1, 1, 4, 5}, 33)), ShapeError);
}

TEST(MaxPool2, TieGoesToFirstInRowMajorOrder) {
    Tensor<double> x({1, 1, 2, 2}, {7, 7, 7, 7});
    Tape<double> tape;
    tape.track(x);
    const auto y = max_pool2(x);
    const auto loss = sum(y);
    tape.backward(loss);
    const auto g = tape.grad(x);
    EXPECT_EQ(g.data, (std::vector<double>{1, 0, 0, 0}));
}

TEST(UpsampleNearest2, ReplicatesBlocks) {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto y = upsample_nearest2(x);
    ASSERT_EQ(y.shape, (Shape{1, 1, 4, 4}));
    const std::vector<float> expected = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(y.data, expected);
}

TEST(UpsampleNearest2, DoublesSpatialDims) {
    EXPECT_EQ(upsample_nearest2(random_tensor<float>({1, 3, 8, 8}, 41)).shape, (Shape{1, 3, 16, 16}));
}

TEST(UpsampleNearest2, PoolOfUpsampleIsIdentity) {
    const auto x = random_tensor<float>({2, 3, 5, 6}, 42);
    const auto y = max_pool2(upsample_nearest2(x));
    EXPECT_EQ(y.shape, x.shape);
    EXPECT_EQ(y.data, x.data);
}

TEST(ConcatChannels, StacksAThenB) {
    const auto a = random_tensor<float>({1, 8, 4, 4}, 51);
    const auto b = random_tensor<float>({1, 8, 4, 4}, 52);
    const auto y = concat_channels(a, b);
    ASSERT_EQ(y.shape, (Shape{1, 16, 4, 4}));
    // channel 0 comes from a, channel Ca from b
    for (int64_t p = 0; p < 16; ++p) {
        EXPECT_EQ(y.data[static_cast<size_t>(p)], a.data[static_cast<size_t>(p)]);
        EXPECT_EQ(y.at4(0, 8, p / 4, p % 4), b.at4(0, 0, p / 4, p % 4));
    }
}

TEST(ConcatChannels, SpatialMismatchThrows) {
    const auto a = random_tensor<float>({1, 1, 4, 4}, 53);
    const auto b = random_tensor<float>({1, 1, 3, 3}, 54);
    EXPECT_THROW(concat_channels(a, b), ShapeError);
}

TEST(Activations, ReluValues) {
    Tensor<float> x({3}, {-1.0f, 0.0f, 2.0f});
    const auto y = relu(x);
    EXPECT_EQ(y.data, (std::vector<float>{0.0f, 0.0f, 2.0f}));
}

TEST(Activations, SigmoidAtZeroIsHalf) {
    Tensor<double> x({1}, {0.0});
    EXPECT_DOUBLE_EQ(sigmoid(x).data[0], 0.5);
}

TEST(Activations, SigmoidSaturates) {
    Tensor<double> x({1}, {30.0});
    const double v = sigmoid(x).data[0];
    EXPECT_GT(v, 1.0 - 1e-12);
    EXPECT_LE(v, 1.0);
}

TEST(Activations, UnknownKindThrows) {
    const auto x = random_tensor<float>({2}, 61);
    EXPECT_THROW(activation(x, static_cast<Activation>(42)), UsageError);
}

TEST(Backward, SumGradientIsOnes) {
    auto x = random_tensor<double>({2, 3}, 71);
    Tape<double> tape;
    tape.track(x);
    const auto loss = sum(x);
    tape.backward(loss);
    const auto g = tape.grad(x);
    for (double v : g.data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, NonScalarLossThrows) {
    auto x = random_tensor<double>({1, 2}, 72);
    Tape<double> tape;
    tape.track(x);
    EXPECT_THROW(tape.backward(x), UsageError);
}

TEST(Backward, ForeignTensorThrows) {
    auto x = random_tensor<double>({1}, 73);
    Tape<double> tape;
    EXPECT_THROW(tape.backward(x), UsageError);   // never tracked
    EXPECT_THROW(tape.grad(x), UsageError);

    Tape<double> other;
    auto a = random_tensor<double>({1, 1, 2, 2}, 74);
    auto b = random_tensor<double>({1, 1, 2, 2}, 75);
    tape.track(a);
    other.track(b);
    EXPECT_THROW(concat_channels(a, b), UsageError);  // two different tapes
}

TEST(Backward, GradientAccumulatesOverConsumers) {
    // x feeds the concat twice; d/dx of sum(concat(x, x)) is 2 everywhere
    auto x = random_tensor<double>({1, 1, 2, 2}, 76);
    Tape<double> tape;
    tape.track(x);
    const auto loss = sum(concat_channels(x, x));
    tape.backward(loss);
    for (double v : tape.grad(x).data) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(Tape, DeterministicForwardAndBackward) {
    auto run = [] {
        auto x = random_tensor<float>({2, 2, 6, 6}, 81);
        const auto w = random_tensor<float>({3, 2, 3, 3}, 82);
        Tape<float> tape;
        tape.track(x);
        const auto y = sum(relu(conv2d(x, w, zero_bias(3), 1, 1)));
        tape.backward(y);
        return std::make_pair(y.data[0], tape.grad(x).data);
    };
    const auto [v1, g1] = run();
    const auto [v2, g2] = run();
    EXPECT_EQ(v1, v2);
    EXPECT_EQ(g1, g2);
}

TEST(Tensor, DataShapeMismatchThrows) {
    EXPECT_THROW(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
    EXPECT_THROW(Tensor<float>({0, 2}), ShapeError);
}

TEST(FiniteChecks, CatchNonFiniteResults) {
    FiniteCheckGuard guard;
    Tensor<float> x({1, 1, 1, 1}, {3.0e38f});
    Tensor<float> w({1, 1, 1, 1}, {3.0e38f});
    EXPECT_THROW(conv2d(x, w, zero_bias(1), 1, 0), NumericError);   // overflows to inf
    Tensor<float> ok({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_NO_THROW(max_pool2(ok));
}
