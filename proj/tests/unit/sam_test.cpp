#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "sanet/rng.hpp"
#include "sanet/sam.hpp"

using namespace sanet;

namespace {

// x + x * sigmoid(x), elementwise
Tensor4 zero_offset_reference(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.data()) v = v + v * (1.0 / (1.0 + std::exp(-v)));
    return out;
}

void zero_weights(SamParams& p) {
    for (double& v : p.conv_a.weight.data()) v = 0.0;
    for (double& v : p.conv_b.weight.data()) v = 0.0;
}

}  // namespace

TEST(SamInit, BaseGridCornersAndCentre) {
    Rng rng(1);
    const SamParams p = sam_init(2, 3, 3, rng);
    const Tensor4& g = p.base_grid.coords;
    EXPECT_EQ(g.at(0, 0, 0, 0), -1.0);
    EXPECT_EQ(g.at(0, 1, 0, 0), -1.0);
    EXPECT_EQ(g.at(0, 0, 2, 2), 1.0);
    EXPECT_EQ(g.at(0, 1, 2, 2), 1.0);
    EXPECT_EQ(g.at(0, 0, 1, 1), 0.0);
    EXPECT_EQ(g.at(0, 1, 1, 1), 0.0);
    EXPECT_FALSE(p.conv_a.has_bias());
    EXPECT_EQ(p.conv_a.weight.shape(), (Shape{2, 2, 3, 3}));
    EXPECT_THROW(sam_init(2, 1, 4, rng), std::invalid_argument);
}

TEST(SamInit, WeightsAreSmall) {
    Rng rng(2);
    const SamParams p = sam_init(32, 8, 8, rng);
    EXPECT_LE(max_abs(p.conv_a.weight), 6 * kSamInitStd);
    EXPECT_LE(max_abs(p.conv_b.weight), 6 * kSamInitStd);
    EXPECT_GT(max_abs(p.conv_a.weight), 0.0);
    EXPECT_NE(p.conv_a.weight, p.conv_b.weight);

    Rng zero_rng(3);
    const SamParams z = sam_init(4, 8, 8, zero_rng, 0.0);
    EXPECT_EQ(max_abs(z.conv_a.weight), 0.0);
    const Tensor4 x = fill({1, 4, 8, 8}, 0.3);
    const SamTape t = sam_forward(x, z).second;
    EXPECT_EQ(t.map.coords, identity_grid(1, 8, 8).coords);
}

TEST(SamForward, ZeroOffsetsReduceToElementwiseGate) {
    Rng rng(4);
    SamParams p = sam_init(3, 7, 9, rng);
    zero_weights(p);
    const Tensor4 x = rand_uniform({2, 3, 7, 9}, -1.0, 1.0, rng);
    EXPECT_LE(max_abs_diff(sam_forward(x, p).first, zero_offset_reference(x)), 1e-12);

    const Tensor4 zero = zeros({1, 3, 7, 9});
    EXPECT_EQ(sam_forward(zero, p).first, zero);
}

TEST(SamForward, FreshInitStaysNearZeroOffsetLimit) {
    Rng rng(5);
    const SamParams p = sam_init(16, 16, 16, rng);
    const Tensor4 x = rand_uniform({1, 16, 16, 16}, -1.0, 1.0, rng);
    EXPECT_LE(max_abs_diff(sam_forward(x, p).first, zero_offset_reference(x)), 1e-2);
}

TEST(SamForward, ClampHoldsForHugeWeights) {
    Rng rng(6);
    SamParams p = sam_init(4, 8, 8, rng, 1.0);
    p.conv_a.weight = scale(p.conv_a.weight, 1000.0);
    p.conv_b.weight = scale(p.conv_b.weight, 1000.0);
    const Tensor4 x = randn({2, 4, 8, 8}, 0.0, 1.0, rng);
    const auto [y, tape] = sam_forward(x, p);
    EXPECT_GT(max_abs(tape.unclamped), 1.0);
    for (double v : tape.map.coords.data()) {
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
    }
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(SamForward, ShapeMismatchThrows) {
    Rng rng(7);
    const SamParams p = sam_init(4, 8, 8, rng);
    EXPECT_THROW(sam_forward(zeros({1, 3, 8, 8}), p), std::invalid_argument);
    EXPECT_THROW(sam_forward(zeros({1, 4, 8, 9}), p), std::invalid_argument);
}

TEST(SamBackward, ZeroGradient) {
    Rng rng(8);
    SamParams p = sam_init(3, 6, 6, rng, 0.1);
    const Tensor4 x = randn({1, 3, 6, 6}, 0.0, 1.0, rng);
    auto [y, tape] = sam_forward(x, p);
    EXPECT_EQ(sam_backward(zeros(y.shape()), tape, p), zeros(x.shape()));
    EXPECT_EQ(max_abs(p.conv_a.grad_weight), 0.0);
    EXPECT_EQ(max_abs(p.conv_b.grad_weight), 0.0);
}

TEST(SamBackward, ZeroOffsetChainRule) {
    Rng rng(9);
    SamParams p = sam_init(2, 5, 5, rng);
    zero_weights(p);
    const Tensor4 x = randn({1, 2, 5, 5}, 0.0, 1.0, rng);
    auto [y, tape] = sam_forward(x, p);
    const Tensor4 g = randn(y.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = sam_backward(g, tape, p);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        EXPECT_NEAR(gx[i], g[i] * (1.0 + s + x[i] * s * (1.0 - s)), 1e-12);
    }
}

TEST(SamBackward, ResidualKeepsGradientAlive) {
    Rng rng(10);
    SamParams p = sam_init(3, 6, 6, rng, 0.2);
    const Tensor4 x = randn({1, 3, 6, 6}, 0.0, 1.0, rng);
    auto [y, tape] = sam_forward(x, p);
    const Tensor4 g = fill(y.shape(), 1.0);
    EXPECT_GT(max_abs(sam_backward(g, tape, p)), 0.0);
}

TEST(SamBackward, FiniteDifference) {
    Rng rng(11);
    Tensor4 x = randn({1, 4, 8, 8}, 0.0, 1.0, rng);
    SamParams p = sam_init(4, 8, 8, rng, 0.05);
    auto [y, tape] = sam_forward(x, p);
    const Tensor4 g = randn(y.shape(), 0.0, 1.0, rng);
    const Tensor4 gx = sam_backward(g, tape, p);

    // skip probes whose +/- evaluations land in different bilinear cells or clamp states
    auto branch = [&] {
        const SamTape t = sam_forward(x, p).second;
        std::vector<long> sig;
        for (double v : t.unclamped.data()) sig.push_back(v > -1.0 && v < 1.0);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 64; ++i) sig.push_back(static_cast<long>(std::floor(to_pixel(t.map.coords.plane(0, c)[i], 8))));
        return sig;
    };
    auto loss = [&] { return dot(g, sam_forward(x, p).first); };
    auto check = [&](std::span<double> values, std::span<const double> analytic) {
        double worst = 0.0;
        std::size_t used = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + 1e-5;
            const auto up = branch();
            values[i] = saved - 1e-5;
            const auto down = branch();
            values[i] = saved;
            if (up != down) continue;
            worst = std::max(worst, fd::rel_err(analytic[i], fd::partial(values[i], loss)));
            ++used;
        }
        EXPECT_GE(used, values.size() * 9 / 10);
        return worst;
    };
    EXPECT_LE(check(x.data(), gx.data()), 1e-4);
    EXPECT_LE(check(p.conv_a.weight.data(), p.conv_a.grad_weight.data()), 1e-4);
    EXPECT_LE(check(p.conv_b.weight.data(), p.conv_b.grad_weight.data()), 1e-4);
    // the re-sampling path must actually carry gradient
    EXPECT_GT(max_abs(p.conv_a.grad_weight), 1e-3);
}
