#include <gtest/gtest.h>

#include <cmath>

#include "mlc/loss.hpp"
#include "mlc/rng.hpp"

using mlc::AsymmetricLossConfig;
using mlc::Tensor;
using mlc::TensorD;

namespace {

AsymmetricLossConfig cfg(double gp, double gn, mlc::Reduction red = mlc::Reduction::mean) {
    AsymmetricLossConfig c;
    c.gamma_pos = gp;
    c.gamma_neg = gn;
    c.reduction = red;
    return c;
}

}  // namespace

TEST(Loss, FrozenScalarValues) {
    EXPECT_NEAR(mlc::per_label_loss(1, 0.0, 0.0, 5.0), 0.693147, 1e-6);
    EXPECT_NEAR(mlc::per_label_loss(0, 0.0, 0.0, 5.0), 0.021661, 1e-6);

    // negative label scored at probability 0.9: loss is 0.9^5 * ln(10)
    const double z = std::log(0.9 / 0.1);
    const double expected = std::pow(0.9, 5.0) * std::log(10.0);
    EXPECT_NEAR(mlc::per_label_loss(0, z, 0.0, 5.0), expected, 1e-9);
}

TEST(Loss, FrozenBatchSum) {
    auto logits = TensorD::zeros({2, 1});
    std::vector<std::uint8_t> targets = {1, 0};
    auto loss = mlc::asymmetric_loss(logits, targets, cfg(0.0, 5.0, mlc::Reduction::sum));
    EXPECT_NEAR(loss.item(), 0.714808, 1e-6);
}

TEST(Loss, MeanIsSumOverCount) {
    mlc::Rng rng(5);
    std::vector<double> z(3 * 4);
    std::vector<std::uint8_t> y(3 * 4);
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = rng.uniform(-3.0, 3.0);
        y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    auto logits = TensorD::from_data({3, 4}, z);
    auto sum = mlc::asymmetric_loss(logits, y, cfg(0.0, 5.0, mlc::Reduction::sum));
    auto mean = mlc::asymmetric_loss(logits, y, cfg(0.0, 5.0, mlc::Reduction::mean));
    EXPECT_NEAR(mean.item(), sum.item() / 12.0, 1e-12);
}

TEST(Loss, ZeroGammasReduceToBce) {
    mlc::Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const double z = rng.uniform(-6.0, 6.0);
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double bce = -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
        EXPECT_NEAR(mlc::per_label_loss(y, z, 0.0, 0.0), bce, 1e-9);
    }
}

TEST(Loss, GraphMatchesScalarOracle) {
    mlc::Rng rng(11);
    std::vector<double> z(2 * 3);
    std::vector<std::uint8_t> y = {1, 0, 0, 1, 1, 0};
    for (double& v : z) v = rng.uniform(-4.0, 4.0);
    auto logits = TensorD::from_data({2, 3}, z);
    auto loss = mlc::asymmetric_loss(logits, y, cfg(2.0, 3.0, mlc::Reduction::sum));
    double expect = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        expect += mlc::per_label_loss(y[i], z[i], 2.0, 3.0);
    EXPECT_NEAR(loss.item(), expect, 1e-12);
}

TEST(Loss, PlainBceGradientIsProbMinusTarget) {
    mlc::Rng rng(13);
    std::vector<double> z(2 * 2);
    std::vector<std::uint8_t> y = {1, 0, 1, 1};
    for (double& v : z) v = rng.uniform(-3.0, 3.0);
    auto logits = TensorD::from_data({2, 2}, z, true);
    auto loss = mlc::asymmetric_loss(logits, y, cfg(0.0, 0.0, mlc::Reduction::sum));
    mlc::backward(loss);
    ASSERT_EQ(logits.grad().size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z[i]));
        EXPECT_NEAR(logits.grad()[i], p - static_cast<double>(y[i]), 1e-12);
    }
}

TEST(Loss, NegativeFocusRatioIsSigmoidPower) {
    // dividing out the plain penalty leaves exactly the focusing factor p^gamma
    for (double z : {-4.0, -1.0, 0.0, 0.5, 2.0, 6.0}) {
        const double focused = mlc::per_label_loss(0, z, 0.0, 5.0);
        const double plain = mlc::per_label_loss(0, z, 0.0, 0.0);
        const double p = 1.0 / (1.0 + std::exp(-z));
        EXPECT_NEAR(focused / plain, std::pow(p, 5.0), 1e-9);
    }
}

TEST(Loss, StableAtExtremeLogits) {
    for (double z : {-800.0, -100.0, 100.0, 800.0}) {
        for (int y : {0, 1}) {
            const double v = mlc::per_label_loss(y, z, 0.0, 5.0);
            EXPECT_TRUE(std::isfinite(v)) << "y=" << y << " z=" << z;
            EXPECT_GE(v, 0.0);
        }
    }
    auto logits = TensorD::from_data({2, 2}, {800.0, -800.0, 100.0, -100.0}, true);
    std::vector<std::uint8_t> y = {0, 1, 1, 0};
    auto loss = mlc::asymmetric_loss(logits, y, cfg(0.0, 5.0, mlc::Reduction::mean));
    EXPECT_TRUE(std::isfinite(loss.item()));
    mlc::backward(loss);
    for (double g : logits.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Loss, GammaPosFocusesPositives) {
    // a well-classified positive is damped, a hard positive keeps its weight
    const double easy = mlc::per_label_loss(1, 3.0, 2.0, 0.0);
    const double easy_plain = mlc::per_label_loss(1, 3.0, 0.0, 0.0);
    EXPECT_LT(easy, easy_plain * 0.01);
    const double hard = mlc::per_label_loss(1, -3.0, 2.0, 0.0);
    const double hard_plain = mlc::per_label_loss(1, -3.0, 0.0, 0.0);
    EXPECT_GT(hard / hard_plain, 0.8);
}

TEST(Loss, RejectsBadInputs) {
    auto logits = TensorD::zeros({2, 2});
    std::vector<std::uint8_t> bad = {0, 1, 2, 0};
    EXPECT_THROW(mlc::asymmetric_loss(logits, bad, cfg(0.0, 5.0)), mlc::NonBinaryTarget);
    EXPECT_THROW(mlc::per_label_loss(3, 0.0), mlc::NonBinaryTarget);

    std::vector<std::uint8_t> empty;
    EXPECT_THROW(mlc::asymmetric_loss(TensorD::zeros({0, 5}), empty, cfg(0.0, 5.0)),
                 mlc::EmptyInput);

    std::vector<std::uint8_t> wrong = {0, 1};
    EXPECT_THROW(mlc::asymmetric_loss(logits, wrong, cfg(0.0, 5.0)), mlc::ShapeMismatch);
    EXPECT_THROW(mlc::asymmetric_loss(TensorD::zeros({4}), wrong, cfg(0.0, 5.0)),
                 mlc::ShapeMismatch);

    AsymmetricLossConfig negative = cfg(-1.0, 5.0);
    EXPECT_THROW(negative.validate(), mlc::ConfigError);
}

TEST(Loss, BackwardFlowsThroughFocusedTerms) {
    auto logits = TensorD::from_data({1, 2}, {0.7, -0.3}, true);
    std::vector<std::uint8_t> y = {1, 0};
    auto loss = mlc::asymmetric_loss(logits, y, cfg(2.0, 5.0, mlc::Reduction::sum));
    mlc::backward(loss);
    ASSERT_EQ(logits.grad().size(), 2u);

    // numeric check with central differences
    const double h = 1e-6;
    for (std::size_t i = 0; i < 2; ++i) {
        auto eval = [&](double delta) {
            std::vector<double> z = {0.7, -0.3};
            z[i] += delta;
            return mlc::per_label_loss(y[0], z[0], 2.0, 5.0) +
                   mlc::per_label_loss(y[1], z[1], 2.0, 5.0);
        };
        const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
        EXPECT_NEAR(logits.grad()[i], numeric, 1e-6);
    }
}
