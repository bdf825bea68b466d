#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "darse/losses.hpp"

using namespace darse;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

// Piecewise definition evaluated directly, kept apart from the library code.
int reference_class(double y) {
  if (y > 0.5) return 4;
  if (y > 0.049) return 3;
  if (y >= -0.049) return 2;
  if (y >= -0.5) return 1;
  return 0;
}

double big_ce(const Matrix& logits, const std::vector<int>& labels) {
  Big total = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    Big z = 0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += boost::multiprecision::exp(Big(logits(i, j)));
    total += boost::multiprecision::log(z) - Big(logits(i, static_cast<std::size_t>(labels[i])));
  }
  total /= static_cast<int>(logits.rows());
  return total.convert_to<double>();
}

}  // namespace

TEST(MapScoreToClass, ThresholdExamples) {
  EXPECT_EQ(map_score_to_class(0.7), 4);
  EXPECT_EQ(map_score_to_class(0.5), 3);
  EXPECT_EQ(map_score_to_class(0.049), 2);
  EXPECT_EQ(map_score_to_class(0.0), 2);
  EXPECT_EQ(map_score_to_class(-0.049), 2);
  EXPECT_EQ(map_score_to_class(-0.3), 1);
  EXPECT_EQ(map_score_to_class(-0.5), 1);
  EXPECT_EQ(map_score_to_class(-0.9), 0);
}

TEST(MapScoreToClass, BoundaryScan) {
  for (double edge : {0.049, -0.049, 0.5, -0.5}) {
    for (double off : {-1e-12, 0.0, 1e-12}) {
      const double y = edge + off;
      EXPECT_EQ(map_score_to_class(y), reference_class(y)) << y;
    }
  }
  EXPECT_EQ(map_score_to_class(0.049 + 1e-12), 3);
  EXPECT_EQ(map_score_to_class(-0.049 - 1e-12), 1);
  EXPECT_EQ(map_score_to_class(0.5 + 1e-12), 4);
  EXPECT_EQ(map_score_to_class(-0.5 - 1e-12), 0);
}

TEST(MapScoreToClass, TotalAndMonotoneOnClosedInterval) {
  int previous = -1;
  for (int k = 0; k <= 10000; ++k) {
    const double y = -1.0 + 2.0 * k / 10000.0;
    const int c = map_score_to_class(y);
    ASSERT_GE(c, 0);
    ASSERT_LT(c, kSentimentClasses);
    ASSERT_GE(c, previous);
    previous = c;
  }
  EXPECT_EQ(map_score_to_class(-1.0), 0);
  EXPECT_EQ(map_score_to_class(1.0), 4);
}

TEST(MapScoreToClass, RejectsOutOfRange) {
  EXPECT_THROW(map_score_to_class(1.0000001), InvalidInput);
  EXPECT_THROW(map_score_to_class(-1.5), InvalidInput);
  EXPECT_THROW(map_score_to_class(std::nan("")), InvalidInput);
}

TEST(MseLoss, Examples) {
  const std::vector<double> a{0.3, -0.2};
  EXPECT_EQ(mse_loss(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{1, 0}, std::vector<double>{0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{1, -1}, std::vector<double>{-1, 1}), 4.0);
}

TEST(MseLoss, Errors) {
  EXPECT_THROW(mse_loss(std::vector<double>{}, std::vector<double>{}), InvalidInput);
  EXPECT_THROW(mse_loss(std::vector<double>{1}, std::vector<double>{1, 2}), InvalidInput);
}

TEST(CeLoss, UniformLogits) {
  const Matrix logits(3, 5, 0.25);
  const std::vector<int> labels{0, 2, 4};
  EXPECT_NEAR(ce_loss(logits, labels), std::log(5.0), 1e-12);
}

TEST(CeLoss, ConfidentCorrectIsNearZero) {
  Matrix logits(2, 5, 0.0);
  logits(0, 1) = 1000.0;
  logits(1, 3) = 1000.0;
  const std::vector<int> labels{1, 3};
  const double l = ce_loss(logits, labels);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-12);
}

TEST(CeLoss, MatchesArbitraryPrecisionOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> logit(-8.0, 8.0);
  std::uniform_int_distribution<int> label(0, 4);
  for (int batch = 0; batch < 20; ++batch) {
    const std::size_t n = 1 + static_cast<std::size_t>(batch) % 7;
    Matrix logits(n, 5);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 5; ++j) logits(i, j) = logit(rng);
      labels[i] = label(rng);
    }
    EXPECT_NEAR(ce_loss(logits, labels), big_ce(logits, labels), 1e-9) << "batch " << batch;
  }
}

TEST(CeLoss, Errors) {
  const Matrix logits(2, 5, 0.0);
  EXPECT_THROW(ce_loss(logits, std::vector<int>{0, 5}), InvalidInput);
  EXPECT_THROW(ce_loss(logits, std::vector<int>{-1, 0}), InvalidInput);
  EXPECT_THROW(ce_loss(logits, std::vector<int>{0}), InvalidInput);
}

TEST(MultitaskLoss, Examples) {
  EXPECT_EQ(multitask_loss(0.2, 1.0, {1.0, 0.0}), 0.2);
  EXPECT_EQ(multitask_loss(0.2, 1.0, {0.0, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(multitask_loss(0.2, 1.0, {0.5, 0.5}), 0.6);
}

TEST(MultitaskLoss, LinearInComponents) {
  const MultiTaskWeights w{0.3, 0.9};
  const double a = multitask_loss(0.4, 1.1, w);
  const double b = multitask_loss(0.1, 0.7, w);
  EXPECT_NEAR(multitask_loss(0.5, 1.8, w), a + b, 1e-15);
  EXPECT_NEAR(multitask_loss(0.8, 2.2, w), 2.0 * a, 1e-15);
}

TEST(MultiTaskWeights, Validation) {
  EXPECT_NO_THROW((MultiTaskWeights{0.0, 1.0}.validate()));
  EXPECT_THROW((MultiTaskWeights{0.0, 0.0}.validate()), InvalidInput);
  EXPECT_THROW((MultiTaskWeights{-1.0, 2.0}.validate()), InvalidInput);
}
