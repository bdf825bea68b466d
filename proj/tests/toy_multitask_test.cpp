#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <vector>

#include "darse/toy_multitask.hpp"
#include "test_support.hpp"

using namespace darse;
using darse::testing::finite_difference_gradient;
using darse::testing::vector_relative_error;

namespace {

ToyModelSpec small_spec() {
  ToyModelSpec s;
  s.feature_dim = 6;
  s.layers = 2;
  s.dropped_per_layer = 1;
  s.regression_hidden = 4;
  s.classification_hidden = 3;
  return s;
}

ToyModelSpec test_spec() {
  ToyModelSpec s;
  s.feature_dim = 12;
  s.layers = 3;
  s.dropped_per_layer = 2;
  return s;
}

}  // namespace

TEST(SyntheticSentiment, LabelsFollowScores) {
  const auto data = generate_synthetic_sentiment(200, 8, 0.0, 1);
  ASSERT_EQ(data.size(), 200u);
  for (const auto& s : data) {
    EXPECT_EQ(s.features.size(), 8u);
    EXPECT_GE(s.score, -1.0);
    EXPECT_LE(s.score, 1.0);
    EXPECT_EQ(s.label, map_score_to_class(s.score));
  }
}

TEST(SyntheticSentiment, DeterministicPerSeed) {
  EXPECT_EQ(generate_synthetic_sentiment(50, 4, 0.1, 9), generate_synthetic_sentiment(50, 4, 0.1, 9));
  EXPECT_NE(generate_synthetic_sentiment(50, 4, 0.1, 9), generate_synthetic_sentiment(50, 4, 0.1, 10));
}

TEST(SyntheticSentiment, CoversAtLeastThreeClasses) {
  const auto data = generate_synthetic_sentiment(1000, 32, 0.0, 7);
  std::set<int> classes;
  for (const auto& s : data) classes.insert(s.label);
  EXPECT_GE(classes.size(), 3u);
}

TEST(SyntheticSentiment, Errors) {
  EXPECT_THROW(generate_synthetic_sentiment(9, 4, 0.0, 1), InvalidInput);
  EXPECT_THROW(generate_synthetic_sentiment(10, 4, -0.1, 1), InvalidInput);
}

TEST(Dataset, TextRoundTrip) {
  const auto data = generate_synthetic_sentiment(20, 3, 0.2, 4);
  std::stringstream ss;
  write_dataset(ss, data);
  EXPECT_EQ(read_dataset(ss), data);
}

TEST(Dataset, ParseErrorsNameTheLine) {
  std::stringstream ss("0.1,0.2,0.7,4\n0.1,0.2,0.7,2\n");
  try {
    read_dataset(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::stringstream bad("0.1,x,0.7,4\n");
  EXPECT_THROW(read_dataset(bad), ParseError);
}

TEST(ToyModel, EncoderBasesDropDisjointCoordinates) {
  const auto model = make_toy_model(test_spec(), 5);
  ASSERT_EQ(model.bases.size(), 3u);
  std::set<std::size_t> dropped;
  for (const auto& b : model.bases) {
    int zeros = 0;
    for (std::size_t i = 0; i < b.rows(); ++i) {
      if (b(i, i) == 0.0) {
        ++zeros;
        EXPECT_TRUE(dropped.insert(i).second);
      }
    }
    EXPECT_EQ(zeros, 2);
  }
  ToyModelSpec bad = test_spec();
  bad.dropped_per_layer = 5;
  EXPECT_THROW(make_toy_model(bad, 0), InvalidInput);
}

TEST(ToyModel, AnalyticGradientMatchesFiniteDifferences) {
  const auto model = make_toy_model(small_spec(), 1);
  const auto data = generate_synthetic_sentiment(12, 6, 0.3, 2);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const ToyBatch batch = make_batch(data, idx);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> jitter(0.0, 0.5);
  for (int point = 0; point < 20; ++point) {
    const RankVector ranks{point % 3, 1 + point % 2};
    ToyParams p = init_toy_params(model, ranks, static_cast<std::uint64_t>(point));
    std::vector<double> flat = p.flatten();
    for (double& x : flat) x += jitter(rng);
    p.assign(flat);
    const MultiTaskWeights w{0.3 + 0.05 * point, 0.7};
    ToyParams grad;
    toy_loss_and_gradient(model, p, batch, w, nullptr, &grad);
    const auto numeric = finite_difference_gradient(
        [&](const std::vector<double>& x) {
          ToyParams q = p;
          q.assign(x);
          return toy_loss_and_gradient(model, q, batch, w, nullptr, nullptr);
        },
        flat, 1e-5);
    EXPECT_LE(vector_relative_error(grad.flatten(), numeric), 1e-4) << "point " << point;
  }
}

TEST(ToyModel, GradientWithFixedDropoutMasks) {
  const auto model = make_toy_model(small_spec(), 1);
  const auto data = generate_synthetic_sentiment(10, 6, 0.3, 5);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const ToyBatch batch = make_batch(data, idx);
  std::mt19937_64 rng(8);
  const DropoutMasks masks = sample_dropout(batch.size(), 6, 3, 0.3, rng);
  ToyParams p = init_toy_params(model, RankVector{2, 1}, 4);
  std::vector<double> flat = p.flatten();
  for (double& x : flat) x += 0.1;
  p.assign(flat);
  ToyParams grad;
  toy_loss_and_gradient(model, p, batch, {}, &masks, &grad);
  const auto numeric = finite_difference_gradient(
      [&](const std::vector<double>& x) {
        ToyParams q = p;
        q.assign(x);
        return toy_loss_and_gradient(model, q, batch, {}, &masks, nullptr);
      },
      flat, 1e-5);
  EXPECT_LE(vector_relative_error(grad.flatten(), numeric), 1e-4);
}

TEST(ToyObjective, PlantedTeacherIsRealizableAndRanksHelp) {
  const auto data = generate_synthetic_sentiment(200, 12, 0.0, 7);
  const ToyTrainConfig train{0.2, 400};
  const ToyMultiTaskObjective obj(make_toy_model(test_spec(), 3), data, train, {}, 11);
  const double generous = obj.evaluate(RankVector{3, 3, 3});
  const double zeros = obj.evaluate(RankVector{0, 0, 0});
  EXPECT_LE(generous, 0.01);
  EXPECT_LE(generous, zeros);
}

TEST(ToyObjective, Deterministic) {
  const auto data = generate_synthetic_sentiment(60, 6, 0.1, 2);
  const ToyTrainConfig train{0.1, 50};
  const ToyMultiTaskObjective a(make_toy_model(small_spec(), 1), data, train, {}, 5);
  const ToyMultiTaskObjective b(make_toy_model(small_spec(), 1), data, train, {}, 5);
  EXPECT_EQ(a.evaluate(RankVector{1, 2}), b.evaluate(RankVector{1, 2}));
  EXPECT_EQ(a.evaluate(RankVector{1, 2}), a.evaluate(RankVector{1, 2}));
}

TEST(ToyObjective, SplitIsNinetyTen) {
  const DataSplit s = split_dataset(100, 1);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.validation.size(), 10u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_NO_THROW(split_dataset(5, 1));
  EXPECT_THROW(split_dataset(1, 1), InvalidInput);
}

TEST(ToyObjective, DivergenceReportsStep) {
  const auto data = generate_synthetic_sentiment(40, 6, 0.0, 2);
  const ToyTrainConfig train{1e6, 50};
  const ToyMultiTaskObjective obj(make_toy_model(small_spec(), 1), data, train, {}, 5);
  try {
    obj.evaluate(RankVector{2, 2});
    FAIL() << "expected NumericFailure";
  } catch (const NumericFailure& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(ToyObjective, Errors) {
  const auto data = generate_synthetic_sentiment(40, 5, 0.0, 2);
  EXPECT_THROW(ToyMultiTaskObjective(make_toy_model(small_spec(), 1), data, {}, {}, 0),
               InvalidInput);
  EXPECT_THROW(ToyMultiTaskObjective(make_toy_model(small_spec(), 1), {}, {}, {}, 0),
               InvalidInput);
}
