#include <gtest/gtest.h>

#include "support.hpp"

using namespace clue;

TEST(Metrics, PerfectPredictions) {
  const std::vector<std::size_t> y{0, 1, 2, 2, 3, 4, 5, 6};
  const auto r = compute_metrics(y, y, 7);
  EXPECT_DOUBLE_EQ(r.weighted_f1, 1.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_DOUBLE_EQ(r.confusion[c][c], 1.0);
}

TEST(Metrics, TwoClassHandExample) {
  // Class 1: TP=2, FP=1, FN=1.
  const std::vector<std::size_t> truth{1, 1, 1, 0, 0}, pred{1, 1, 0, 1, 0};
  const auto r = compute_metrics(truth, pred, 2);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.5);
  EXPECT_NEAR(r.weighted_f1, 0.6 * 2.0 / 3.0 + 0.4 * 0.5, 1e-15);
  EXPECT_EQ(r.counts[1][0], 1u);
}

TEST(Metrics, SupportWeighting) {
  // Supports 3 and 1; only class 0 is correct.
  const std::vector<std::size_t> truth{0, 0, 0, 1}, pred{0, 0, 0, 0};
  const auto r = compute_metrics(truth, pred, 2);
  EXPECT_DOUBLE_EQ(r.weighted_recall, 0.75);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_TRUE(r.per_class[1].precision_undefined);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 0.0);
}

TEST(Metrics, ZeroSupportRows) {
  const std::vector<std::size_t> truth{0, 0, 2}, pred{0, 1, 2};
  const auto r = compute_metrics(truth, pred, 4);
  EXPECT_TRUE(r.zero_support_rows[1]);
  EXPECT_TRUE(r.zero_support_rows[3]);
  EXPECT_FALSE(r.zero_support_rows[0]);
  for (double v : r.confusion[3]) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(compute_metrics({}, {}, 2), InputError);
  EXPECT_THROW(compute_metrics({0}, {0, 1}, 2), DimensionError);
  EXPECT_THROW(compute_metrics({0}, {2}, 2), IndexError);
}

TEST(Metrics, RandomPropertyChecks) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng.below(6), n = 1 + rng.below(60);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(K);
      p[i] = rng.bernoulli(0.6) ? t[i] : rng.below(K);
    }
    const auto r = compute_metrics(t, p, K);
    EXPECT_NEAR(r.weighted_recall, r.accuracy, 1e-12);
    for (std::size_t c = 0; c < K; ++c) {
      if (r.zero_support_rows[c]) continue;
      double s = 0;
      for (double v : r.confusion[c]) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_GE(r.weighted_f1, 0.0);
    EXPECT_LE(r.weighted_f1, 1.0);
  }
}

TEST(MeanStd, PopulationStd) {
  const auto a = mean_std({0.9, 0.8});
  EXPECT_NEAR(a.mean, 0.85, 1e-15);
  EXPECT_NEAR(a.std, 0.05, 1e-15);
  const auto b = mean_std({0.8, 0.9});
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(mean_std({0.7}).std, 0.0);
  EXPECT_THROW(mean_std({}), InputError);
}
