/*
 * Copyright 2026 The wqscreen Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <gtest/gtest.h>

#include <cmath>

#include "wqscreen/common.hpp"
#include "wqscreen/metrics.hpp"

#include "support/oracles.hpp"

namespace wqscreen {
namespace {

using oracle::PairwiseAuc;

TEST(RocAuc, Examples) {
  EXPECT_DOUBLE_EQ(RocAuc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(RocAuc(std::vector<double>{0.8, 0.6, 0.4, 0.7}, std::vector<int>{1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(RocAuc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  try {
    RocAuc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedMetric);
  }
}

TEST(RocAuc, MatchesPairwiseCounting) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.Below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.Below(trial % 2 ? 10 : 100000)) / 7.0;
      y[i] = rng.Uniform() < 0.3 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(RocAuc(s, y), PairwiseAuc(s, y), 1e-12);
  }
}

TEST(RocAuc, MonotoneInvarianceAndComplement) {
  Rng rng(2);
  std::vector<double> s(150), t(150);
  std::vector<int> y(150), flipped(150);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::round(rng.Normal() * 4) / 4;
    t[i] = std::exp(3 * s[i]) - 5;
    y[i] = rng.Uniform() < 0.4;
    flipped[i] = 1 - y[i];
  }
  EXPECT_NEAR(RocAuc(s, y), RocAuc(t, y), 1e-15);
  EXPECT_NEAR(RocAuc(s, y) + RocAuc(s, flipped), 1.0, 1e-12);
}

TEST(AveragePrecision, Examples) {
  EXPECT_NEAR(AveragePrecision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1}), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(AveragePrecision(std::vector<double>{0.3, 0.1, 0.7}, std::vector<int>{1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(AveragePrecision(std::vector<double>{0.9, 0.8, 0.2}, std::vector<int>{1, 1, 0}), 1.0);
  // A tied block enters together: precision 1/2 at recall 1.
  EXPECT_DOUBLE_EQ(AveragePrecision(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_THROW(AveragePrecision(std::vector<double>{0.5}, std::vector<int>{0}), Error);
}

TEST(Brier, Examples) {
  EXPECT_DOUBLE_EQ(Brier(std::vector<double>{1, 0, 1}, std::vector<int>{1, 0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(Brier(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.25);
  EXPECT_NEAR(Brier(std::vector<double>{0.8, 0.3}, std::vector<int>{1, 0}), 0.065, 1e-15);
  EXPECT_THROW(Brier(std::vector<double>{1.2}, std::vector<int>{1}), Error);
}

TEST(ConfusionAt, Examples) {
  const std::vector<double> p = {0.6, 0.4, 0.9, 0.1};
  const std::vector<int> y = {1, 0, 0, 1};
  const auto all = ConfusionAt(p, y, 0.0);
  EXPECT_EQ(all.fn + all.tn, 0);
  const auto none = ConfusionAt(p, y, std::nextafter(0.9, 1.0));
  EXPECT_EQ(none.tp + none.fp, 0);
  EXPECT_EQ(ConfusionAt(std::vector<double>{0.6, 0.4}, std::vector<int>{1, 0}, 0.5), (ConfusionCounts{1, 0, 0, 1}));
  EXPECT_EQ(ConfusionAt(std::vector<double>{0.5}, std::vector<int>{1}, 0.5).tp, 1);
}

TEST(ClassificationBundle, PublishedOperatingPoint) {
  // Counts chosen so precision is exactly 0.758 and recall exactly 0.919.
  const ConfusionCounts c{696602, 222398, 61398, 100000};
  const auto m = ClassificationBundle(c);
  EXPECT_DOUBLE_EQ(m.precision, 0.758);
  EXPECT_DOUBLE_EQ(m.recall, 0.919);
  EXPECT_NEAR(m.f1, 0.831, 1e-3);
  EXPECT_NEAR(m.f2, 0.881, 1e-3);
}

TEST(ClassificationBundle, PerfectAndSmallCases) {
  const auto perfect = ClassificationBundle({5, 0, 0, 7});
  for (double v : {perfect.accuracy, perfect.precision, perfect.recall, perfect.f1, perfect.f2, perfect.mcc,
                   perfect.specificity}) {
    EXPECT_DOUBLE_EQ(v, 1.0);
  }
  const auto m = ClassificationBundle({3, 1, 0, 1});
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.f2, 0.9375);
  EXPECT_NEAR(m.mcc, (3.0 * 1 - 1 * 0) / std::sqrt(4.0 * 3 * 2 * 1), 1e-15);
}

TEST(ClassificationBundle, Conventions) {
  const auto no_pred = ClassificationBundle({0, 0, 4, 6});
  EXPECT_EQ(no_pred.precision, 0.0);
  EXPECT_EQ(no_pred.mcc, 0.0);
  EXPECT_EQ(no_pred.f2, 0.0);
  try {
    ClassificationBundle({0, 3, 0, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedMetric);
  }
}

TEST(FBeta, Limits) {
  EXPECT_DOUBLE_EQ(FBeta(0.6, 0.9, 1.0), 2 * 0.6 * 0.9 / 1.5);
  EXPECT_NEAR(FBeta(0.6, 0.9, 100.0), 0.9, 1e-3);
  EXPECT_NEAR(FBeta(0.6, 0.9, 0.01), 0.6, 1e-3);
}

TEST(ThresholdCurve, EndpointsMonotoneAndConsistent) {
  Rng rng(4);
  std::vector<double> p(80);
  std::vector<int> y(80);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.Uniform() * 0.99;
    y[i] = rng.Bernoulli(p[i]);
  }
  y[0] = 1;
  const auto grid = UniformGrid(101);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  const auto curve = ThresholdCurve(p, y, grid);
  ASSERT_EQ(curve.size(), 101u);
  EXPECT_EQ(curve.front().recall, 1.0);
  EXPECT_EQ(curve.back().recall, 0.0);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].recall, curve[i - 1].recall);
  const std::vector<double> one = {0.37};
  const auto point = ThresholdCurve(p, y, one).at(0);
  const auto m = ClassificationBundle(ConfusionAt(p, y, 0.37));
  EXPECT_EQ(point.precision, m.precision);
  EXPECT_EQ(point.recall, m.recall);
  EXPECT_EQ(point.fbeta, m.f2);
  const std::vector<double> unsorted = {0.5, 0.1};
  EXPECT_THROW(ThresholdCurve(p, y, unsorted), Error);
}

TEST(EvaluateAt, FillsRankingMetrics) {
  const std::vector<double> p = {0.9, 0.2, 0.7, 0.4};
  const std::vector<int> y = {1, 0, 0, 1};
  const auto m = EvaluateAt(p, y, 0.5);
  EXPECT_DOUBLE_EQ(m.roc_auc, 0.75);
  EXPECT_DOUBLE_EQ(m.brier, (0.01 + 0.04 + 0.49 + 0.36) / 4);
  EXPECT_TRUE(m.ToJson().contains("mcc"));
}

}  // namespace
}  // namespace wqscreen
