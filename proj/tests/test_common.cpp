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
#include <set>

#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/split.hpp"

namespace wqscreen {
namespace {

TEST(Common, FormatDoubleRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = (rng.Uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.Below(20)) - 10);
    double back = 0;
    ASSERT_TRUE(ParseDouble(FormatDouble(v), back));
    EXPECT_EQ(back, v);
  }
  EXPECT_EQ(FormatDouble(0.1), "0.1");
  EXPECT_EQ(FormatDouble(2.0), "2");
}

TEST(Common, ParseRejectsJunk) {
  double d = 0;
  std::int64_t i = 0;
  EXPECT_FALSE(ParseDouble("n/a", d));
  EXPECT_FALSE(ParseDouble("1.5x", d));
  EXPECT_FALSE(ParseDouble("", d));
  EXPECT_TRUE(ParseDouble(" 7.25 ", d));
  EXPECT_EQ(d, 7.25);
  EXPECT_TRUE(ParseInt64("-42", i));
  EXPECT_EQ(i, -42);
  EXPECT_FALSE(ParseInt64("4.2", i));
}

TEST(Common, ErrorCarriesKindAndMessage) {
  const Error e(ErrorKind::kPairing, "fold 2 differs");
  EXPECT_EQ(e.kind(), ErrorKind::kPairing);
  EXPECT_EQ(e.message(), "fold 2 differs");
  EXPECT_NE(std::string(e.what()).find("fold 2 differs"), std::string::npos);
}

TEST(Common, RngIsDeterministicAndSeedsDiffer) {
  Rng a(11), b(11), c(12);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.NextU64();
    EXPECT_EQ(x, b.NextU64());
    differs |= x != c.NextU64();
  }
  EXPECT_TRUE(differs);
  std::set<std::uint64_t> streams;
  for (std::uint64_t s = 0; s < 1000; ++s) streams.insert(DeriveSeed(5, s));
  EXPECT_EQ(streams.size(), 1000u);
}

TEST(Common, NormalMoments) {
  Rng rng(99);
  std::vector<double> xs(200000);
  for (auto& x : xs) x = rng.Normal();
  EXPECT_NEAR(Mean(xs), 0.0, 0.01);
  EXPECT_NEAR(SampleSd(xs), 1.0, 0.01);
}

TEST(Common, PercentileInterpolates) {
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(SortedPercentile(v, 0), 1);
  EXPECT_DOUBLE_EQ(SortedPercentile(v, 100), 4);
  EXPECT_DOUBLE_EQ(SortedPercentile(v, 50), 2.5);
  EXPECT_DOUBLE_EQ(SortedPercentile(v, 2.5), 1.075);
}

TEST(Csv, QuotedFieldsAndEmbeddedNewlines) {
  const auto rows = csv::Parse("a,b\n\"x, y\",\"he said \"\"hi\"\"\"\n\"multi\nline\",\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "x, y");
  EXPECT_EQ(rows[1][1], "he said \"hi\"");
  EXPECT_EQ(rows[2][0], "multi\nline");
  EXPECT_EQ(rows[2][1], "");
  EXPECT_EQ(csv::Parse(csv::Format(rows)), rows);
}

TEST(Csv, CrLfAndBom) {
  const auto rows = csv::Parse("\xEF\xBB\xBFh1,h2\r\n1,2\r\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], "h1");
  EXPECT_EQ(rows[1][1], "2");
}

TEST(Split, SurveySizes) {
  std::vector<int> labels(2207, 0);
  for (std::size_t i = 0; i < 1532; ++i) labels[i] = 1;
  const auto s = StratifiedSplit(labels, 0.2, 1);
  EXPECT_EQ(s.train.size(), 1765u);
  EXPECT_EQ(s.test.size(), 442u);
}

TEST(Split, OneOfEachClassPerSide) {
  const std::vector<int> labels = {1, 0, 1, 0};
  const auto s = StratifiedSplit(labels, 0.5, 4);
  ASSERT_EQ(s.test.size(), 2u);
  EXPECT_EQ(labels[s.test[0]] + labels[s.test[1]], 1);
  EXPECT_EQ(labels[s.train[0]] + labels[s.train[1]], 1);
}

TEST(Split, DeterministicAndDisjoint) {
  std::vector<int> labels(300);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  const auto a = StratifiedSplit(labels, 0.3, 8);
  const auto b = StratifiedSplit(labels, 0.3, 8);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), labels.size());
}

TEST(Split, RejectsBadFraction) {
  const std::vector<int> labels = {1, 0, 1, 0};
  EXPECT_THROW(StratifiedSplit(labels, 0.0, 1), Error);
  EXPECT_THROW(StratifiedSplit(labels, 1.0, 1), Error);
}

}  // namespace
}  // namespace wqscreen
