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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "wqscreen/stats.hpp"

namespace wqscreen {
namespace {

// Standard normal upper tail by composite Simpson integration of the density.
double NormalUpperTail(double z) {
  const int n = 20000;
  const double hi = 40.0;
  const double h = (hi - z) / n;
  auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  double s = f(z) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(z + i * h);
  return s * h / 3.0;
}

TEST(Contingency, ReproducesPublishedTable) {
  const auto r = ContingencyStats({216, 458, 49, 1484});
  EXPECT_NEAR(r.chi2, 366.11, 0.5);
  EXPECT_NEAR(r.chi2_uncorrected, 368.8, 0.5);
  EXPECT_GT(r.chi2_uncorrected, r.chi2 + 1.0);
  EXPECT_NEAR(r.odds_ratio, 14.28, 0.01);
  EXPECT_NEAR(r.rate_given_tc0, 0.185, 5e-4);
  EXPECT_NEAR(r.rate_given_tc1, 0.764, 5e-4);
  EXPECT_LT(r.p, 1e-4);
}

TEST(Contingency, ShortcutFormulaOracle) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const double a = 1 + rng.Below(300), b = 1 + rng.Below(300), c = 1 + rng.Below(300), d = 1 + rng.Below(300);
    const double n = a + b + c + d;
    const double den = (a + b) * (c + d) * (a + c) * (b + d);
    const double diff = std::fabs(a * d - b * c);
    const double yates = n * std::pow(std::max(diff - n / 2, 0.0), 2) / den;
    const double plain = n * diff * diff / den;
    const auto r = ContingencyStats({static_cast<std::int64_t>(a), static_cast<std::int64_t>(b),
                                     static_cast<std::int64_t>(c), static_cast<std::int64_t>(d)});
    // The cellwise clamp only differs from the shortcut when |ad - bc| < n / 2.
    if (diff >= n / 2) {
      EXPECT_NEAR(r.chi2, yates, 1e-9 * std::max(1.0, yates));
    }
    EXPECT_NEAR(r.chi2_uncorrected, plain, 1e-9 * std::max(1.0, plain));
    EXPECT_NEAR(r.odds_ratio, a * d / (b * c), 1e-12 * a * d / (b * c));
  }
}

TEST(Contingency, BalancedAndDegenerate) {
  const auto r = ContingencyStats({50, 50, 50, 50});
  EXPECT_DOUBLE_EQ(r.odds_ratio, 1.0);
  EXPECT_GE(r.chi2, 0.0);
  EXPECT_LT(r.chi2, 1e-9);
  EXPECT_DOUBLE_EQ(r.p, 1.0);
  try {
    ContingencyStats({10, 0, 5, 5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateTable);
  }
  const auto h = ContingencyStats({10, 0, 5, 5}, true);
  EXPECT_NEAR(h.odds_ratio, 10.5 * 5.5 / (0.5 * 5.5), 1e-12);
}

TEST(ChiSquare, SurvivalAgainstIntegratedNormal) {
  EXPECT_NEAR(ChiSquareSf1(3.841), 0.05, 1e-3);
  EXPECT_DOUBLE_EQ(ChiSquareSf1(0.0), 1.0);
  for (double x : {0.01, 0.5, 1.0, 2.7, 3.841, 6.63, 10.0, 20.0}) {
    const double oracle = 2.0 * NormalUpperTail(std::sqrt(x));
    EXPECT_NEAR(ChiSquareSf1(x), oracle, 1e-7 + 1e-6 * oracle) << x;
  }
}

TEST(Bh, Examples) {
  const std::vector<double> a{0.01, 0.02, 0.03};
  for (double q : BhFdr(a)) EXPECT_NEAR(q, 0.03, 1e-15);
  const std::vector<double> one{0.37};
  EXPECT_EQ(BhFdr(one), one);
  const std::vector<double> b{0.005, 0.04, 0.04, 0.8};
  const auto q = BhFdr(b);
  EXPECT_NEAR(q[0], 0.02, 1e-12);
  EXPECT_NEAR(q[1], 0.16 / 3, 1e-12);
  EXPECT_NEAR(q[2], 0.16 / 3, 1e-12);
  EXPECT_NEAR(q[3], 0.8, 1e-12);
  const std::vector<double> bad{0.1, 1.5};
  EXPECT_THROW(BhFdr(bad), Error);
  EXPECT_TRUE(BhFdr(std::vector<double>{}).empty());
}

TEST(Bh, StepUpOracleAndProperties) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.Below(12);
    std::vector<double> p(m);
    for (auto& v : p) v = rng.Below(4) == 0 ? 0.5 : rng.Uniform();
    const auto q = BhFdr(p);
    // Oracle: q_i = min over all j with p_j >= p_i of m p_j / rank_j, with
    // rank_j the count of p values <= p_j.
    for (std::size_t i = 0; i < m; ++i) {
      double best = 1.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (p[j] < p[i]) continue;
        const auto rank = std::count_if(p.begin(), p.end(), [&](double v) { return v <= p[j]; });
        best = std::min(best, static_cast<double>(m) * p[j] / static_cast<double>(rank));
      }
      EXPECT_NEAR(q[i], best, 1e-12);
      EXPECT_GE(q[i], p[i]);
      EXPECT_LE(q[i], 1.0);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (p[i] < p[j]) {
          EXPECT_LE(q[i], q[j]);
        }
      }
    }
  }
}

TEST(McNemar, Examples) {
  std::vector<int> ref, cand;
  for (int i = 0; i < 10; ++i) ref.push_back(1), cand.push_back(0);
  for (int i = 0; i < 2; ++i) ref.push_back(0), cand.push_back(1);
  for (int i = 0; i < 30; ++i) ref.push_back(1), cand.push_back(1);
  const auto r = McNemar(ref, cand);
  EXPECT_EQ(r.b, 10);
  EXPECT_EQ(r.c, 2);
  EXPECT_NEAR(r.statistic, 49.0 / 12.0, 1e-12);
  EXPECT_NEAR(r.p, 0.043, 1e-3);
  EXPECT_NEAR(r.p, 2.0 * NormalUpperTail(std::sqrt(49.0 / 12.0)), 1e-7);

  const auto same = McNemar(ref, ref);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(same.p, 1.0);

  for (int b = 1; b <= 20; ++b) {
    std::vector<int> x, y;
    for (int i = 0; i < b; ++i) x.push_back(1), y.push_back(0), x.push_back(0), y.push_back(1);
    const auto s = McNemar(x, y);
    EXPECT_EQ(s.statistic, 0.0);
    EXPECT_EQ(s.p, 1.0);
  }
  EXPECT_THROW(McNemar(std::vector<int>{1}, std::vector<int>{1, 0}), Error);
}

struct Paired {
  std::vector<double> ref, cand;
  std::vector<int> labels, folds;
};

Paired MakePaired(std::size_t n, std::uint64_t seed, double cand_signal) {
  Rng rng(seed);
  Paired p;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.Uniform() < 0.4 ? 1 : 0;
    p.labels.push_back(y);
    p.folds.push_back(1 + static_cast<int>(i % 5));
    p.ref.push_back(rng.Uniform() + 0.3 * y);
    p.cand.push_back(rng.Uniform() + cand_signal * y);
  }
  return p;
}

TEST(Bootstrap, IdenticalScoresGiveZero) {
  const auto p = MakePaired(150, 1, 0.3);
  for (BootMetric m : {BootMetric::kRocAuc, BootMetric::kAveragePrecision}) {
    const auto d = PairedBootstrapDelta(p.ref, p.ref, p.labels, p.folds, m, 500, 3);
    EXPECT_EQ(d.delta, 0.0);
    EXPECT_EQ(d.ci_low, 0.0);
    EXPECT_EQ(d.ci_high, 0.0);
    EXPECT_EQ(d.p_value, 1.0);
  }
}

TEST(Bootstrap, OracleBeatsNoise) {
  Rng rng(77);
  std::vector<double> ref, cand;
  std::vector<int> labels, folds;
  for (int i = 0; i < 200; ++i) {
    const int y = i % 3 == 0 ? 1 : 0;
    labels.push_back(y);
    folds.push_back(1 + i % 5);
    cand.push_back(y);
    ref.push_back(rng.Uniform());
  }
  const auto d = PairedBootstrapDelta(ref, cand, labels, folds, BootMetric::kRocAuc, 2000, 11);
  EXPECT_GT(d.delta, 0.0);
  EXPECT_LT(d.p_value, 0.01);
  EXPECT_NEAR(d.delta, 1.0 - RocAuc(ref, labels), 1e-12);
}

TEST(Bootstrap, RowPermutationAndDeterminism) {
  const auto p = MakePaired(180, 2, 0.5);
  const auto a = PairedBootstrapDelta(p.ref, p.cand, p.labels, p.folds, BootMetric::kAveragePrecision, 400, 5);
  const auto b = PairedBootstrapDelta(p.ref, p.cand, p.labels, p.folds, BootMetric::kAveragePrecision, 400, 5);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.ci_low, b.ci_low);
  EXPECT_EQ(a.ci_high, b.ci_high);
  EXPECT_EQ(a.p_value, b.p_value);

  std::vector<std::size_t> perm(p.labels.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(3);
  rng.Shuffle(perm);
  Paired q;
  for (std::size_t i : perm) {
    q.ref.push_back(p.ref[i]);
    q.cand.push_back(p.cand[i]);
    q.labels.push_back(p.labels[i]);
    q.folds.push_back(p.folds[i]);
  }
  const auto c = PairedBootstrapDelta(q.ref, q.cand, q.labels, q.folds, BootMetric::kAveragePrecision, 400, 5);
  EXPECT_NEAR(c.delta, a.delta, 1e-12);
  EXPECT_LE(a.ci_low, a.ci_high);
  EXPECT_GT(a.p_value, 0.0);
  EXPECT_LE(a.p_value, 1.0);
}

// The weighted replicate metric must agree with the plain metric evaluated
// on an explicitly materialized resample.
TEST(Bootstrap, ReplicatesMatchMaterializedResamples) {
  const auto p = MakePaired(60, 4, 0.4);
  const int n_boot = 40;
  const std::uint64_t seed = 21;
  for (BootMetric m : {BootMetric::kRocAuc, BootMetric::kAveragePrecision}) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < p.labels.size(); ++i) strata[{p.folds[i], p.labels[i]}].push_back(i);
    std::vector<double> deltas;
    for (int b = 0; b < n_boot; ++b) {
      Rng rng(DeriveSeed(DeriveSeed(seed, static_cast<std::uint64_t>(b)), 0));
      std::vector<double> r, c;
      std::vector<int> y;
      for (const auto& [key, members] : strata) {
        for (std::size_t d = 0; d < members.size(); ++d) {
          const std::size_t i = members[rng.Below(members.size())];
          r.push_back(p.ref[i]);
          c.push_back(p.cand[i]);
          y.push_back(p.labels[i]);
        }
      }
      deltas.push_back(m == BootMetric::kRocAuc ? RocAuc(c, y) - RocAuc(r, y)
                                                : AveragePrecision(c, y) - AveragePrecision(r, y));
    }
    std::sort(deltas.begin(), deltas.end());
    const auto d = PairedBootstrapDelta(p.ref, p.cand, p.labels, p.folds, m, n_boot, seed);
    EXPECT_NEAR(d.ci_low, SortedPercentile(deltas, 2.5), 1e-12);
    EXPECT_NEAR(d.ci_high, SortedPercentile(deltas, 97.5), 1e-12);
    const double le = static_cast<double>(std::count_if(deltas.begin(), deltas.end(), [](double v) { return v <= 0; }));
    const double ge = static_cast<double>(std::count_if(deltas.begin(), deltas.end(), [](double v) { return v >= 0; }));
    EXPECT_NEAR(d.p_value, std::min(1.0, 2.0 * std::min(le + 1, ge + 1) / (n_boot + 1)), 1e-12);
  }
}

TEST(Bootstrap, Errors) {
  const auto p = MakePaired(50, 6, 0.2);
  std::vector<double> short_ref(p.ref.begin(), p.ref.end() - 1);
  EXPECT_THROW(PairedBootstrapDelta(short_ref, p.cand, p.labels, p.folds, BootMetric::kRocAuc, 10, 1), Error);
  std::vector<int> one_class(p.labels.size(), 1);
  EXPECT_THROW(PairedBootstrapDelta(p.ref, p.cand, one_class, p.folds, BootMetric::kRocAuc, 10, 1), Error);
}

CvReport MakeReport(const std::string& name, const std::vector<int>& labels, const std::vector<double>& probs, int k) {
  CvReport r;
  r.name = name;
  r.k = k;
  for (int f = 1; f <= k; ++f) {
    FoldResult fr;
    fr.fold = f;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<int>(i % static_cast<std::size_t>(k)) + 1 != f) continue;
      fr.held_out.push_back(i);
      fr.labels.push_back(labels[i]);
      fr.raw.push_back(probs[i]);
      fr.calibrated.push_back(probs[i]);
    }
    fr.threshold = 0.5;
    r.folds.push_back(fr);
  }
  r.Summarize();
  return r;
}

TEST(Compare, CloneIsNull) {
  const auto p = MakePaired(200, 8, 0.3);
  std::vector<double> probs(p.ref.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = p.ref[i] / 1.3;
  const auto ref = MakeReport("ref", p.labels, probs, 5);
  auto clone = ref;
  clone.name = "clone";
  const auto rep = CompareModels(ref, {clone}, 300, 1);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.delta, 0.0);
    EXPECT_EQ(row.p, 1.0);
    EXPECT_EQ(row.q, 1.0);
    EXPECT_FALSE(row.significant());
  }
}

TEST(Compare, OrderInvarianceAndFamilies) {
  const auto p = MakePaired(200, 10, 0.3);
  std::vector<double> a(p.ref.size()), b(a.size()), c(a.size());
  Rng rng(4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = p.ref[i] / 1.3;
    b[i] = std::min(1.0, (p.ref[i] + 0.6 * p.labels[i]) / 1.9);
    c[i] = rng.Uniform();
  }
  const auto ref = MakeReport("ref", p.labels, a, 5);
  const auto strong = MakeReport("strong", p.labels, b, 5);
  const auto noise = MakeReport("noise", p.labels, c, 5);
  const auto r1 = CompareModels(ref, {strong, noise}, 500, 3);
  const auto r2 = CompareModels(ref, {noise, strong}, 500, 3);
  auto key = [](const ComparisonReport& r) {
    std::map<std::pair<std::string, std::string>, std::pair<double, double>> m;
    for (const auto& row : r.rows) m[{row.challenger, row.metric}] = {row.p, row.q};
    return m;
  };
  EXPECT_EQ(key(r1), key(r2));
  // BH within each family, recomputed independently.
  for (const char* fam : {"roc_auc", "average_precision", "mcnemar"}) {
    std::vector<double> ps, qs;
    for (const auto& row : r1.rows) {
      if (row.metric == fam) ps.push_back(row.p), qs.push_back(row.q);
    }
    ASSERT_EQ(ps.size(), 2u);
    const double lo = std::min(ps[0], ps[1]), hi = std::max(ps[0], ps[1]);
    const double q_hi = hi, q_lo = std::min(2 * lo, hi);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(qs[i], ps[i] == lo ? q_lo : q_hi, 1e-12) << fam;
  }
  for (const auto& row : r1.rows) {
    if (row.challenger == "strong" && row.metric == "roc_auc") {
      EXPECT_GT(row.delta, 0.0);
      EXPECT_TRUE(row.significant());
    }
  }
  const auto csv = r1.ToCsv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "challenger,metric,delta,ci_low,ci_high,p,q,significant_at_0.05");
}

TEST(Compare, PairingMismatchNamesFold) {
  const auto p = MakePaired(100, 12, 0.3);
  std::vector<double> probs(p.ref.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = p.ref[i] / 1.3;
  const auto ref = MakeReport("ref", p.labels, probs, 5);
  auto bad = MakeReport("bad", p.labels, probs, 5);
  std::swap(bad.folds[2].held_out[0], bad.folds[3].held_out[0]);
  try {
    CompareModels(ref, {bad}, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPairing);
    EXPECT_NE(e.message().find("fold 3"), std::string::npos);
  }
}

}  // namespace
}  // namespace wqscreen
