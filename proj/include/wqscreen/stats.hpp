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

// Inference helpers: 2x2 contingency statistics, stratified paired
// bootstrap tests on ranking metrics, Benjamini-Hochberg adjustment and
// McNemar's test, plus the model-comparison driver built from them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/metrics.hpp"
#include "wqscreen/pipeline.hpp"

namespace wqscreen {

// Upper tail of the chi-square distribution with one degree of freedom.
inline double ChiSquareSf1(double x) {
  if (!(x > 0)) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

// Rows: E. coli absent (0) / present (1); columns: total coliforms absent
// (0) / present (1).
struct ContingencyCounts {
  std::int64_t n00 = 0;
  std::int64_t n01 = 0;
  std::int64_t n10 = 0;
  std::int64_t n11 = 0;

  std::int64_t total() const { return n00 + n01 + n10 + n11; }
};

struct ContingencyResult {
  double chi2 = 0;               // Yates-corrected
  double p = 1;
  double chi2_uncorrected = 0;
  double odds_ratio = 0;
  double rate_given_tc0 = 0;     // P(EC = 1 | TC = 0)
  double rate_given_tc1 = 0;     // P(EC = 1 | TC = 1)
};

inline ContingencyResult ContingencyStats(const ContingencyCounts& c, bool haldane = false) {
  if (c.n00 < 0 || c.n01 < 0 || c.n10 < 0 || c.n11 < 0) throw Error(ErrorKind::kParameter, "counts must be non-negative");
  if (c.total() <= 0) throw Error(ErrorKind::kDegenerateTable, "empty table");
  const bool zero_cell = c.n00 == 0 || c.n01 == 0 || c.n10 == 0 || c.n11 == 0;
  if (zero_cell && !haldane) {
    throw Error(ErrorKind::kDegenerateTable, "a zero cell makes the odds ratio undefined; enable the Haldane correction");
  }
  const double o[2][2] = {{static_cast<double>(c.n00), static_cast<double>(c.n01)},
                          {static_cast<double>(c.n10), static_cast<double>(c.n11)}};
  const double n = static_cast<double>(c.total());
  const double row[2] = {o[0][0] + o[0][1], o[1][0] + o[1][1]};
  const double col[2] = {o[0][0] + o[1][0], o[0][1] + o[1][1]};
  if (row[0] == 0 || row[1] == 0 || col[0] == 0 || col[1] == 0) {
    throw Error(ErrorKind::kDegenerateTable, "a zero margin leaves the chi-squared statistic undefined");
  }
  ContingencyResult r;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = row[i] * col[j] / n;
      const double d = std::fabs(o[i][j] - e);
      const double corrected = d - std::min(0.5, d);
      r.chi2 += corrected * corrected / e;
      r.chi2_uncorrected += d * d / e;
    }
  }
  r.p = ChiSquareSf1(r.chi2);
  const double h = zero_cell ? 0.5 : 0.0;
  r.odds_ratio = ((o[0][0] + h) * (o[1][1] + h)) / ((o[0][1] + h) * (o[1][0] + h));
  r.rate_given_tc0 = o[1][0] / col[0];
  r.rate_given_tc1 = o[1][1] / col[1];
  return r;
}

// ---------------------------------------------------------------------------
// Bootstrap

enum class BootMetric { kRocAuc, kAveragePrecision };

inline std::string_view BootMetricName(BootMetric m) {
  return m == BootMetric::kRocAuc ? "roc_auc" : "average_precision";
}

namespace detail {

// Ranking metrics over a fixed sort order with per-row multiplicities, so a
// bootstrap replicate costs O(n) instead of a fresh sort.
struct RankedScores {
  std::vector<std::size_t> ascending;

  RankedScores(std::span<const double> scores) : ascending(scores.size()) {
    std::iota(ascending.begin(), ascending.end(), 0);
    std::stable_sort(ascending.begin(), ascending.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  }

  // NaN when undefined.
  double Auc(std::span<const double> scores, std::span<const int> labels, std::span<const double> w) const {
    double pos_total = 0, neg_total = 0, neg_below = 0, num = 0;
    const std::size_t n = ascending.size();
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      double pos = 0, neg = 0;
      while (j < n && scores[ascending[j]] == scores[ascending[i]]) {
        (labels[ascending[j]] == 1 ? pos : neg) += w[ascending[j]];
        ++j;
      }
      num += pos * (neg_below + 0.5 * neg);
      neg_below += neg;
      pos_total += pos;
      neg_total += neg;
      i = j;
    }
    if (pos_total == 0 || neg_total == 0) return std::numeric_limits<double>::quiet_NaN();
    return num / (pos_total * neg_total);
  }

  double Ap(std::span<const double> scores, std::span<const int> labels, std::span<const double> w) const {
    double total_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == 1) total_pos += w[i];
    }
    if (total_pos == 0) return std::numeric_limits<double>::quiet_NaN();
    double tp = 0, fp = 0, ap = 0, prev_recall = 0;
    const std::size_t n = ascending.size();
    for (std::size_t end = n; end > 0;) {
      std::size_t start = end - 1;
      while (start > 0 && scores[ascending[start - 1]] == scores[ascending[end - 1]]) --start;
      for (std::size_t k = start; k < end; ++k) (labels[ascending[k]] == 1 ? tp : fp) += w[ascending[k]];
      if (tp + fp > 0) {
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
      }
      end = start;
    }
    return ap;
  }

  double Metric(BootMetric m, std::span<const double> scores, std::span<const int> labels, std::span<const double> w) const {
    return m == BootMetric::kRocAuc ? Auc(scores, labels, w) : Ap(scores, labels, w);
  }
};

}  // namespace detail

struct DeltaResult {
  std::string metric;
  double delta = 0;
  double ci_low = 0;
  double ci_high = 0;
  double p_value = 1;
  double q_value = std::numeric_limits<double>::quiet_NaN();
  int n_boot = 0;
  std::uint64_t seed = 0;
};

// Stratified paired bootstrap of metric(cand) - metric(ref). Strata are the
// (fold, class) cells; each replicate reuses one index draw for both score
// vectors. Two-sided p uses (count + 1) / (n_boot + 1) smoothing.
inline DeltaResult PairedBootstrapDelta(std::span<const double> ref, std::span<const double> cand,
                                        std::span<const int> labels, std::span<const int> fold_ids, BootMetric metric,
                                        int n_boot = 10000, std::uint64_t seed = 0) {
  const std::size_t n = labels.size();
  if (ref.size() != n || cand.size() != n || fold_ids.size() != n) {
    throw Error(ErrorKind::kPairing, "bootstrap inputs differ in length");
  }
  if (n_boot < 1) throw Error(ErrorKind::kParameter, "n_boot must be >= 1");
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::kParameter, "labels must be 0 or 1");
    strata[{fold_ids[i], labels[i]}].push_back(i);
  }
  const detail::RankedScores ref_rank(ref), cand_rank(cand);
  const std::vector<double> ones(n, 1.0);
  DeltaResult out;
  out.metric = std::string(BootMetricName(metric));
  out.n_boot = n_boot;
  out.seed = seed;
  const double ref_point = ref_rank.Metric(metric, ref, labels, ones);
  const double cand_point = cand_rank.Metric(metric, cand, labels, ones);
  if (std::isnan(ref_point) || std::isnan(cand_point)) {
    throw Error(ErrorKind::kUndefinedMetric, std::string(out.metric) + " is undefined on the paired set");
  }
  out.delta = cand_point - ref_point;

  std::vector<double> deltas;
  deltas.reserve(static_cast<std::size_t>(n_boot));
  std::vector<double> w(n);
  const std::int64_t max_attempts = 10LL * n_boot;
  std::int64_t attempts = 0;
  for (int b = 0; b < n_boot; ++b) {
    for (std::uint64_t redraw = 0;; ++redraw) {
      if (++attempts > max_attempts) {
        throw Error(ErrorKind::kUndefinedMetric, "too many bootstrap replicates with an undefined metric");
      }
      Rng rng(DeriveSeed(DeriveSeed(seed, static_cast<std::uint64_t>(b)), redraw));
      std::fill(w.begin(), w.end(), 0.0);
      for (const auto& [key, members] : strata) {
        for (std::size_t d = 0; d < members.size(); ++d) w[members[rng.Below(members.size())]] += 1.0;
      }
      const double r = ref_rank.Metric(metric, ref, labels, w);
      const double c = cand_rank.Metric(metric, cand, labels, w);
      if (std::isnan(r) || std::isnan(c)) continue;
      deltas.push_back(c - r);
      break;
    }
  }
  std::sort(deltas.begin(), deltas.end());
  out.ci_low = SortedPercentile(deltas, 2.5);
  out.ci_high = SortedPercentile(deltas, 97.5);
  const auto le = static_cast<double>(std::upper_bound(deltas.begin(), deltas.end(), 0.0) - deltas.begin());
  const auto ge = static_cast<double>(deltas.end() - std::lower_bound(deltas.begin(), deltas.end(), 0.0));
  const double denom = static_cast<double>(n_boot) + 1.0;
  out.p_value = std::min(1.0, 2.0 * std::min((le + 1.0) / denom, (ge + 1.0) / denom));
  return out;
}

// Benjamini-Hochberg step-up adjusted p-values, in input order.
inline std::vector<double> BhFdr(std::span<const double> p) {
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::kParameter, "p-value " + FormatDouble(v) + " outside [0, 1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t rank = m; rank > 0; --rank) {
    const std::size_t idx = order[rank - 1];
    running = std::min(running, static_cast<double>(m) * p[idx] / static_cast<double>(rank));
    q[idx] = std::max(running, p[idx]);
  }
  return q;
}

struct McNemarResult {
  double statistic = 0;
  double p = 1;
  std::int64_t b = 0;  // reference right, candidate wrong
  std::int64_t c = 0;  // reference wrong, candidate right
};

inline McNemarResult McNemar(std::span<const int> ref_correct, std::span<const int> cand_correct) {
  if (ref_correct.size() != cand_correct.size()) throw Error(ErrorKind::kPairing, "correctness vectors differ in length");
  McNemarResult r;
  for (std::size_t i = 0; i < ref_correct.size(); ++i) {
    if (ref_correct[i] && !cand_correct[i]) ++r.b;
    if (!ref_correct[i] && cand_correct[i]) ++r.c;
  }
  if (r.b + r.c == 0) return r;
  const double d = std::max(std::fabs(static_cast<double>(r.b - r.c)) - 1.0, 0.0);
  r.statistic = d * d / static_cast<double>(r.b + r.c);
  r.p = ChiSquareSf1(r.statistic);
  return r;
}

// ---------------------------------------------------------------------------
// Model comparison

struct ComparisonRow {
  std::string challenger;
  std::string metric;  // roc_auc, average_precision or mcnemar
  double delta = 0;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  double statistic = std::numeric_limits<double>::quiet_NaN();
  double p = 1;
  double q = 1;

  bool significant(double level = 0.05) const { return q < level; }
};

struct ComparisonReport {
  std::string reference;
  int n_boot = 0;
  std::uint64_t seed = 0;
  std::vector<ComparisonRow> rows;

  nlohmann::json ToJson() const {
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rows) {
      rj.push_back({{"challenger", r.challenger},
                    {"metric", r.metric},
                    {"delta", r.delta},
                    {"ci_low", num(r.ci_low)},
                    {"ci_high", num(r.ci_high)},
                    {"statistic", num(r.statistic)},
                    {"p", r.p},
                    {"q", r.q},
                    {"significant_at_0.05", r.significant()}});
    }
    return {{"reference", reference}, {"n_boot", n_boot}, {"seed", seed}, {"rows", rj}};
  }

  std::string ToCsv() const {
    auto num = [](double v) { return std::isfinite(v) ? FormatDouble(v) : std::string(); };
    std::string out;
    csv::AppendRow(out, {"challenger", "metric", "delta", "ci_low", "ci_high", "p", "q", "significant_at_0.05"});
    for (const auto& r : rows) {
      csv::AppendRow(out, {r.challenger, r.metric, FormatDouble(r.delta), num(r.ci_low), num(r.ci_high),
                           FormatDouble(r.p), FormatDouble(r.q), r.significant() ? "true" : "false"});
    }
    return out;
  }
};

inline void CheckPairing(const CvReport& reference, const CvReport& challenger) {
  if (reference.folds.size() != challenger.folds.size()) {
    throw Error(ErrorKind::kPairing, "'" + challenger.name + "' has " + std::to_string(challenger.folds.size()) +
                                         " folds, reference has " + std::to_string(reference.folds.size()));
  }
  for (std::size_t f = 0; f < reference.folds.size(); ++f) {
    const auto& a = reference.folds[f];
    const auto& b = challenger.folds[f];
    if (a.fold != b.fold || a.held_out != b.held_out || a.labels != b.labels) {
      throw Error(ErrorKind::kPairing, "'" + challenger.name + "' is not paired with the reference at fold " +
                                           std::to_string(a.fold));
    }
  }
}

// Paired bootstrap on ROC-AUC and AP plus McNemar at each model's global
// threshold; BH runs separately within each of the three families. Each
// test draws from a stream keyed by (challenger name, metric), so the
// challenger order does not matter.
inline ComparisonReport CompareModels(const CvReport& reference, const std::vector<CvReport>& challengers,
                                      int n_boot = 10000, std::uint64_t seed = 0) {
  ComparisonReport report;
  report.reference = reference.name;
  report.n_boot = n_boot;
  report.seed = seed;
  const CvReport::Pooled ref = reference.pooled_view();
  std::vector<int> ref_correct(ref.probs.size());
  for (std::size_t i = 0; i < ref.probs.size(); ++i) {
    ref_correct[i] = (ref.probs[i] >= reference.global_threshold) == (ref.labels[i] == 1);
  }
  for (const auto& ch : challengers) {
    CheckPairing(reference, ch);
    const CvReport::Pooled cand = ch.pooled_view();
    for (BootMetric m : {BootMetric::kRocAuc, BootMetric::kAveragePrecision}) {
      const std::uint64_t sub = DeriveSeed(seed, HashString(ch.name + "/" + std::string(BootMetricName(m))));
      const DeltaResult d = PairedBootstrapDelta(ref.probs, cand.probs, ref.labels, ref.fold_ids, m, n_boot, sub);
      ComparisonRow row;
      row.challenger = ch.name;
      row.metric = d.metric;
      row.delta = d.delta;
      row.ci_low = d.ci_low;
      row.ci_high = d.ci_high;
      row.p = d.p_value;
      report.rows.push_back(row);
    }
    std::vector<int> cand_correct(cand.probs.size());
    for (std::size_t i = 0; i < cand.probs.size(); ++i) {
      cand_correct[i] = (cand.probs[i] >= ch.global_threshold) == (cand.labels[i] == 1);
    }
    const McNemarResult mc = McNemar(ref_correct, cand_correct);
    ComparisonRow row;
    row.challenger = ch.name;
    row.metric = "mcnemar";
    row.delta = static_cast<double>(mc.c - mc.b) / static_cast<double>(ref_correct.size());
    row.statistic = mc.statistic;
    row.p = mc.p;
    report.rows.push_back(row);
  }
  for (const char* family : {"roc_auc", "average_precision", "mcnemar"}) {
    std::vector<std::size_t> idx;
    std::vector<double> p;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      if (report.rows[i].metric == family) {
        idx.push_back(i);
        p.push_back(report.rows[i].p);
      }
    }
    const auto q = BhFdr(p);
    for (std::size_t j = 0; j < idx.size(); ++j) report.rows[idx[j]].q = q[j];
  }
  return report;
}

}  // namespace wqscreen
