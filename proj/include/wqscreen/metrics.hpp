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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"

namespace wqscreen {

namespace detail {

inline void CheckAligned(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kParameter, "scores (" + std::to_string(scores.size()) + ") and labels (" +
                                           std::to_string(labels.size()) + ") differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorKind::kParameter, "labels must be 0 or 1");
  }
}

}  // namespace detail

// Mann-Whitney estimate with midranks: P(s+ > s-) + P(s+ == s-) / 2.
inline double RocAuc(std::span<const double> scores, std::span<const int> labels) {
  detail::CheckAligned(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        pos += 1;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::kUndefinedMetric, "ROC-AUC needs both classes");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

// Step-wise area under the precision-recall curve. Rows with equal scores
// enter the ranking together.
inline double AveragePrecision(std::span<const double> scores, std::span<const int> labels) {
  detail::CheckAligned(scores, labels);
  const std::size_t n = scores.size();
  const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw Error(ErrorKind::kUndefinedMetric, "average precision needs a positive label");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline double Brier(std::span<const double> probs, std::span<const int> labels) {
  detail::CheckAligned(probs, labels);
  if (probs.empty()) throw Error(ErrorKind::kUndefinedMetric, "Brier score of an empty set");
  double sum = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw Error(ErrorKind::kParameter, "probability " + FormatDouble(probs[i]) + " outside [0, 1]");
    }
    const double d = probs[i] - labels[i];
    sum += d * d;
  }
  return sum / static_cast<double>(probs.size());
}

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// A row is predicted positive when its probability is >= t.
inline ConfusionCounts ConfusionAt(std::span<const double> probs, std::span<const int> labels, double t) {
  detail::CheckAligned(probs, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= t;
    if (labels[i] == 1) {
      (pred ? c.tp : c.fn) += 1;
    } else {
      (pred ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

inline double FBeta(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  return denom > 0 ? (1 + b2) * precision * recall / denom : 0.0;
}

struct MetricBundle {
  double roc_auc = std::numeric_limits<double>::quiet_NaN();
  double pr_auc = std::numeric_limits<double>::quiet_NaN();
  double brier = std::numeric_limits<double>::quiet_NaN();
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double f2 = 0;
  double fbeta = 0;
  double mcc = 0;
  double specificity = 0;
  double beta = 2;

  nlohmann::json ToJson() const {
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"roc_auc", num(roc_auc)}, {"pr_auc", num(pr_auc)},         {"brier", num(brier)},
            {"accuracy", accuracy},    {"precision", precision},        {"recall", recall},
            {"f1", f1},                {"f2", f2},                      {"fbeta", fbeta},
            {"beta", beta},            {"mcc", mcc},                    {"specificity", specificity}};
  }
};

// Threshold-dependent metrics. Precision with no predicted positives is 0,
// MCC with a zero marginal is 0, specificity with no negatives is 0; recall
// with no positives is undefined.
inline MetricBundle ClassificationBundle(const ConfusionCounts& c, double beta = 2.0) {
  if (c.total() <= 0) throw Error(ErrorKind::kUndefinedMetric, "empty confusion matrix");
  if (c.tp + c.fn == 0) throw Error(ErrorKind::kUndefinedMetric, "recall is undefined without positive labels");
  if (!(beta > 0)) throw Error(ErrorKind::kParameter, "beta must be positive");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  MetricBundle m;
  m.beta = beta;
  m.accuracy = (tp + tn) / (tp + fp + fn + tn);
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp / (tp + fn);
  m.specificity = tn + fp > 0 ? tn / (tn + fp) : 0.0;
  m.f1 = FBeta(m.precision, m.recall, 1.0);
  m.f2 = FBeta(m.precision, m.recall, 2.0);
  m.fbeta = FBeta(m.precision, m.recall, beta);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  m.mcc = denom > 0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;
  return m;
}

// Full bundle at threshold t: ranking metrics are left NaN when the labels
// hold a single class.
inline MetricBundle EvaluateAt(std::span<const double> probs, std::span<const int> labels, double t,
                               double beta = 2.0) {
  MetricBundle m = ClassificationBundle(ConfusionAt(probs, labels, t), beta);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < labels.size()) m.roc_auc = RocAuc(probs, labels);
  m.pr_auc = AveragePrecision(probs, labels);
  m.brier = Brier(probs, labels);
  return m;
}

struct CurvePoint {
  double t = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double fbeta = 0;
};

inline std::vector<CurvePoint> ThresholdCurve(std::span<const double> probs, std::span<const int> labels,
                                              std::span<const double> grid, double beta = 2.0) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw Error(ErrorKind::kParameter, "threshold grid must be ascending");
  std::vector<CurvePoint> out;
  out.reserve(grid.size());
  for (double t : grid) {
    const MetricBundle m = ClassificationBundle(ConfusionAt(probs, labels, t), beta);
    out.push_back({t, m.precision, m.recall, m.f1, m.fbeta});
  }
  return out;
}

inline std::vector<double> UniformGrid(std::size_t points) {
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

}  // namespace wqscreen
