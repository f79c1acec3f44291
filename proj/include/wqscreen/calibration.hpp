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

// Probability calibration (Platt scaling, isotonic regression with a
// sigmoid fallback) and F-beta threshold selection.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/metrics.hpp"

namespace wqscreen {

enum class CalibrationMethod { kPlatt, kIsotonic, kSigmoidFallback };

inline std::string_view CalibrationMethodName(CalibrationMethod m) {
  switch (m) {
    case CalibrationMethod::kPlatt: return "platt";
    case CalibrationMethod::kIsotonic: return "isotonic";
    case CalibrationMethod::kSigmoidFallback: return "sigmoid_fallback";
  }
  return "unknown";
}

inline CalibrationMethod ParseCalibrationMethod(std::string_view name) {
  if (name == "platt") return CalibrationMethod::kPlatt;
  if (name == "isotonic") return CalibrationMethod::kIsotonic;
  if (name == "sigmoid_fallback") return CalibrationMethod::kSigmoidFallback;
  throw Error(ErrorKind::kParameter, "unknown calibration method '" + std::string(name) + "'");
}

struct Calibrator {
  CalibrationMethod method = CalibrationMethod::kPlatt;
  double a = 1.0;  // platt: sigmoid(a * s + b)
  double b = 0.0;
  std::vector<double> knot_x;  // isotonic breakpoints, strictly increasing
  std::vector<double> knot_y;  // non-decreasing

  double Apply(double s) const {
    if (method != CalibrationMethod::kIsotonic) return Sigmoid(a * s + b);
    if (s <= knot_x.front()) return std::clamp(knot_y.front(), 0.0, 1.0);
    if (s >= knot_x.back()) return std::clamp(knot_y.back(), 0.0, 1.0);
    const auto hi = static_cast<std::size_t>(std::upper_bound(knot_x.begin(), knot_x.end(), s) - knot_x.begin());
    const std::size_t lo = hi - 1;
    const double frac = (s - knot_x[lo]) / (knot_x[hi] - knot_x[lo]);
    return std::clamp(knot_y[lo] + frac * (knot_y[hi] - knot_y[lo]), 0.0, 1.0);
  }

  std::vector<double> Apply(std::span<const double> scores) const {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = Apply(scores[i]);
    return out;
  }

  bool operator==(const Calibrator&) const = default;

  nlohmann::json ToJson() const {
    nlohmann::json j = {{"method", CalibrationMethodName(method)}};
    if (method == CalibrationMethod::kIsotonic) {
      j["knot_x"] = knot_x;
      j["knot_y"] = knot_y;
    } else {
      j["a"] = a;
      j["b"] = b;
    }
    return j;
  }

  static Calibrator FromJson(const nlohmann::json& j) {
    Calibrator c;
    c.method = ParseCalibrationMethod(j.at("method").get<std::string>());
    if (c.method == CalibrationMethod::kIsotonic) {
      c.knot_x = j.at("knot_x").get<std::vector<double>>();
      c.knot_y = j.at("knot_y").get<std::vector<double>>();
      if (c.knot_x.empty() || c.knot_x.size() != c.knot_y.size()) {
        throw Error(ErrorKind::kSchema, "isotonic calibrator needs matching, non-empty knot lists");
      }
    } else {
      c.a = j.at("a").get<double>();
      c.b = j.at("b").get<double>();
    }
    return c;
  }
};

// Platt scaling with smoothed targets, fitted by the Newton method with
// backtracking line search of Lin, Lin and Weng.
inline Calibrator FitPlatt(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  double prior1 = 0, prior0 = 0;
  for (int y : labels) (y == 1 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] == 1 ? hi : lo;

  // Fits P(y=1|s) = 1 / (1 + exp(A s + B)).
  double A = 0.0, B = std::log((prior0 + 1.0) / (prior1 + 1.0));
  constexpr double kSigma = 1e-12, kMinStep = 1e-10, kEps = 1e-5;
  auto objective = [&](double a, double b) {
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fapb = scores[i] * a + b;
      f += fapb >= 0 ? t[i] * fapb + std::log1p(std::exp(-fapb)) : (t[i] - 1) * fapb + std::log1p(std::exp(fapb));
    }
    return f;
  };
  double fval = objective(A, B);
  for (int iter = 0; iter < 100; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fapb = scores[i] * A + B;
      double p, q;
      if (fapb >= 0) {
        p = std::exp(-fapb) / (1.0 + std::exp(-fapb));
        q = 1.0 / (1.0 + std::exp(-fapb));
      } else {
        p = 1.0 / (1.0 + std::exp(fapb));
        q = std::exp(fapb) / (1.0 + std::exp(fapb));
      }
      const double d2 = p * q;
      h11 += scores[i] * scores[i] * d2;
      h22 += d2;
      h21 += scores[i] * d2;
      const double d1 = t[i] - p;
      g1 += scores[i] * d1;
      g2 += d1;
    }
    if (std::fabs(g1) < kEps && std::fabs(g2) < kEps) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= kMinStep) {
      const double newA = A + step * dA, newB = B + step * dB;
      const double newf = objective(newA, newB);
      if (newf < fval + 1e-4 * step * gd) {
        A = newA;
        B = newB;
        fval = newf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;
  }
  Calibrator c;
  c.method = CalibrationMethod::kPlatt;
  c.a = -A;
  c.b = -B;
  return c;
}

// Pool-adjacent-violators fit of a non-decreasing function of x to y.
// Returns the fitted value for every input, in input order.
inline std::vector<double> PavFit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  struct Block {
    double sum;
    double weight;
    std::size_t end;  // one past the last sorted position
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < n;) {
    // Tied x values are pooled before any violation is resolved.
    std::size_t j = i;
    double sum = 0;
    while (j < n && x[order[j]] == x[order[i]]) sum += y[order[j++]];
    blocks.push_back({sum, static_cast<double>(j - i), j});
    while (blocks.size() > 1) {
      const Block& last = blocks.back();
      const Block& prev = blocks[blocks.size() - 2];
      if (prev.sum / prev.weight <= last.sum / last.weight) break;
      const Block merged{prev.sum + last.sum, prev.weight + last.weight, last.end};
      blocks.pop_back();
      blocks.back() = merged;
    }
    i = j;
  }
  std::vector<double> fitted(n);
  std::size_t start = 0;
  for (const Block& blk : blocks) {
    for (std::size_t k = start; k < blk.end; ++k) fitted[order[k]] = blk.sum / blk.weight;
    start = blk.end;
  }
  return fitted;
}

// Isotonic calibration with a sigmoid fallback when the labels hold one
// class, there are fewer than two distinct scores, or the fitted map is
// constant.
inline Calibrator FitCalibrator(std::span<const double> scores, std::span<const int> labels,
                                CalibrationMethod method = CalibrationMethod::kIsotonic) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kParameter, "calibration scores and labels differ in length");
  }
  if (scores.size() < 2) throw Error(ErrorKind::kParameter, "calibration needs at least 2 rows");
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::kParameter, "calibration scores must be finite");
  }
  detail::CheckAligned(scores, labels);
  if (method == CalibrationMethod::kPlatt) return FitPlatt(scores, labels);

  auto fallback = [&] {
    Calibrator c = FitPlatt(scores, labels);
    c.method = CalibrationMethod::kSigmoidFallback;
    return c;
  };
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) return fallback();

  std::vector<double> y(labels.begin(), labels.end());
  const std::vector<double> fitted = PavFit(scores, y);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  Calibrator c;
  c.method = CalibrationMethod::kIsotonic;
  for (std::size_t idx : order) {
    if (c.knot_x.empty() || scores[idx] != c.knot_x.back()) {
      c.knot_x.push_back(scores[idx]);
      c.knot_y.push_back(fitted[idx]);
    }
  }
  if (c.knot_x.size() < 2) return fallback();
  if (c.knot_y.front() == c.knot_y.back()) return fallback();
  return c;
}

struct ThresholdChoice {
  double threshold = 0.5;
  double fbeta = 0.0;
};

// Scans every distinct probability as a candidate threshold (positive iff
// prob >= t) and returns the F-beta maximiser; among equal scores the
// smallest threshold wins.
inline ThresholdChoice SelectThreshold(std::span<const double> probs, std::span<const int> labels, double beta = 2.0) {
  detail::CheckAligned(probs, labels);
  if (!(beta > 0)) throw Error(ErrorKind::kParameter, "beta must be positive");
  const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw Error(ErrorKind::kThreshold, "threshold selection needs at least one positive label");
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  const double b2 = beta * beta;
  struct Candidate {
    double t;
    double f;
  };
  std::vector<Candidate> candidates;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && probs[order[j]] == probs[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double fn = total_pos - tp;
    candidates.push_back({probs[order[i]], (1 + b2) * tp / ((1 + b2) * tp + b2 * fn + fp)});
    i = j;
  }
  ThresholdChoice best{candidates.back().t, -1.0};
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    if (it->f > best.fbeta + 1e-12) best = {it->t, it->f};
  }
  return best;
}

}  // namespace wqscreen
