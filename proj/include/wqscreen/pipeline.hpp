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

// Two-stage model-as-feature pipeline. Stage 1 predicts total-coliform
// presence; its out-of-fold probability (PTC) becomes an extra, unscaled
// feature for the stage-2 E. coli model. Every fitted object of a fold
// (scaler, learners, calibrator, threshold) sees only that fold's training
// rows.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wqscreen/calibration.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/features.hpp"
#include "wqscreen/metrics.hpp"
#include "wqscreen/records.hpp"
#include "wqscreen/split.hpp"
#include "wqscreen/trees.hpp"

namespace wqscreen {

inline constexpr std::string_view kPtcColumn = "ptc";

// ---------------------------------------------------------------------------
// Fold planning

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  double inner_fraction = 0.85;
  std::vector<int> fold_of;
  std::vector<std::vector<std::size_t>> inner_train;
  std::vector<std::vector<std::size_t>> inner_valid;

  std::size_t rows() const { return fold_of.size(); }

  std::vector<std::size_t> HeldOut(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> TrainPortion(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != fold) out.push_back(i);
    }
    return out;
  }

  bool operator==(const FoldPlan&) const = default;

  nlohmann::json ToJson() const {
    return {{"k", k},
            {"seed", seed},
            {"inner_fraction", inner_fraction},
            {"fold_of", fold_of},
            {"inner_train", inner_train},
            {"inner_valid", inner_valid}};
  }

  static FoldPlan FromJson(const nlohmann::json& j) {
    FoldPlan p;
    p.k = j.at("k").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.inner_fraction = j.at("inner_fraction").get<double>();
    p.fold_of = j.at("fold_of").get<std::vector<int>>();
    p.inner_train = j.at("inner_train").get<std::vector<std::vector<std::size_t>>>();
    p.inner_valid = j.at("inner_valid").get<std::vector<std::vector<std::size_t>>>();
    return p;
  }
};

// Stratified k-fold assignment: each class is shuffled and dealt round-robin,
// the dealing position carrying over from one class to the next so fold
// sizes differ by at most one. Each fold's training portion is then split
// into inner-train / inner-valid, stratified, at inner_fraction.
inline FoldPlan PlanFolds(std::span<const int> labels, int k, double inner_fraction = 0.85, std::uint64_t seed = 0) {
  if (k < 2) throw Error(ErrorKind::kParameter, "k must be >= 2");
  if (!(inner_fraction > 0 && inner_fraction < 1)) throw Error(ErrorKind::kParameter, "inner_fraction must lie in (0, 1)");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::kParameter, "labels must be 0 or 1");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[static_cast<std::size_t>(c)].size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::kStratification, "class " + std::to_string(c) + " has " +
                                                  std::to_string(by_class[static_cast<std::size_t>(c)].size()) +
                                                  " rows, fewer than k = " + std::to_string(k));
    }
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.inner_fraction = inner_fraction;
  plan.fold_of.assign(labels.size(), -1);
  Rng rng(DeriveSeed(seed, 1));
  std::size_t deal = 0;
  for (int c : {1, 0}) {
    auto members = by_class[static_cast<std::size_t>(c)];
    rng.Shuffle(members);
    for (std::size_t idx : members) plan.fold_of[idx] = static_cast<int>(deal++ % static_cast<std::size_t>(k));
  }
  for (int f = 0; f < k; ++f) {
    const auto portion = plan.TrainPortion(f);
    std::vector<int> portion_labels;
    portion_labels.reserve(portion.size());
    for (std::size_t i : portion) portion_labels.push_back(labels[i]);
    const SplitIndices inner = StratifiedSplit(portion_labels, 1.0 - inner_fraction, DeriveSeed(seed, 10 + static_cast<std::uint64_t>(f)));
    std::vector<std::size_t> tr, va;
    for (std::size_t i : inner.train) tr.push_back(portion[i]);
    for (std::size_t i : inner.test) va.push_back(portion[i]);
    plan.inner_train.push_back(std::move(tr));
    plan.inner_valid.push_back(std::move(va));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Scaling

// Z-scores the physicochemical columns with means and population SDs taken
// over the non-missing cells of the fit rows. Zero-SD columns are centred
// only; every other column passes through.
struct Scaler {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> sd;

  FeatureMatrix Transform(const FeatureMatrix& matrix) const {
    FeatureMatrix out = matrix;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const auto c = matrix.FindColumn(columns[j]);
      if (!c) throw Error(ErrorKind::kSchema, "scaled column '" + columns[j] + "' is absent");
      for (std::size_t r = 0; r < matrix.rows(); ++r) {
        if (!matrix.missing(r, *c)) out.Set(r, *c, (matrix.value(r, *c) - mean[j]) / sd[j]);
      }
    }
    return out;
  }

  bool operator==(const Scaler&) const = default;

  nlohmann::json ToJson() const { return {{"columns", columns}, {"mean", mean}, {"sd", sd}}; }

  static Scaler FromJson(const nlohmann::json& j) {
    Scaler s;
    s.columns = j.at("columns").get<std::vector<std::string>>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.sd = j.at("sd").get<std::vector<double>>();
    if (s.mean.size() != s.columns.size() || s.sd.size() != s.columns.size()) {
      throw Error(ErrorKind::kSchema, "scaler vectors differ in length");
    }
    return s;
  }
};

inline Scaler FitFoldScaler(const FeatureMatrix& matrix, std::span<const std::size_t> fit_indices) {
  if (fit_indices.empty()) throw Error(ErrorKind::kParameter, "scaler needs at least one fit row");
  Scaler s;
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    if (matrix.column(c).kind != ColumnKind::kPhysicochemical) continue;
    double sum = 0, count = 0;
    for (std::size_t r : fit_indices) {
      if (!matrix.missing(r, c)) {
        sum += matrix.value(r, c);
        count += 1;
      }
    }
    const double mean = count > 0 ? sum / count : 0.0;
    double ss = 0;
    for (std::size_t r : fit_indices) {
      if (!matrix.missing(r, c)) ss += (matrix.value(r, c) - mean) * (matrix.value(r, c) - mean);
    }
    const double sd = count > 0 ? std::sqrt(ss / count) : 0.0;
    s.columns.push_back(matrix.column(c).name);
    s.mean.push_back(mean);
    s.sd.push_back(sd > 0 ? sd : 1.0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  LearnerConfig stage1 = LearnerConfig::Leafwise();
  LearnerConfig stage2 = LearnerConfig::Depthwise();
  CalibrationMethod calibration = CalibrationMethod::kIsotonic;
  double beta = 2.0;
  int folds = 5;
  double inner_fraction = 0.85;
  std::uint64_t seed = 0;
  // Stage-2 training rows of fold f take PTC values cross-fitted without
  // fold f, so no fold-f label reaches fold f's stage-2 model.
  bool nested_ptc = true;

  nlohmann::json ToJson() const {
    return {{"stage1", stage1.ToJson()},
            {"stage2", stage2.ToJson()},
            {"calibration", CalibrationMethodName(calibration)},
            {"beta", beta},
            {"folds", folds},
            {"inner_fraction", inner_fraction},
            {"seed", seed},
            {"nested_ptc", nested_ptc}};
  }

  static PipelineConfig FromJson(const nlohmann::json& j) {
    PipelineConfig c;
    if (j.contains("stage1")) c.stage1 = LearnerConfig::FromJson(j.at("stage1"));
    if (j.contains("stage2")) {
      c.stage2 = LearnerConfig::FromJson(j.at("stage2").contains("preset") ? j.at("stage2")
                                                                          : MergePreset(j.at("stage2"), "depthwise"));
    }
    if (j.contains("calibration")) c.calibration = ParseCalibrationMethod(j.at("calibration").get<std::string>());
    c.beta = j.value("beta", c.beta);
    c.folds = j.value("folds", c.folds);
    c.inner_fraction = j.value("inner_fraction", c.inner_fraction);
    c.seed = j.value("seed", c.seed);
    c.nested_ptc = j.value("nested_ptc", c.nested_ptc);
    if (!(c.beta > 0)) throw Error(ErrorKind::kParameter, "beta must be positive");
    if (c.calibration == CalibrationMethod::kSigmoidFallback) {
      throw Error(ErrorKind::kParameter, "calibration must be platt or isotonic");
    }
    return c;
  }

 private:
  static nlohmann::json MergePreset(nlohmann::json j, const char* preset) {
    j["preset"] = preset;
    return j;
  }
};

namespace detail {

inline LearnerConfig Seeded(LearnerConfig config, std::uint64_t seed) {
  config.seed = seed;
  return config;
}

inline std::vector<int> Gather(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

// Fits one learner on `train` rows, with `valid` rows for early stopping
// where the family supports it.
inline TreeEnsembleModel FitLearner(const FeatureMatrix& x, std::span<const int> labels,
                                    std::span<const std::size_t> train, std::span<const std::size_t> valid,
                                    const LearnerConfig& config) {
  const FeatureMatrix xt = x.SelectRows(train);
  const std::vector<int> yt = Gather(labels, train);
  switch (config.family) {
    case LearnerFamily::kHistGbdt: {
      if (valid.empty()) return FitGbdtOnMatrix(xt, yt, config);
      const FeatureMatrix xv = x.SelectRows(valid);
      const std::vector<int> yv = Gather(labels, valid);
      return FitGbdtOnMatrix(xt, yt, config, &xv, yv);
    }
    case LearnerFamily::kRandomForest:
      return FitForest(xt, yt, config);
    case LearnerFamily::kLogistic:
      break;
  }
  throw Error(ErrorKind::kUnsupportedModel, "the two-stage pipeline needs a tree learner");
}

// Early stopping on `valid`, then a refit on train + valid capped at the
// chosen iteration count.
inline TreeEnsembleModel FitLearnerAllRows(const FeatureMatrix& x, std::span<const int> labels,
                                           std::span<const std::size_t> train, std::span<const std::size_t> valid,
                                           const LearnerConfig& config) {
  std::vector<std::size_t> all(train.begin(), train.end());
  all.insert(all.end(), valid.begin(), valid.end());
  std::sort(all.begin(), all.end());
  if (config.family != LearnerFamily::kHistGbdt || config.early_stopping_rounds == 0) {
    return FitLearner(x, labels, all, {}, config);
  }
  const TreeEnsembleModel probe = FitLearner(x, labels, train, valid, config);
  LearnerConfig fixed = config;
  fixed.iteration_cap = std::max(1, probe.best_iteration);
  fixed.early_stopping_rounds = 0;
  TreeEnsembleModel model = FitLearner(x, labels, all, {}, fixed);
  model.valid_loss = probe.valid_loss;
  return model;
}

template <typename Fn>
auto WithFold(int fold, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "fold " + std::to_string(fold) + ": " + e.message());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1

struct PtcVector {
  std::vector<double> values;  // outer out-of-fold PTC, one per row
  double stage1_auc = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> fold_of;
  // inner_values[f][i]: PTC for a training row i of fold f from a model
  // fitted without folds f and fold_of[i]; NaN for fold f's own rows. Empty
  // when nesting is off.
  std::vector<std::vector<double>> inner_values;
  std::vector<int> fold_best_iteration;
  std::vector<std::string> fold_models;  // serialised outer stage-1 models

  nlohmann::json ToJson() const {
    return {{"values", values},
            {"stage1_auc", stage1_auc},
            {"fold_of", fold_of},
            {"fold_best_iteration", fold_best_iteration}};
  }
};

// PTC column for fold `fold`'s stage-2 fit: held-out rows take the outer
// OOF values, training rows the nested values when available.
inline std::vector<double> PtcColumnForFold(const PtcVector& ptc, const FoldPlan& plan, int fold) {
  if (ptc.values.size() != plan.rows() || ptc.fold_of != plan.fold_of) {
    for (int f = 0; f < plan.k; ++f) {
      for (std::size_t i = 0; i < plan.rows(); ++i) {
        if (i >= ptc.fold_of.size() || (plan.fold_of[i] == f) != (ptc.fold_of[i] == f)) {
          throw Error(ErrorKind::kPairing, "PTC fold assignment differs from the plan at fold " + std::to_string(f));
        }
      }
    }
    throw Error(ErrorKind::kPairing, "PTC vector does not align with the plan");
  }
  std::vector<double> column = ptc.values;
  if (!ptc.inner_values.empty()) {
    const auto& inner = ptc.inner_values.at(static_cast<std::size_t>(fold));
    for (std::size_t i = 0; i < column.size(); ++i) {
      if (plan.fold_of[i] != fold) column[i] = inner[i];
    }
  }
  return column;
}

inline std::vector<double> PredictRows(const TreeEnsembleModel& model, const FeatureMatrix& x,
                                       std::span<const std::size_t> rows) {
  return PredictProba(model, x.SelectRows(rows));
}

inline PtcVector GenerateOofPtc(const FeatureMatrix& matrix, std::span<const int> tc_labels, const FoldPlan& plan,
                                const LearnerConfig& config, bool nested = true, std::uint64_t seed = 0) {
  if (plan.rows() != matrix.rows() || tc_labels.size() != matrix.rows()) {
    throw Error(ErrorKind::kPairing, "plan, matrix and labels must cover the same rows");
  }
  PtcVector ptc;
  ptc.values.assign(matrix.rows(), std::numeric_limits<double>::quiet_NaN());
  ptc.fold_of = plan.fold_of;
  for (int f = 0; f < plan.k; ++f) {
    detail::WithFold(f, [&] {
      const auto& train = plan.inner_train[static_cast<std::size_t>(f)];
      const auto& valid = plan.inner_valid[static_cast<std::size_t>(f)];
      const FeatureMatrix x = FitFoldScaler(matrix, train).Transform(matrix);
      const TreeEnsembleModel model =
          detail::FitLearner(x, tc_labels, train, valid, detail::Seeded(config, DeriveSeed(seed, 100 + static_cast<std::uint64_t>(f))));
      const auto held = plan.HeldOut(f);
      const auto probs = PredictRows(model, x, held);
      for (std::size_t i = 0; i < held.size(); ++i) ptc.values[held[i]] = probs[i];
      ptc.fold_best_iteration.push_back(model.best_iteration);
      ptc.fold_models.push_back(ModelToJson(model).dump());
      return 0;
    });
  }
  if (nested) {
    ptc.inner_values.assign(static_cast<std::size_t>(plan.k),
                            std::vector<double>(matrix.rows(), std::numeric_limits<double>::quiet_NaN()));
    for (int f = 0; f < plan.k; ++f) {
      for (int g = 0; g < plan.k; ++g) {
        if (g == f) continue;
        detail::WithFold(f, [&] {
          std::vector<std::size_t> portion;
          for (std::size_t i = 0; i < matrix.rows(); ++i) {
            if (plan.fold_of[i] != f && plan.fold_of[i] != g) portion.push_back(i);
          }
          const auto stream = static_cast<std::uint64_t>(f * 64 + g);
          const std::vector<int> portion_labels = detail::Gather(tc_labels, portion);
          const SplitIndices inner = StratifiedSplit(portion_labels, 1.0 - plan.inner_fraction, DeriveSeed(seed, 2000 + stream));
          std::vector<std::size_t> train, valid;
          for (std::size_t i : inner.train) train.push_back(portion[i]);
          for (std::size_t i : inner.test) valid.push_back(portion[i]);
          const FeatureMatrix x = FitFoldScaler(matrix, train).Transform(matrix);
          const TreeEnsembleModel model =
              detail::FitLearner(x, tc_labels, train, valid, detail::Seeded(config, DeriveSeed(seed, 1000 + stream)));
          const auto rows = plan.HeldOut(g);
          const auto probs = PredictRows(model, x, rows);
          for (std::size_t i = 0; i < rows.size(); ++i) ptc.inner_values[static_cast<std::size_t>(f)][rows[i]] = probs[i];
          return 0;
        });
      }
    }
  }
  ptc.stage1_auc = RocAuc(ptc.values, tc_labels);
  return ptc;
}

// ---------------------------------------------------------------------------
// Stage 2

struct FoldResult {
  int fold = 0;
  std::vector<std::size_t> held_out;
  std::vector<int> labels;
  std::vector<double> raw;
  std::vector<double> calibrated;
  double threshold = 0.5;
  int best_iteration = 0;
  std::string model;  // serialised stage-2 model
  Calibrator calibrator;
  MetricBundle metrics;

  MetricBundle Metrics(double beta) const { return EvaluateAt(calibrated, labels, threshold, beta); }
};

struct CvReport {
  std::string name;
  int k = 0;
  double beta = 2.0;
  bool used_ptc = false;
  double stage1_auc = std::numeric_limits<double>::quiet_NaN();
  std::vector<FoldResult> folds;
  MetricBundle pooled;
  double threshold_mean = 0;
  double threshold_sd = 0;
  double mean_fold_fbeta = 0;
  double mean_best_iteration = 0;
  // F-beta-optimal threshold over the pooled calibrated OOF probabilities.
  double global_threshold = 0.5;

  // Pooled OOF view ordered by row index.
  struct Pooled {
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    std::vector<double> probs;
    std::vector<int> fold_ids;
  };

  Pooled pooled_view() const {
    std::vector<std::tuple<std::size_t, int, double, int>> items;
    for (const auto& f : folds) {
      for (std::size_t i = 0; i < f.held_out.size(); ++i) items.emplace_back(f.held_out[i], f.labels[i], f.calibrated[i], f.fold);
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    Pooled p;
    for (const auto& [row, label, prob, fold] : items) {
      p.rows.push_back(row);
      p.labels.push_back(label);
      p.probs.push_back(prob);
      p.fold_ids.push_back(fold);
    }
    return p;
  }

  void Summarize() {
    std::vector<double> thresholds, fbetas, iterations;
    ConfusionCounts total;
    for (const auto& f : folds) {
      thresholds.push_back(f.threshold);
      fbetas.push_back(f.metrics.fbeta);
      iterations.push_back(static_cast<double>(f.best_iteration));
      const auto c = ConfusionAt(f.calibrated, f.labels, f.threshold);
      total.tp += c.tp;
      total.fp += c.fp;
      total.fn += c.fn;
      total.tn += c.tn;
    }
    threshold_mean = Mean(thresholds);
    threshold_sd = SampleSd(thresholds);
    mean_fold_fbeta = Mean(fbetas);
    mean_best_iteration = Mean(iterations);
    const Pooled p = pooled_view();
    pooled = ClassificationBundle(total, beta);
    pooled.roc_auc = RocAuc(p.probs, p.labels);
    pooled.pr_auc = AveragePrecision(p.probs, p.labels);
    pooled.brier = Brier(p.probs, p.labels);
    global_threshold = SelectThreshold(p.probs, p.labels, beta).threshold;
  }

  nlohmann::json ToJson() const {
    nlohmann::json fj = nlohmann::json::array();
    for (const auto& f : folds) {
      fj.push_back({{"fold", f.fold},
                    {"held_out", f.held_out},
                    {"labels", f.labels},
                    {"raw", f.raw},
                    {"calibrated", f.calibrated},
                    {"threshold", f.threshold},
                    {"best_iteration", f.best_iteration},
                    {"calibrator", f.calibrator.ToJson()},
                    {"metrics", f.metrics.ToJson()},
                    {"model", nlohmann::json::parse(f.model)}});
    }
    return {{"format", "wqscreen.cv_report"},
            {"version", 1},
            {"name", name},
            {"k", k},
            {"beta", beta},
            {"used_ptc", used_ptc},
            {"stage1_auc", std::isfinite(stage1_auc) ? nlohmann::json(stage1_auc) : nlohmann::json(nullptr)},
            {"pooled", pooled.ToJson()},
            {"threshold_mean", threshold_mean},
            {"threshold_sd", threshold_sd},
            {"mean_fold_fbeta", mean_fold_fbeta},
            {"mean_best_iteration", mean_best_iteration},
            {"global_threshold", global_threshold},
            {"folds", fj}};
  }

  static CvReport FromJson(const nlohmann::json& j) {
    if (j.value("format", std::string()) != "wqscreen.cv_report") throw Error(ErrorKind::kSchema, "not a CV report");
    CvReport r;
    r.name = j.at("name").get<std::string>();
    r.k = j.at("k").get<int>();
    r.beta = j.at("beta").get<double>();
    r.used_ptc = j.at("used_ptc").get<bool>();
    if (!j.at("stage1_auc").is_null()) r.stage1_auc = j.at("stage1_auc").get<double>();
    for (const auto& fj : j.at("folds")) {
      FoldResult f;
      f.fold = fj.at("fold").get<int>();
      f.held_out = fj.at("held_out").get<std::vector<std::size_t>>();
      f.labels = fj.at("labels").get<std::vector<int>>();
      f.raw = fj.at("raw").get<std::vector<double>>();
      f.calibrated = fj.at("calibrated").get<std::vector<double>>();
      f.threshold = fj.at("threshold").get<double>();
      f.best_iteration = fj.at("best_iteration").get<int>();
      f.calibrator = Calibrator::FromJson(fj.at("calibrator"));
      f.model = fj.at("model").dump();
      f.metrics = f.Metrics(r.beta);
      r.folds.push_back(std::move(f));
    }
    r.Summarize();
    return r;
  }
};

// Cross-validated stage 2. With `ptc` the fold's PTC column is appended
// unscaled after the fold scaler runs.
inline CvReport RunStage2(const FeatureMatrix& matrix, const PtcVector* ptc, std::span<const int> ec_labels,
                          const FoldPlan& plan, const LearnerConfig& config, double beta = 2.0,
                          CalibrationMethod calibration = CalibrationMethod::kIsotonic, std::uint64_t seed = 0,
                          std::string name = "") {
  if (plan.rows() != matrix.rows() || ec_labels.size() != matrix.rows()) {
    throw Error(ErrorKind::kPairing, "plan, matrix and labels must cover the same rows");
  }
  CvReport report;
  report.name = name.empty() ? (ptc ? "with_ptc" : "without_ptc") : std::move(name);
  report.k = plan.k;
  report.beta = beta;
  report.used_ptc = ptc != nullptr;
  if (ptc) report.stage1_auc = ptc->stage1_auc;
  for (int f = 0; f < plan.k; ++f) {
    report.folds.push_back(detail::WithFold(f, [&] {
      const auto& train = plan.inner_train[static_cast<std::size_t>(f)];
      const auto& valid = plan.inner_valid[static_cast<std::size_t>(f)];
      FeatureMatrix x = FitFoldScaler(matrix, train).Transform(matrix);
      if (ptc) x = x.WithColumn({std::string(kPtcColumn), ColumnKind::kAuxiliary}, PtcColumnForFold(*ptc, plan, f));
      const TreeEnsembleModel model =
          detail::FitLearner(x, ec_labels, train, valid, detail::Seeded(config, DeriveSeed(seed, 200 + static_cast<std::uint64_t>(f))));
      const std::vector<double> valid_raw = PredictRows(model, x, valid);
      const std::vector<int> valid_labels = detail::Gather(ec_labels, valid);
      FoldResult r;
      r.fold = f;
      r.calibrator = FitCalibrator(valid_raw, valid_labels, calibration);
      r.threshold = SelectThreshold(r.calibrator.Apply(valid_raw), valid_labels, beta).threshold;
      r.held_out = plan.HeldOut(f);
      r.labels = detail::Gather(ec_labels, r.held_out);
      r.raw = PredictRows(model, x, r.held_out);
      r.calibrated = r.calibrator.Apply(r.raw);
      r.best_iteration = model.best_iteration;
      r.model = ModelToJson(model).dump();
      r.metrics = r.Metrics(beta);
      return r;
    }));
  }
  report.Summarize();
  return report;
}

// ---------------------------------------------------------------------------
// Final model

struct Prediction {
  double probability = 0;
  bool decision = false;
  double ptc = 0;
};

struct PipelineModel {
  std::vector<std::string> feature_names;
  std::optional<EncodingSchema> encoding;
  Scaler scaler;
  TreeEnsembleModel stage1;
  TreeEnsembleModel stage2;
  Calibrator calibrator;
  double t_star = 0.5;
  double beta = 2.0;
  nlohmann::json config;

  nlohmann::json ToJson() const {
    nlohmann::json j = {{"format", "wqscreen.pipeline"},
                        {"version", 1},
                        {"feature_names", feature_names},
                        {"scaler", scaler.ToJson()},
                        {"stage1", ModelToJson(stage1)},
                        {"stage2", ModelToJson(stage2)},
                        {"calibrator", calibrator.ToJson()},
                        {"t_star", t_star},
                        {"beta", beta},
                        {"config", config}};
    if (encoding) j["encoding"] = encoding->ToJson();
    return j;
  }

  static PipelineModel FromJson(const nlohmann::json& j) {
    if (j.value("format", std::string()) != "wqscreen.pipeline") throw Error(ErrorKind::kSchema, "not a pipeline model");
    PipelineModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    if (j.contains("encoding")) m.encoding = EncodingSchema::FromJson(j.at("encoding"));
    m.scaler = Scaler::FromJson(j.at("scaler"));
    m.stage1 = ModelFromJson(j.at("stage1"));
    m.stage2 = ModelFromJson(j.at("stage2"));
    m.calibrator = Calibrator::FromJson(j.at("calibrator"));
    m.t_star = j.at("t_star").get<double>();
    m.beta = j.at("beta").get<double>();
    m.config = j.at("config");
    return m;
  }
};

struct PipelineRun {
  FoldPlan plan;
  PtcVector ptc;
  CvReport cv;
  PipelineModel model;
};

// Cross-validates the two-stage pipeline and refits it on every training
// row. The final calibrator and t* come from the stage-2 OOF scores; the
// stage-2 refit uses the OOF PTC as its PTC column.
inline PipelineRun FinalizePipeline(const FeatureMatrix& matrix, std::span<const int> tc_labels,
                                    std::span<const int> ec_labels, const PipelineConfig& config) {
  if (matrix.empty()) throw Error(ErrorKind::kEmptyInput, "no training rows");
  PipelineRun run;
  run.plan = PlanFolds(ec_labels, config.folds, config.inner_fraction, DeriveSeed(config.seed, 1));
  run.ptc = GenerateOofPtc(matrix, tc_labels, run.plan, config.stage1, config.nested_ptc, DeriveSeed(config.seed, 2));
  run.cv = RunStage2(matrix, &run.ptc, ec_labels, run.plan, config.stage2, config.beta, config.calibration,
                     DeriveSeed(config.seed, 3), "with_ptc");

  PipelineModel& m = run.model;
  for (const auto& c : matrix.columns()) m.feature_names.push_back(c.name);
  m.beta = config.beta;
  m.config = config.ToJson();

  std::vector<double> oof_raw(matrix.rows());
  for (const auto& f : run.cv.folds) {
    for (std::size_t i = 0; i < f.held_out.size(); ++i) oof_raw[f.held_out[i]] = f.raw[i];
  }
  m.calibrator = FitCalibrator(oof_raw, ec_labels, config.calibration);
  m.t_star = SelectThreshold(m.calibrator.Apply(oof_raw), ec_labels, config.beta).threshold;

  std::vector<std::size_t> all(matrix.rows());
  std::iota(all.begin(), all.end(), 0);
  m.scaler = FitFoldScaler(matrix, all);
  const FeatureMatrix x = m.scaler.Transform(matrix);

  const std::uint64_t final_seed = DeriveSeed(config.seed, 4);
  const SplitIndices tc_inner = StratifiedSplit(tc_labels, 1.0 - config.inner_fraction, DeriveSeed(final_seed, 1));
  m.stage1 = detail::FitLearnerAllRows(x, tc_labels, tc_inner.train, tc_inner.test,
                                       detail::Seeded(config.stage1, DeriveSeed(final_seed, 2)));
  const FeatureMatrix x2 = x.WithColumn({std::string(kPtcColumn), ColumnKind::kAuxiliary}, run.ptc.values);
  const SplitIndices ec_inner = StratifiedSplit(ec_labels, 1.0 - config.inner_fraction, DeriveSeed(final_seed, 3));
  m.stage2 = detail::FitLearnerAllRows(x2, ec_labels, ec_inner.train, ec_inner.test,
                                       detail::Seeded(config.stage2, DeriveSeed(final_seed, 4)));
  return run;
}

// Scaled rows with the stage-1 PTC column appended: the stage-2 inputs.
inline FeatureMatrix Stage2Inputs(const PipelineModel& model, const FeatureMatrix& rows) {
  CheckColumns(model.feature_names, rows);
  const FeatureMatrix x = model.scaler.Transform(rows);
  return x.WithColumn({std::string(kPtcColumn), ColumnKind::kAuxiliary}, PredictProba(model.stage1, x));
}

inline std::vector<Prediction> Predict(const PipelineModel& model, const FeatureMatrix& rows) {
  const FeatureMatrix x2 = Stage2Inputs(model, rows);
  const std::vector<double> raw = PredictProba(model.stage2, x2);
  const std::size_t ptc_col = x2.cols() - 1;
  std::vector<Prediction> out(rows.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].ptc = x2.value(i, ptc_col);
    out[i].probability = model.calibrator.Apply(raw[i]);
    out[i].decision = out[i].probability >= model.t_star;
  }
  return out;
}

}  // namespace wqscreen
