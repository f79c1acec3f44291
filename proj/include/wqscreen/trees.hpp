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

// Tree learners: histogram gradient boosting on the binary logistic loss
// (leaf-wise or depth-wise growth, early stopping, learned default
// directions for missing values), bagged random forests, and an
// L2-penalised logistic regression baseline fitted by IRLS.

#pragma once

#include <Eigen/Dense>

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
#include "wqscreen/common.hpp"
#include "wqscreen/features.hpp"

namespace wqscreen {

enum class LearnerFamily { kHistGbdt, kRandomForest, kLogistic };
enum class TreeGrowth { kLeafwise, kDepthwise };

inline std::string_view LearnerFamilyName(LearnerFamily f) {
  switch (f) {
    case LearnerFamily::kHistGbdt: return "hist_gbdt";
    case LearnerFamily::kRandomForest: return "random_forest";
    case LearnerFamily::kLogistic: return "logistic";
  }
  return "unknown";
}

inline LearnerFamily ParseLearnerFamily(std::string_view name) {
  if (name == "hist_gbdt") return LearnerFamily::kHistGbdt;
  if (name == "random_forest") return LearnerFamily::kRandomForest;
  if (name == "logistic") return LearnerFamily::kLogistic;
  throw Error(ErrorKind::kParameter, "unknown learner family '" + std::string(name) + "'");
}

struct LearnerConfig {
  LearnerFamily family = LearnerFamily::kHistGbdt;
  TreeGrowth growth = TreeGrowth::kLeafwise;
  int max_depth = 6;  // <= 0 means unlimited
  int leaf_limit = 31;
  int min_samples_per_leaf = 20;
  double row_subsample = 0.8;
  double column_subsample = 0.8;
  bool bootstrap = true;  // forests only
  double l2_regularization = 1.0;
  double learning_rate = 0.05;
  int iteration_cap = 2000;
  int early_stopping_rounds = 50;
  std::optional<double> positive_class_weight;  // nullopt = "auto"
  int max_bins = 256;
  std::uint64_t seed = 0;

  // Leaf-wise (best-first) histogram boosting.
  static LearnerConfig Leafwise() { return {}; }

  // Depth-wise (level-order) histogram boosting.
  static LearnerConfig Depthwise() {
    LearnerConfig c;
    c.growth = TreeGrowth::kDepthwise;
    c.max_depth = 4;
    c.leaf_limit = 16;
    return c;
  }

  static LearnerConfig Forest() {
    LearnerConfig c;
    c.family = LearnerFamily::kRandomForest;
    c.growth = TreeGrowth::kDepthwise;
    c.max_depth = 0;
    c.leaf_limit = std::numeric_limits<int>::max();
    c.min_samples_per_leaf = 1;
    c.row_subsample = 1.0;
    c.column_subsample = 0.5;
    c.iteration_cap = 300;
    c.early_stopping_rounds = 0;
    return c;
  }

  static LearnerConfig Logistic() {
    LearnerConfig c;
    c.family = LearnerFamily::kLogistic;
    c.early_stopping_rounds = 0;
    return c;
  }

  void Validate() const {
    if (iteration_cap < 1) throw Error(ErrorKind::kParameter, "iteration_cap must be >= 1");
    if (leaf_limit < 2) throw Error(ErrorKind::kParameter, "leaf_limit must be >= 2");
    if (max_bins < 2 || max_bins > 256) throw Error(ErrorKind::kParameter, "max_bins must lie in [2, 256]");
    if (min_samples_per_leaf < 1) throw Error(ErrorKind::kParameter, "min_samples_per_leaf must be >= 1");
    if (!(row_subsample > 0 && row_subsample <= 1)) throw Error(ErrorKind::kParameter, "row_subsample must lie in (0, 1]");
    if (!(column_subsample > 0 && column_subsample <= 1)) {
      throw Error(ErrorKind::kParameter, "column_subsample must lie in (0, 1]");
    }
    if (!(l2_regularization >= 0)) throw Error(ErrorKind::kParameter, "l2_regularization must be >= 0");
    if (!(learning_rate > 0)) throw Error(ErrorKind::kParameter, "learning_rate must be positive");
    if (early_stopping_rounds < 0) throw Error(ErrorKind::kParameter, "early_stopping_rounds must be >= 0");
    if (positive_class_weight && !(*positive_class_weight > 0)) {
      throw Error(ErrorKind::kParameter, "positive_class_weight must be positive");
    }
  }

  nlohmann::json ToJson() const {
    nlohmann::json j = {{"family", LearnerFamilyName(family)},
                        {"growth", growth == TreeGrowth::kLeafwise ? "leafwise" : "depthwise"},
                        {"max_depth", max_depth},
                        {"leaf_limit", leaf_limit},
                        {"min_samples_per_leaf", min_samples_per_leaf},
                        {"row_subsample", row_subsample},
                        {"column_subsample", column_subsample},
                        {"bootstrap", bootstrap},
                        {"l2_regularization", l2_regularization},
                        {"learning_rate", learning_rate},
                        {"iteration_cap", iteration_cap},
                        {"early_stopping_rounds", early_stopping_rounds},
                        {"max_bins", max_bins},
                        {"seed", seed}};
    if (positive_class_weight) {
      j["positive_class_weight"] = *positive_class_weight;
    } else {
      j["positive_class_weight"] = "auto";
    }
    return j;
  }

  // Starts from the named preset ("leafwise", "depthwise", "forest",
  // "logistic"; default leafwise) and overrides any listed field.
  static LearnerConfig FromJson(const nlohmann::json& j) {
    LearnerConfig c;
    const std::string preset = j.value("preset", std::string("leafwise"));
    if (preset == "leafwise") {
      c = Leafwise();
    } else if (preset == "depthwise") {
      c = Depthwise();
    } else if (preset == "forest") {
      c = Forest();
    } else if (preset == "logistic") {
      c = Logistic();
    } else {
      throw Error(ErrorKind::kParameter, "unknown learner preset '" + preset + "'");
    }
    if (j.contains("family")) c.family = ParseLearnerFamily(j.at("family").get<std::string>());
    if (j.contains("growth")) {
      const auto g = j.at("growth").get<std::string>();
      if (g != "leafwise" && g != "depthwise") throw Error(ErrorKind::kParameter, "unknown growth '" + g + "'");
      c.growth = g == "leafwise" ? TreeGrowth::kLeafwise : TreeGrowth::kDepthwise;
    }
    c.max_depth = j.value("max_depth", c.max_depth);
    c.leaf_limit = j.value("leaf_limit", c.leaf_limit);
    c.min_samples_per_leaf = j.value("min_samples_per_leaf", c.min_samples_per_leaf);
    c.row_subsample = j.value("row_subsample", c.row_subsample);
    c.column_subsample = j.value("column_subsample", c.column_subsample);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.l2_regularization = j.value("l2_regularization", c.l2_regularization);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.iteration_cap = j.value("iteration_cap", c.iteration_cap);
    c.early_stopping_rounds = j.value("early_stopping_rounds", c.early_stopping_rounds);
    c.max_bins = j.value("max_bins", c.max_bins);
    c.seed = j.value("seed", c.seed);
    if (j.contains("positive_class_weight")) {
      const auto& w = j.at("positive_class_weight");
      if (w.is_string()) {
        if (w.get<std::string>() != "auto") throw Error(ErrorKind::kParameter, "positive_class_weight must be a number or \"auto\"");
        c.positive_class_weight.reset();
      } else {
        c.positive_class_weight = w.get<double>();
      }
    }
    c.Validate();
    return c;
  }
};

// Resolves the configured positive-class weight against the fitting labels.
inline double ResolvePositiveWeight(const LearnerConfig& config, std::span<const int> labels) {
  if (config.positive_class_weight) return *config.positive_class_weight;
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::kFit, "both classes must be present");
  return neg / pos;
}

// ---------------------------------------------------------------------------
// Binning

// Per-column quantised view of a FeatureMatrix. For a non-missing cell with
// value v the bin is the first b with v <= edges[b] (clamped to the last
// value bin); missing cells take missing_bin (== edges.size()).
struct BinnedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bins;  // row-major
  std::vector<std::vector<double>> edges;

  std::uint8_t bin(std::size_t r, std::size_t c) const { return bins[r * cols + c]; }
  std::size_t missing_bin(std::size_t c) const { return edges[c].size(); }
  std::size_t value_bins(std::size_t c) const { return edges[c].size(); }
};

namespace detail {

// Upper edges for one column: at most max_value_bins quantile groups of the
// sorted distinct values, each edge the midpoint to the next distinct value
// and the last edge the column maximum.
inline std::vector<double> QuantileEdges(std::vector<double> values, std::size_t max_value_bins) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  std::vector<double> distinct;
  std::vector<std::size_t> cum;  // number of values <= distinct[i]
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (distinct.empty() || values[i] != distinct.back()) {
      distinct.push_back(values[i]);
      cum.push_back(0);
    }
    cum.back() = i + 1;
  }
  std::vector<double> edges;
  if (distinct.size() <= max_value_bins) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) edges.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2);
    edges.push_back(distinct.back());
    return edges;
  }
  const double n = static_cast<double>(values.size());
  std::vector<std::size_t> cut_after;  // distinct index closing each bin
  std::size_t j = 0;
  for (std::size_t b = 1; b < max_value_bins; ++b) {
    const double target = n * static_cast<double>(b) / static_cast<double>(max_value_bins);
    while (j + 1 < distinct.size() && static_cast<double>(cum[j]) < target) ++j;
    if (j + 1 >= distinct.size()) break;
    if (cut_after.empty() || cut_after.back() != j) cut_after.push_back(j);
  }
  for (std::size_t idx : cut_after) edges.push_back(distinct[idx] + (distinct[idx + 1] - distinct[idx]) / 2);
  edges.push_back(distinct.back());
  return edges;
}

inline std::uint8_t BinOf(const std::vector<double>& edges, double v) {
  auto it = std::lower_bound(edges.begin(), edges.end(), v);
  std::size_t b = static_cast<std::size_t>(it - edges.begin());
  if (b >= edges.size()) b = edges.size() - 1;
  return static_cast<std::uint8_t>(b);
}

}  // namespace detail

// Quantises `matrix` with the given per-column edges (typically learned on a
// training subset).
inline BinnedMatrix ApplyBins(const FeatureMatrix& matrix, const std::vector<std::vector<double>>& edges) {
  if (edges.size() != matrix.cols()) {
    throw Error(ErrorKind::kSchema, "bin edges cover " + std::to_string(edges.size()) + " columns, matrix has " +
                                        std::to_string(matrix.cols()));
  }
  BinnedMatrix out;
  out.rows = matrix.rows();
  out.cols = matrix.cols();
  out.edges = edges;
  out.bins.resize(out.rows * out.cols);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      if (matrix.missing(r, c) || edges[c].empty()) {
        out.bins[r * out.cols + c] = static_cast<std::uint8_t>(edges[c].size());
      } else {
        out.bins[r * out.cols + c] = detail::BinOf(edges[c], matrix.value(r, c));
      }
    }
  }
  return out;
}

// Learns quantile edges over the non-missing values of every column.
inline BinnedMatrix BinFeatures(const FeatureMatrix& matrix, int max_bins = 256) {
  if (max_bins < 2 || max_bins > 256) throw Error(ErrorKind::kParameter, "max_bins must lie in [2, 256]");
  if (matrix.empty()) throw Error(ErrorKind::kEmptyInput, "cannot bin an empty matrix");
  std::vector<std::vector<double>> edges(matrix.cols());
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    std::vector<double> values;
    values.reserve(matrix.rows());
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
      if (!matrix.missing(r, c)) values.push_back(matrix.value(r, c));
    }
    edges[c] = detail::QuantileEdges(std::move(values), static_cast<std::size_t>(max_bins - 1));
  }
  return ApplyBins(matrix, edges);
}

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  int threshold_bin = 0;
  // Raw-value form of the split: non-missing values <= threshold go left.
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;
  // Number of training rows (bootstrap multiplicity included) reaching the node.
  double cover = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;

  int LeafFor(std::span<const double> values, std::span<const std::uint8_t> missing) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      const auto f = static_cast<std::size_t>(n.feature);
      const bool go_left = missing[f] ? n.default_left : values[f] <= n.threshold;
      i = go_left ? n.left : n.right;
    }
    return i;
  }

  int LeafForBinned(const BinnedMatrix& binned, std::size_t row) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      const auto f = static_cast<std::size_t>(n.feature);
      const std::size_t b = binned.bin(row, f);
      const bool go_left = b == binned.missing_bin(f) ? n.default_left : static_cast<int>(b) <= n.threshold_bin;
      i = go_left ? n.left : n.right;
    }
    return i;
  }

  double Predict(std::span<const double> values, std::span<const std::uint8_t> missing) const {
    return nodes[static_cast<std::size_t>(LeafFor(values, missing))].value;
  }

  int depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].is_leaf()) continue;
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
      best = std::max(best, d[i] + 1);
    }
    return best;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }
};

// A boosted or bagged ensemble. The margin of a row is
// base_score + tree_scale * sum of tree outputs; boosted models map it
// through the sigmoid, forests report it directly as a probability.
struct TreeEnsembleModel {
  LearnerFamily family = LearnerFamily::kHistGbdt;
  std::vector<Tree> trees;
  double base_score = 0.0;
  double tree_scale = 1.0;
  int best_iteration = 0;
  double positive_weight = 1.0;
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> bin_edges;
  nlohmann::json config_echo;
  // Per-iteration weighted mean log-loss on the fitting rows and (when
  // early stopping was used) the validation rows. Not serialised.
  std::vector<double> train_loss;
  std::vector<double> valid_loss;

  bool has_cover() const {
    for (const auto& t : trees) {
      for (const auto& n : t.nodes) {
        if (!(n.cover > 0)) return false;
      }
    }
    return true;
  }

  double Margin(std::span<const double> values, std::span<const std::uint8_t> missing) const {
    double sum = 0.0;
    const std::size_t used = std::min<std::size_t>(trees.size(), static_cast<std::size_t>(best_iteration));
    for (std::size_t t = 0; t < used; ++t) sum += trees[t].Predict(values, missing);
    return base_score + tree_scale * sum;
  }

  double Probability(std::span<const double> values, std::span<const std::uint8_t> missing) const {
    const double m = Margin(values, missing);
    if (family == LearnerFamily::kHistGbdt) return Sigmoid(m);
    return std::clamp(m, 0.0, 1.0);
  }
};

inline void CheckColumns(const std::vector<std::string>& expected, const FeatureMatrix& rows) {
  if (rows.cols() != expected.size()) {
    throw Error(ErrorKind::kSchema, "model expects " + std::to_string(expected.size()) + " columns, rows have " +
                                        std::to_string(rows.cols()));
  }
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (rows.column(c).name != expected[c]) {
      throw Error(ErrorKind::kSchema, "column " + std::to_string(c) + " is '" + rows.column(c).name +
                                          "', model expects '" + expected[c] + "'");
    }
  }
}

inline std::vector<double> PredictMargin(const TreeEnsembleModel& model, const FeatureMatrix& rows) {
  CheckColumns(model.feature_names, rows);
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = model.Margin(rows.row_values(r), rows.row_missing(r));
  return out;
}

inline std::vector<double> PredictProba(const TreeEnsembleModel& model, const FeatureMatrix& rows) {
  CheckColumns(model.feature_names, rows);
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = model.Probability(rows.row_values(r), rows.row_missing(r));
  return out;
}

// ---------------------------------------------------------------------------
// Split search

enum class SplitCriterion { kNewton, kGini };

// Per-bin sufficient statistics. For boosting g/h are gradient and hessian
// sums; for forests g is the weighted positive mass and h the total weight.
struct BinStats {
  double g = 0.0;
  double h = 0.0;
  double count = 0.0;

  BinStats& operator+=(const BinStats& o) {
    g += o.g;
    h += o.h;
    count += o.count;
    return *this;
  }
  friend BinStats operator+(BinStats a, const BinStats& b) { return a += b; }
  friend BinStats operator-(BinStats a, const BinStats& b) {
    a.g -= b.g;
    a.h -= b.h;
    a.count -= b.count;
    return a;
  }
};

// Node score whose decrease (or increase, for Newton) a split is judged by.
inline double NodeScore(SplitCriterion criterion, const BinStats& s, double l2) {
  if (criterion == SplitCriterion::kNewton) return s.g * s.g / (s.h + l2);
  if (!(s.h > 0)) return 0.0;
  return s.g * (s.h - s.g) / s.h;  // weighted Gini impurity (up to a factor 2)
}

inline double SplitGain(SplitCriterion criterion, const BinStats& left, const BinStats& right, double l2) {
  const BinStats parent = left + right;
  if (criterion == SplitCriterion::kNewton) {
    return NodeScore(criterion, left, l2) + NodeScore(criterion, right, l2) - NodeScore(criterion, parent, l2);
  }
  return NodeScore(criterion, parent, l2) - NodeScore(criterion, left, l2) - NodeScore(criterion, right, l2);
}

struct SplitCandidate {
  int feature = -1;
  int threshold_bin = 0;
  bool default_left = true;
  double gain = 0.0;
  BinStats left;
  BinStats right;

  bool valid() const { return feature >= 0; }
};

struct SplitParams {
  SplitCriterion criterion = SplitCriterion::kNewton;
  double l2 = 1.0;
  double min_samples_per_leaf = 1.0;
  double min_gain = 1e-12;
};

// Builds the per-feature histograms for `rows` and returns the best split
// over `features`. Missing values are tried on both sides; when the node has
// no missing rows the default direction is the larger child.
inline SplitCandidate FindBestSplit(const BinnedMatrix& binned, std::span<const double> g, std::span<const double> h,
                                    std::span<const double> count, std::span<const std::size_t> rows,
                                    std::span<const std::size_t> features, const SplitParams& params) {
  SplitCandidate best;
  std::vector<BinStats> hist;
  for (std::size_t f : features) {
    const std::size_t nb = binned.value_bins(f);
    if (nb == 0) continue;
    hist.assign(nb + 1, BinStats{});
    for (std::size_t r : rows) {
      auto& cell = hist[binned.bin(r, f)];
      cell.g += g[r];
      cell.h += h[r];
      cell.count += count[r];
    }
    const BinStats miss = hist[nb];
    BinStats total = miss;
    for (std::size_t b = 0; b < nb; ++b) total += hist[b];
    BinStats left_values;
    for (std::size_t t = 0; t < nb; ++t) {
      left_values += hist[t];
      const BinStats right_values = total - miss - left_values;
      for (int dir = 0; dir < 2; ++dir) {
        const bool missing_left = dir == 0;
        if (!missing_left && miss.count == 0) continue;
        const BinStats left = missing_left ? left_values + miss : left_values;
        const BinStats right = missing_left ? right_values : right_values + miss;
        if (left.count < params.min_samples_per_leaf || right.count < params.min_samples_per_leaf) continue;
        if (left.count <= 0 || right.count <= 0) continue;
        const double gain = SplitGain(params.criterion, left, right, params.l2);
        if (gain > params.min_gain && gain > best.gain) {
          best.feature = static_cast<int>(f);
          best.threshold_bin = static_cast<int>(t);
          best.default_left = miss.count > 0 ? missing_left : left.count >= right.count;
          best.gain = gain;
          best.left = left;
          best.right = right;
        }
      }
    }
  }
  return best;
}

namespace detail {

struct GrowParams {
  SplitParams split;
  TreeGrowth growth = TreeGrowth::kLeafwise;
  int max_depth = 6;
  int leaf_limit = 31;
  double leaf_scale = 1.0;  // learning rate for boosting
  double column_fraction_per_node = 1.0;
};

inline double LeafValue(SplitCriterion criterion, const BinStats& s, double l2, double scale) {
  if (criterion == SplitCriterion::kNewton) return -s.g / (s.h + l2) * scale;
  return s.h > 0 ? s.g / s.h : 0.0;
}

inline std::vector<std::size_t> SampleFeatures(std::span<const std::size_t> pool, double fraction, Rng& rng) {
  if (fraction >= 1.0) return {pool.begin(), pool.end()};
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
  k = std::clamp<std::size_t>(k, 1, pool.size());
  std::vector<std::size_t> shuffled(pool.begin(), pool.end());
  rng.Shuffle(shuffled);
  shuffled.resize(k);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

// Grows one tree on the rows in `rows`. The returned tree carries bin
// thresholds, raw thresholds (from the bin edges) and covers.
inline Tree GrowTree(const BinnedMatrix& binned, std::span<const double> g, std::span<const double> h,
                     std::span<const double> count, std::vector<std::size_t> rows,
                     std::span<const std::size_t> features, const GrowParams& params, Rng& rng) {
  struct Pending {
    int node;
    int depth;
    std::vector<std::size_t> rows;
    SplitCandidate split;
  };
  Tree tree;
  auto stats_of = [&](const std::vector<std::size_t>& rs) {
    BinStats s;
    for (std::size_t r : rs) {
      s.g += g[r];
      s.h += h[r];
      s.count += count[r];
    }
    return s;
  };
  auto make_leaf = [&](const BinStats& s) {
    TreeNode n;
    n.value = LeafValue(params.split.criterion, s, params.split.l2, params.leaf_scale);
    n.cover = s.count;
    tree.nodes.push_back(n);
    return static_cast<int>(tree.nodes.size() - 1);
  };
  auto evaluate = [&](Pending& p) {
    const bool depth_ok = params.max_depth <= 0 || p.depth < params.max_depth;
    if (!depth_ok) return;
    const auto feats = SampleFeatures(features, params.column_fraction_per_node, rng);
    p.split = FindBestSplit(binned, g, h, count, p.rows, feats, params.split);
  };

  const BinStats root_stats = stats_of(rows);
  Pending root{make_leaf(root_stats), 0, std::move(rows), {}};
  evaluate(root);

  std::size_t leaves = 1;
  auto apply = [&](Pending& p, std::vector<Pending>& out_children) {
    const auto& s = p.split;
    const auto f = static_cast<std::size_t>(s.feature);
    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : p.rows) {
      const std::size_t b = binned.bin(r, f);
      const bool go_left = b == binned.missing_bin(f) ? s.default_left : static_cast<int>(b) <= s.threshold_bin;
      (go_left ? left_rows : right_rows).push_back(r);
    }
    const int left = make_leaf(s.left);
    const int right = make_leaf(s.right);
    auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.feature = s.feature;
    node.threshold_bin = s.threshold_bin;
    const auto tb = static_cast<std::size_t>(s.threshold_bin);
    node.threshold = tb + 1 < binned.value_bins(f) ? binned.edges[f][tb] : std::numeric_limits<double>::infinity();
    node.default_left = s.default_left;
    node.left = left;
    node.right = right;
    node.value = 0.0;
    ++leaves;
    out_children.push_back({left, p.depth + 1, std::move(left_rows), {}});
    out_children.push_back({right, p.depth + 1, std::move(right_rows), {}});
  };

  const auto limit = static_cast<std::size_t>(params.leaf_limit);
  if (params.growth == TreeGrowth::kLeafwise) {
    std::vector<Pending> open;
    open.push_back(std::move(root));
    while (leaves < limit) {
      // Highest gain first; equal gains go to the earlier-created node.
      std::size_t pick = open.size();
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (!open[i].split.valid()) continue;
        if (pick == open.size() || open[i].split.gain > open[pick].split.gain) pick = i;
      }
      if (pick == open.size()) break;
      Pending p = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      std::vector<Pending> children;
      apply(p, children);
      for (auto& c : children) {
        evaluate(c);
        open.push_back(std::move(c));
      }
    }
  } else {
    std::vector<Pending> level;
    level.push_back(std::move(root));
    while (!level.empty() && leaves < limit) {
      std::vector<Pending> next;
      for (auto& p : level) {
        if (leaves >= limit) break;
        if (!p.split.valid()) continue;
        std::vector<Pending> children;
        apply(p, children);
        for (auto& c : children) next.push_back(std::move(c));
      }
      for (auto& c : next) evaluate(c);
      level = std::move(next);
    }
  }
  return tree;
}

inline double WeightedLogLoss(std::span<const double> margins, std::span<const int> labels, double pos_weight) {
  double loss = 0.0, weight = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double w = labels[i] == 1 ? pos_weight : 1.0;
    const double m = margins[i];
    // log(1 + exp(-m)) for positives, log(1 + exp(m)) for negatives.
    const double z = labels[i] == 1 ? -m : m;
    loss += w * (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)));
    weight += w;
  }
  return loss / weight;
}

inline void CheckBinaryLabels(std::span<const int> labels, std::size_t rows) {
  if (labels.size() != rows) {
    throw Error(ErrorKind::kParameter, "label count " + std::to_string(labels.size()) + " does not match " +
                                           std::to_string(rows) + " rows");
  }
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorKind::kParameter, "labels must be 0 or 1");
    (y == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw Error(ErrorKind::kFit, "both classes must be present in the fitting labels");
}

}  // namespace detail

struct ValidationSet {
  const BinnedMatrix* binned = nullptr;
  std::span<const int> labels;
};

// Gradient boosting on the weighted binary logistic loss over a binned
// matrix. With early stopping the ensemble is truncated to the iteration
// with the lowest validation loss.
inline TreeEnsembleModel FitGbdt(const BinnedMatrix& binned, std::span<const int> labels, const LearnerConfig& config,
                                 std::optional<ValidationSet> valid = std::nullopt,
                                 std::vector<std::string> feature_names = {}) {
  config.Validate();
  detail::CheckBinaryLabels(labels, binned.rows);
  if (config.early_stopping_rounds > 0 && (!valid || valid->binned == nullptr)) {
    throw Error(ErrorKind::kParameter, "early stopping requires a validation set");
  }
  if (valid && valid->binned != nullptr) {
    if (valid->labels.size() != valid->binned->rows) {
      throw Error(ErrorKind::kParameter, "validation labels do not match validation rows");
    }
    if (valid->binned->edges != binned.edges) {
      throw Error(ErrorKind::kSchema, "validation rows must be binned with the training edges");
    }
  }
  const std::size_t n = binned.rows;
  const double pos_weight = ResolvePositiveWeight(config, labels);

  TreeEnsembleModel model;
  model.family = LearnerFamily::kHistGbdt;
  model.positive_weight = pos_weight;
  model.bin_edges = binned.edges;
  model.config_echo = config.ToJson();
  model.feature_names = std::move(feature_names);
  if (model.feature_names.empty()) {
    for (std::size_t c = 0; c < binned.cols; ++c) model.feature_names.push_back("f" + std::to_string(c));
  }

  std::vector<double> w(n);
  double pos_mass = 0.0, neg_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = labels[i] == 1 ? pos_weight : 1.0;
    (labels[i] == 1 ? pos_mass : neg_mass) += w[i];
  }
  model.base_score = std::log(pos_mass / neg_mass);

  std::vector<double> margin(n, model.base_score), g(n), h(n), count(n, 1.0);
  const bool track_valid = valid && valid->binned != nullptr;
  std::vector<double> valid_margin(track_valid ? valid->binned->rows : 0, model.base_score);

  detail::GrowParams params;
  params.split.criterion = SplitCriterion::kNewton;
  params.split.l2 = config.l2_regularization;
  params.split.min_samples_per_leaf = config.min_samples_per_leaf;
  params.growth = config.growth;
  params.max_depth = config.max_depth;
  params.leaf_limit = config.leaf_limit;
  params.leaf_scale = config.learning_rate;

  std::vector<std::size_t> all_features(binned.cols);
  std::iota(all_features.begin(), all_features.end(), 0);
  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  Rng rng(config.seed);

  double best_valid = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  int since_best = 0;
  for (int iter = 1; iter <= config.iteration_cap; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = Sigmoid(margin[i]);
      g[i] = w[i] * (p - labels[i]);
      h[i] = w[i] * p * (1.0 - p);
    }
    std::vector<std::size_t> rows = all_rows;
    if (config.row_subsample < 1.0) {
      rng.Shuffle(rows);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(config.row_subsample * static_cast<double>(n))));
      rows.resize(keep);
      std::sort(rows.begin(), rows.end());
    }
    const auto features = detail::SampleFeatures(all_features, config.column_subsample, rng);
    Tree tree = detail::GrowTree(binned, g, h, count, std::move(rows), features, params, rng);
    for (std::size_t i = 0; i < n; ++i) margin[i] += tree.nodes[static_cast<std::size_t>(tree.LeafForBinned(binned, i))].value;
    model.train_loss.push_back(detail::WeightedLogLoss(margin, labels, pos_weight));
    if (track_valid) {
      for (std::size_t i = 0; i < valid_margin.size(); ++i) {
        valid_margin[i] += tree.nodes[static_cast<std::size_t>(tree.LeafForBinned(*valid->binned, i))].value;
      }
      const double loss = detail::WeightedLogLoss(valid_margin, valid->labels, pos_weight);
      model.valid_loss.push_back(loss);
      if (config.early_stopping_rounds == 0) {
        best_iter = iter;
      } else if (loss < best_valid) {
        best_valid = loss;
        best_iter = iter;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      best_iter = iter;
    }
    model.trees.push_back(std::move(tree));
    if (config.early_stopping_rounds > 0 && since_best >= config.early_stopping_rounds) break;
  }
  model.best_iteration = best_iter;
  model.trees.resize(static_cast<std::size_t>(best_iter));
  return model;
}

// Bagged classification trees split on weighted Gini impurity. Leaves hold
// the weighted positive fraction; the forest averages them.
inline TreeEnsembleModel FitForest(const FeatureMatrix& matrix, std::span<const int> labels,
                                   const LearnerConfig& config) {
  config.Validate();
  if (matrix.empty()) throw Error(ErrorKind::kEmptyInput, "cannot fit a forest on an empty matrix");
  detail::CheckBinaryLabels(labels, matrix.rows());
  const BinnedMatrix binned = BinFeatures(matrix, config.max_bins);
  const std::size_t n = binned.rows;
  const double pos_weight = ResolvePositiveWeight(config, labels);

  TreeEnsembleModel model;
  model.family = LearnerFamily::kRandomForest;
  model.positive_weight = pos_weight;
  model.bin_edges = binned.edges;
  model.config_echo = config.ToJson();
  for (const auto& c : matrix.columns()) model.feature_names.push_back(c.name);

  detail::GrowParams params;
  params.split.criterion = SplitCriterion::kGini;
  params.split.l2 = 0.0;
  params.split.min_samples_per_leaf = config.min_samples_per_leaf;
  params.growth = TreeGrowth::kDepthwise;
  params.max_depth = config.max_depth;
  params.leaf_limit = config.leaf_limit;
  params.column_fraction_per_node = config.column_subsample;

  std::vector<std::size_t> all_features(binned.cols);
  std::iota(all_features.begin(), all_features.end(), 0);
  Rng rng(config.seed);
  std::vector<double> g(n), h(n), count(n);
  for (int t = 0; t < config.iteration_cap; ++t) {
    std::fill(count.begin(), count.end(), 0.0);
    const auto draws = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.row_subsample * static_cast<double>(n))));
    if (config.bootstrap) {
      for (std::size_t d = 0; d < draws; ++d) count[rng.Below(n)] += 1.0;
    } else {
      std::vector<std::size_t> rows(n);
      std::iota(rows.begin(), rows.end(), 0);
      if (draws < n) rng.Shuffle(rows);
      for (std::size_t d = 0; d < draws; ++d) count[rows[d]] = 1.0;
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = labels[i] == 1 ? pos_weight : 1.0;
      h[i] = w * count[i];
      g[i] = labels[i] == 1 ? h[i] : 0.0;
      if (count[i] > 0) rows.push_back(i);
    }
    model.trees.push_back(detail::GrowTree(binned, g, h, count, std::move(rows), all_features, params, rng));
  }
  model.best_iteration = static_cast<int>(model.trees.size());
  model.tree_scale = 1.0 / static_cast<double>(model.trees.size());
  return model;
}

// Convenience entry for boosted models on an unbinned matrix: learns bin
// edges from `train`, bins `valid` with them, and fits.
inline TreeEnsembleModel FitGbdtOnMatrix(const FeatureMatrix& train, std::span<const int> train_labels,
                                         const LearnerConfig& config, const FeatureMatrix* valid = nullptr,
                                         std::span<const int> valid_labels = {}) {
  const BinnedMatrix binned = BinFeatures(train, config.max_bins);
  std::vector<std::string> names;
  for (const auto& c : train.columns()) names.push_back(c.name);
  if (valid != nullptr) {
    CheckColumns(names, *valid);
    const BinnedMatrix valid_binned = ApplyBins(*valid, binned.edges);
    return FitGbdt(binned, train_labels, config, ValidationSet{&valid_binned, valid_labels}, names);
  }
  LearnerConfig no_es = config;
  no_es.early_stopping_rounds = 0;
  return FitGbdt(binned, train_labels, no_es, std::nullopt, names);
}

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticModel {
  std::vector<double> weights;
  double intercept = 0.0;
  double l2_regularization = 0.0;
  std::vector<std::string> feature_names;
  int iterations = 0;

  double Margin(std::span<const double> values) const {
    double m = intercept;
    for (std::size_t j = 0; j < weights.size(); ++j) m += weights[j] * values[j];
    return m;
  }
};

// Maximises the L2-penalised log-likelihood (intercept unpenalised) by
// iteratively reweighted least squares. Converged when the largest
// coefficient change is below 1e-8; 100 iterations without convergence, a
// singular system or non-finite coefficients raise a divergence error.
inline LogisticModel FitLogistic(const FeatureMatrix& matrix, std::span<const int> labels, double l2) {
  if (!(l2 >= 0)) throw Error(ErrorKind::kParameter, "l2 must be non-negative");
  detail::CheckBinaryLabels(labels, matrix.rows());
  for (std::uint8_t m : matrix.missing_mask()) {
    if (m) throw Error(ErrorKind::kParameter, "logistic regression needs complete rows; impute or drop missing cells");
  }
  const auto n = static_cast<Eigen::Index>(matrix.rows());
  const auto p = static_cast<Eigen::Index>(matrix.cols());
  Eigen::MatrixXd x(n, p + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) x(i, j + 1) = matrix.value(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    y(i) = labels[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p + 1, l2);
  penalty(0) = 0.0;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  LogisticModel model;
  model.l2_regularization = l2;
  for (const auto& c : matrix.columns()) model.feature_names.push_back(c.name);
  bool converged = false;
  for (int iter = 1; iter <= 100; ++iter) {
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd prob(n), weight(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = Sigmoid(eta(i));
      weight(i) = prob(i) * (1.0 - prob(i));
    }
    const Eigen::VectorXd grad = x.transpose() * (y - prob) - penalty.cwiseProduct(beta);
    Eigen::MatrixXd hess = x.transpose() * weight.asDiagonal() * x;
    hess.diagonal() += penalty;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw Error(ErrorKind::kDivergence, "IRLS system became singular (perfect separation?); use l2 > 0");
    }
    const Eigen::VectorXd step = ldlt.solve(grad);
    beta += step;
    model.iterations = iter;
    if (!beta.allFinite()) throw Error(ErrorKind::kDivergence, "coefficients diverged; use l2 > 0");
    if (step.cwiseAbs().maxCoeff() < 1e-8) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error(ErrorKind::kDivergence, "IRLS did not converge in 100 iterations (perfect separation?); use l2 > 0");
  }
  model.intercept = beta(0);
  model.weights.assign(beta.data() + 1, beta.data() + 1 + p);
  return model;
}

inline std::vector<double> PredictProba(const LogisticModel& model, const FeatureMatrix& rows) {
  CheckColumns(model.feature_names, rows);
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      if (rows.missing(r, c)) throw Error(ErrorKind::kParameter, "logistic prediction needs complete rows");
    }
    out[r] = Sigmoid(model.Margin(rows.row_values(r)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json DoubleToJson(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double DoubleFromJson(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::kSchema, "unexpected numeric string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json ModelToJson(const TreeEnsembleModel& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      nodes.push_back({{"feature", n.feature},
                       {"threshold_bin", n.threshold_bin},
                       {"threshold", detail::DoubleToJson(n.threshold)},
                       {"default_left", n.default_left},
                       {"left", n.left},
                       {"right", n.right},
                       {"value", n.value},
                       {"cover", n.cover}});
    }
    trees.push_back(nodes);
  }
  return {{"format", "wqscreen.tree_ensemble"},
          {"version", kModelFormatVersion},
          {"family", LearnerFamilyName(model.family)},
          {"base_score", model.base_score},
          {"tree_scale", model.tree_scale},
          {"best_iteration", model.best_iteration},
          {"positive_weight", model.positive_weight},
          {"feature_names", model.feature_names},
          {"bin_edges", model.bin_edges},
          {"config", model.config_echo},
          {"trees", trees}};
}

inline TreeEnsembleModel ModelFromJson(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "wqscreen.tree_ensemble") {
    throw Error(ErrorKind::kSchema, "not a tree-ensemble document");
  }
  if (j.at("version").get<int>() != kModelFormatVersion) {
    throw Error(ErrorKind::kSchema, "unsupported model version " + j.at("version").dump());
  }
  TreeEnsembleModel m;
  m.family = ParseLearnerFamily(j.at("family").get<std::string>());
  m.base_score = j.at("base_score").get<double>();
  m.tree_scale = j.at("tree_scale").get<double>();
  m.best_iteration = j.at("best_iteration").get<int>();
  m.positive_weight = j.at("positive_weight").get<double>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.bin_edges = j.at("bin_edges").get<std::vector<std::vector<double>>>();
  m.config_echo = j.at("config");
  for (const auto& nodes : j.at("trees")) {
    Tree t;
    for (const auto& n : nodes) {
      TreeNode node;
      node.feature = n.at("feature").get<int>();
      node.threshold_bin = n.at("threshold_bin").get<int>();
      node.threshold = detail::DoubleFromJson(n.at("threshold"));
      node.default_left = n.at("default_left").get<bool>();
      node.left = n.at("left").get<int>();
      node.right = n.at("right").get<int>();
      node.value = n.at("value").get<double>();
      node.cover = n.at("cover").get<double>();
      t.nodes.push_back(node);
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

inline nlohmann::json LogisticToJson(const LogisticModel& model) {
  return {{"format", "wqscreen.logistic"},
          {"version", kModelFormatVersion},
          {"weights", model.weights},
          {"intercept", model.intercept},
          {"l2_regularization", model.l2_regularization},
          {"feature_names", model.feature_names},
          {"iterations", model.iterations}};
}

inline LogisticModel LogisticFromJson(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "wqscreen.logistic") throw Error(ErrorKind::kSchema, "not a logistic document");
  LogisticModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.l2_regularization = j.at("l2_regularization").get<double>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.iterations = j.at("iterations").get<int>();
  return m;
}

}  // namespace wqscreen
