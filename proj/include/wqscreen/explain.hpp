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

// Exact path-dependent Shapley attributions for tree ensembles, on the
// margin scale. Conditional expectations follow the training covers stored
// in each node.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/features.hpp"
#include "wqscreen/trees.hpp"

namespace wqscreen {

struct ShapAttribution {
  std::string row_id;
  double base_value = 0;
  std::vector<double> values;  // one per model feature
};

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0;
  double one_fraction = 0;
  double pweight = 0;
};

inline void ExtendPath(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

inline void UnwindPath(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

inline double UnwoundPathSum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  double total = 0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = next * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next = path[i].pweight - tmp * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      total += path[i].pweight / zero / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

inline bool GoesLeft(const TreeNode& n, std::span<const double> x, std::span<const std::uint8_t> missing) {
  const auto f = static_cast<std::size_t>(n.feature);
  return missing[f] ? n.default_left : x[f] <= n.threshold;
}

inline void TreeShapRecurse(const Tree& tree, std::span<const double> x, std::span<const std::uint8_t> missing,
                            std::vector<double>& phi, double scale, int node, int depth, PathElement* parent_path,
                            double parent_zero, double parent_one, int parent_feature) {
  PathElement* path = parent_path + depth + 1;
  std::copy(parent_path, parent_path + depth + 1, path);
  ExtendPath(path, depth, parent_zero, parent_one, parent_feature);
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const double w = UnwoundPathSum(path, depth, i);
      const PathElement& el = path[i];
      phi[static_cast<std::size_t>(el.feature)] += w * (el.one_fraction - el.zero_fraction) * n.value * scale;
    }
    return;
  }
  const bool left = GoesLeft(n, x, missing);
  const int hot = left ? n.left : n.right;
  const int cold = left ? n.right : n.left;
  const double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  const double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;
  double incoming_zero = 1, incoming_one = 1;
  int index = 0;
  for (; index <= depth; ++index) {
    if (path[index].feature == n.feature) break;
  }
  if (index != depth + 1) {
    incoming_zero = path[index].zero_fraction;
    incoming_one = path[index].one_fraction;
    UnwindPath(path, depth, index);
    depth -= 1;
  }
  TreeShapRecurse(tree, x, missing, phi, scale, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, n.feature);
  TreeShapRecurse(tree, x, missing, phi, scale, cold, depth + 1, path, cold_zero * incoming_zero, 0, n.feature);
}

inline double ExpectedValue(const Tree& tree, int node = 0) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  const TreeNode& l = tree.nodes[static_cast<std::size_t>(n.left)];
  const TreeNode& r = tree.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * ExpectedValue(tree, n.left) + r.cover * ExpectedValue(tree, n.right)) / n.cover;
}

inline std::span<const Tree> ActiveTrees(const TreeEnsembleModel& model) {
  const std::size_t used = std::min<std::size_t>(model.trees.size(), static_cast<std::size_t>(model.best_iteration));
  return {model.trees.data(), used};
}

inline void RequireCover(const TreeEnsembleModel& model) {
  if (!model.has_cover()) throw Error(ErrorKind::kUnsupportedModel, "model lacks training cover weights");
}

}  // namespace detail

// Expected margin under the training covers.
inline double ShapBaseValue(const TreeEnsembleModel& model) {
  double sum = 0;
  for (const Tree& t : detail::ActiveTrees(model)) sum += detail::ExpectedValue(t);
  return model.base_score + model.tree_scale * sum;
}

inline ShapAttribution TreeShap(const TreeEnsembleModel& model, std::span<const double> x,
                                std::span<const std::uint8_t> missing) {
  detail::RequireCover(model);
  ShapAttribution out;
  out.values.assign(model.feature_names.size(), 0.0);
  out.base_value = ShapBaseValue(model);
  for (const Tree& t : detail::ActiveTrees(model)) {
    const int depth = t.depth();
    std::vector<detail::PathElement> buffer(static_cast<std::size_t>((depth + 2) * (depth + 3) / 2));
    detail::TreeShapRecurse(t, x, missing, out.values, model.tree_scale, 0, 0, buffer.data(), 1, 1, -1);
  }
  return out;
}

inline std::vector<ShapAttribution> TreeShap(const TreeEnsembleModel& model, const FeatureMatrix& rows) {
  CheckColumns(model.feature_names, rows);
  std::vector<ShapAttribution> out;
  out.reserve(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    out.push_back(TreeShap(model, rows.row_values(r), rows.row_missing(r)));
    out.back().row_id = rows.row_ids()[r];
  }
  return out;
}

namespace detail {

// E[tree(x) | x_S] with unknown features averaged over the node covers.
inline double ConditionalExpectation(const Tree& tree, int node, std::span<const double> x,
                                     std::span<const std::uint8_t> missing, const std::vector<bool>& known) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  if (known[static_cast<std::size_t>(n.feature)]) {
    return ConditionalExpectation(tree, GoesLeft(n, x, missing) ? n.left : n.right, x, missing, known);
  }
  const double l = tree.nodes[static_cast<std::size_t>(n.left)].cover;
  const double r = tree.nodes[static_cast<std::size_t>(n.right)].cover;
  return (l * ConditionalExpectation(tree, n.left, x, missing, known) +
          r * ConditionalExpectation(tree, n.right, x, missing, known)) /
         n.cover;
}

}  // namespace detail

// Shapley values by subset enumeration over the features the model uses.
// Verification oracle for TreeShap.
inline ShapAttribution BruteForceShap(const TreeEnsembleModel& model, std::span<const double> x,
                                      std::span<const std::uint8_t> missing, int max_features = 12) {
  detail::RequireCover(model);
  if (max_features > 12) throw Error(ErrorKind::kOracleScope, "brute-force Shapley is limited to 12 features");
  std::set<int> used_set;
  for (const Tree& t : detail::ActiveTrees(model)) {
    for (const TreeNode& n : t.nodes) {
      if (!n.is_leaf()) used_set.insert(n.feature);
    }
  }
  const std::vector<int> used(used_set.begin(), used_set.end());
  const int m = static_cast<int>(used.size());
  if (m > max_features) {
    throw Error(ErrorKind::kOracleScope, "model uses " + std::to_string(m) + " features, more than " +
                                             std::to_string(max_features));
  }
  const std::size_t p = model.feature_names.size();
  auto value_of = [&](std::uint32_t mask) {
    std::vector<bool> known(p, false);
    for (int j = 0; j < m; ++j) {
      if (mask & (1u << j)) known[static_cast<std::size_t>(used[static_cast<std::size_t>(j)])] = true;
    }
    double sum = 0;
    for (const Tree& t : detail::ActiveTrees(model)) sum += detail::ConditionalExpectation(t, 0, x, missing, known);
    return model.base_score + model.tree_scale * sum;
  };
  std::vector<double> v(std::size_t{1} << m);
  for (std::uint32_t mask = 0; mask < v.size(); ++mask) v[mask] = value_of(mask);
  // Shapley kernel |S|! (m - |S| - 1)! / m!
  std::vector<double> weight(static_cast<std::size_t>(std::max(m, 1)));
  for (int s = 0; s < m; ++s) {
    weight[static_cast<std::size_t>(s)] = std::exp(std::lgamma(s + 1.0) + std::lgamma(m - s) - std::lgamma(m + 1.0));
  }
  ShapAttribution out;
  out.values.assign(p, 0.0);
  out.base_value = v[0];
  for (int j = 0; j < m; ++j) {
    double phi = 0;
    for (std::uint32_t mask = 0; mask < v.size(); ++mask) {
      if (mask & (1u << j)) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | (1u << j)] - v[mask]);
    }
    out.values[static_cast<std::size_t>(used[static_cast<std::size_t>(j)])] = phi;
  }
  return out;
}

struct FeatureImportance {
  std::string feature;
  double mean_abs = 0;
};

// Mean |SHAP| per feature, descending; equal means ordered by name.
inline std::vector<FeatureImportance> MeanAbsShap(const TreeEnsembleModel& model, const FeatureMatrix& rows) {
  if (rows.rows() == 0) throw Error(ErrorKind::kEmptyInput, "no rows to attribute");
  const auto attributions = TreeShap(model, rows);
  std::vector<FeatureImportance> out;
  for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
    double sum = 0;
    for (const auto& a : attributions) sum += std::fabs(a.values[j]);
    out.push_back({model.feature_names[j], sum / static_cast<double>(rows.rows())});
  }
  std::sort(out.begin(), out.end(), [](const FeatureImportance& a, const FeatureImportance& b) {
    if (a.mean_abs != b.mean_abs) return a.mean_abs > b.mean_abs;
    return a.feature < b.feature;
  });
  return out;
}

inline std::string MeanAbsShapCsv(const std::vector<FeatureImportance>& ranking) {
  std::string out;
  csv::AppendRow(out, {"rank", "feature", "mean_abs_shap"});
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    csv::AppendRow(out, {std::to_string(i + 1), ranking[i].feature, FormatDouble(ranking[i].mean_abs)});
  }
  return out;
}

// Long-format table for beeswarm plots: one line per (row, feature).
inline std::string ExportBeeswarm(const std::vector<ShapAttribution>& attributions, const FeatureMatrix& rows) {
  if (attributions.size() != rows.rows()) {
    throw Error(ErrorKind::kPairing, std::to_string(attributions.size()) + " attributions for " +
                                         std::to_string(rows.rows()) + " rows");
  }
  std::string out;
  csv::AppendRow(out, {"row_id", "feature", "shap_value", "feature_value", "feature_missing"});
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto& a = attributions[r];
    if (a.row_id != rows.row_ids()[r] || a.values.size() != rows.cols()) {
      throw Error(ErrorKind::kPairing, "attribution " + std::to_string(r) + " does not match row '" + rows.row_ids()[r] + "'");
    }
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      const bool miss = rows.missing(r, c);
      csv::AppendRow(out, {a.row_id, rows.column(c).name, FormatDouble(a.values[c]),
                           miss ? std::string() : FormatDouble(rows.value(r, c)), miss ? "true" : "false"});
    }
  }
  return out;
}

}  // namespace wqscreen
