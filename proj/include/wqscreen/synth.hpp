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

// Synthetic survey generator with a tunable TC -> EC coupling.
//
// A standard-normal latent contamination score drives everything: TC is the
// top tc_prevalence share of latents, EC is drawn per TC stratum at the two
// conditional rates (optionally tilted by the latent), measurements are baseline + signal * latent + noise, and contextual
// answers tilt toward riskier categories as the latent grows.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/records.hpp"

namespace wqscreen {

struct MeasurementShape {
  double center = 0;  // on the log scale when log_scale is set
  double spread = 1;
  bool log_scale = false;
  double lo = 0;  // values are clamped into [lo, hi]
  double hi = 0;
};

inline const std::array<MeasurementShape, kMeasurementCount>& DefaultMeasurementShapes() {
  static const std::array<MeasurementShape, kMeasurementCount> shapes = {{
      {std::log(2.5), 0.8, true, 0.05, 3000},      // turbidity
      {std::log(550.0), 0.45, true, 20, 20000},    // tds
      {std::log(850.0), 0.45, true, 30, 40000},    // conductivity
      {7.4, 0.45, false, 4.5, 10.5},               // ph
      {230.0, 80.0, false, -300, 700},             // orp
      {260.0, 90.0, false, 5, 2000},               // hardness
      {210.0, 70.0, false, 5, 1500},               // alkalinity
  }};
  return shapes;
}

// Levels per contextual field, ordered from lowest to highest risk.
inline const std::array<std::vector<std::pair<std::string, double>>, kCategoricalCount>& DefaultCategoryLevels() {
  static const std::array<std::vector<std::pair<std::string, double>>, kCategoricalCount> levels = {{
      {{"packaged water", 0.2}, {"municipal supply", 0.35}, {"public tap", 0.15}, {"bore well", 0.15},
       {"tanker", 0.1}, {"well", 0.05}},
      {{"bottle", 0.2}, {"pot", 0.35}, {"drum", 0.3}, {"sump", 0.15}},
      {{"steel", 0.3}, {"copper", 0.1}, {"plastic", 0.45}, {"clay", 0.15}},
      {{"kitchen shelf", 0.35}, {"raised", 0.35}, {"floor", 0.3}},
      {{"<1 day", 0.5}, {"1-2 days", 0.35}, {">2 days", 0.15}},
      {{"boiling treatment", 0.3}, {"HH treatment", 0.2}, {"no treatment", 0.5}},
      {{"graduate", 0.2}, {"secondary", 0.4}, {"primary", 0.25}, {"none", 0.15}},
      {{"female", 0.6}, {"male", 0.4}},
      {{"good", 0.4}, {"fair", 0.4}, {"poor", 0.2}},
  }};
  return levels;
}

struct SynthConfig {
  int n_rows = 2207;
  double tc_prevalence = 0.88;
  double ec_given_tc1 = 0.764;
  double ec_given_tc0 = 0.185;
  // Logit slope of EC on the latent within each TC stratum. Intercepts are
  // solved per stratum so the realised conditional rates match the targets in
  // expectation; 0 makes EC depend on the latent only through TC.
  double ec_latent_slope = 0.3;
  // Correlation of each measurement (on its working scale) with the latent,
  // and the category tilt strength for each contextual field. Keys are
  // measurement or contextual field names.
  std::map<std::string, double> feature_signal = {
      {"turbidity_ntu", 0.2},  {"tds_ppm", 0.2},         {"conductivity_us_cm", 0.2},  {"ph", -0.2},
      {"orp_mv", -0.2},        {"hardness_mg_l", 0.2},   {"alkalinity_mg_l", 0.2},     {"source_type", 0.8},
      {"container_type", 0.8}, {"container_material", 0.8}, {"container_placement", 0.8}, {"storage_duration", 0.8},
      {"treatment", 0.8},      {"education_level", 0.8}, {"sex", 0.8},                 {"perception", 0.8},
  };
  // Per-column missingness; keys as above plus "children_under_5".
  std::map<std::string, double> missing_rate = {
      {"orp_mv", 0.05}, {"hardness_mg_l", 0.03}, {"alkalinity_mg_l", 0.03}, {"perception", 0.02}};
  std::array<std::vector<std::pair<std::string, double>>, kCategoricalCount> category_levels =
      DefaultCategoryLevels();
  double household_fraction = 0.9;
  double set2_fraction = 0.35;
  int collectors = 50;
  std::uint64_t seed = 0;

  double implied_odds_ratio() const {
    return (ec_given_tc1 / (1 - ec_given_tc1)) / (ec_given_tc0 / (1 - ec_given_tc0));
  }

  double signal(const std::string& name) const {
    const auto it = feature_signal.find(name);
    return it == feature_signal.end() ? 0.0 : it->second;
  }

  double missing(const std::string& name) const {
    const auto it = missing_rate.find(name);
    return it == missing_rate.end() ? 0.0 : it->second;
  }

  void Validate() const {
    auto open_unit = [](double p) { return p > 0 && p < 1; };
    if (n_rows < 10) throw Error(ErrorKind::kParameter, "n_rows must be >= 10");
    if (!open_unit(tc_prevalence) || !open_unit(ec_given_tc1) || !open_unit(ec_given_tc0)) {
      throw Error(ErrorKind::kParameter, "tc_prevalence and the EC conditionals must lie in (0, 1)");
    }
    if (household_fraction < 0 || household_fraction > 1 || set2_fraction < 0 || set2_fraction > 1) {
      throw Error(ErrorKind::kParameter, "household_fraction and set2_fraction must lie in [0, 1]");
    }
    if (!std::isfinite(ec_latent_slope)) throw Error(ErrorKind::kParameter, "ec_latent_slope must be finite");
    if (collectors < 1) throw Error(ErrorKind::kParameter, "collectors must be >= 1");
    for (const auto& [name, s] : feature_signal) {
      const bool known = FindMeasurement(name) || FindCategorical(name);
      if (!known) throw Error(ErrorKind::kParameter, "feature_signal: unknown column '" + name + "'");
      if (FindMeasurement(name) && !(std::fabs(s) <= 1)) {
        throw Error(ErrorKind::kParameter, "feature_signal for '" + name + "' must lie in [-1, 1]");
      }
      if (!std::isfinite(s)) throw Error(ErrorKind::kParameter, "feature_signal for '" + name + "' is not finite");
    }
    for (const auto& [name, p] : missing_rate) {
      const bool known = FindMeasurement(name) || FindCategorical(name) || name == "children_under_5";
      if (!known) throw Error(ErrorKind::kParameter, "missing_rate: unknown column '" + name + "'");
      if (!(p >= 0 && p < 1)) throw Error(ErrorKind::kParameter, "missing_rate for '" + name + "' must lie in [0, 1)");
    }
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      if (category_levels[c].empty()) {
        throw Error(ErrorKind::kParameter, "no levels for '" + std::string(kCategoricalNames[c]) + "'");
      }
      for (const auto& [level, w] : category_levels[c]) {
        if (level.empty() || !(w > 0)) {
          throw Error(ErrorKind::kParameter, "levels need names and positive weights");
        }
      }
    }
  }

  // Keys absent from the JSON keep their defaults; a present feature_signal
  // or missing_rate object replaces the default map wholesale.
  static SynthConfig FromJson(const nlohmann::json& j) {
    SynthConfig c;
    c.n_rows = j.value("n_rows", c.n_rows);
    c.tc_prevalence = j.value("tc_prevalence", c.tc_prevalence);
    c.ec_given_tc1 = j.value("ec_given_tc1", c.ec_given_tc1);
    c.ec_given_tc0 = j.value("ec_given_tc0", c.ec_given_tc0);
    c.ec_latent_slope = j.value("ec_latent_slope", c.ec_latent_slope);
    if (j.contains("feature_signal")) c.feature_signal = j.at("feature_signal").get<std::map<std::string, double>>();
    if (j.contains("missing_rate")) c.missing_rate = j.at("missing_rate").get<std::map<std::string, double>>();
    if (j.contains("category_levels")) {
      for (const auto& [field, levels] : j.at("category_levels").items()) {
        const auto cat = FindCategorical(field);
        if (!cat) throw Error(ErrorKind::kParameter, "category_levels: unknown field '" + field + "'");
        auto& dst = c.category_levels[static_cast<std::size_t>(*cat)];
        dst.clear();
        if (levels.is_array()) {
          for (const auto& pair : levels) dst.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<double>());
        } else {
          for (const auto& [level, w] : levels.items()) dst.emplace_back(level, w.get<double>());
        }
      }
    }
    c.household_fraction = j.value("household_fraction", c.household_fraction);
    c.set2_fraction = j.value("set2_fraction", c.set2_fraction);
    c.collectors = j.value("collectors", c.collectors);
    c.seed = j.value("seed", c.seed);
    c.Validate();
    return c;
  }

  nlohmann::json ToJson() const {
    nlohmann::json levels = nlohmann::json::object();
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      nlohmann::json f = nlohmann::json::array();
      for (const auto& [level, w] : category_levels[c]) f.push_back({level, w});
      levels[std::string(kCategoricalNames[c])] = f;
    }
    return {{"n_rows", n_rows},
            {"tc_prevalence", tc_prevalence},
            {"ec_given_tc1", ec_given_tc1},
            {"ec_given_tc0", ec_given_tc0},
            {"ec_latent_slope", ec_latent_slope},
            {"feature_signal", feature_signal},
            {"missing_rate", missing_rate},
            {"category_levels", levels},
            {"household_fraction", household_fraction},
            {"set2_fraction", set2_fraction},
            {"collectors", collectors},
            {"seed", seed}};
  }
};

struct SynthTruth {
  std::vector<double> latent;
  double tc_threshold = 0;  // TC = 1 iff latent >= threshold (ties broken by index)
  double ec_given_tc1 = 0;
  double ec_given_tc0 = 0;
  double ec_latent_slope = 0;
  double ec_intercept_tc1 = 0;
  double ec_intercept_tc0 = 0;
  double implied_odds_ratio = 0;
  double empirical_tc_prevalence = 0;
  double empirical_ec_prevalence = 0;
  double empirical_odds_ratio = 0;  // NaN when a cell is empty

  nlohmann::json ToJson(const std::vector<FieldRecord>& records) const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < latent.size(); ++i) {
      rows.push_back({{"uuid", records[i].uuid}, {"latent", latent[i]}});
    }
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"tc_threshold", tc_threshold},
            {"ec_given_tc1", ec_given_tc1},
            {"ec_given_tc0", ec_given_tc0},
            {"ec_latent_slope", ec_latent_slope},
            {"ec_intercept_tc1", ec_intercept_tc1},
            {"ec_intercept_tc0", ec_intercept_tc0},
            {"implied_odds_ratio", implied_odds_ratio},
            {"empirical_tc_prevalence", empirical_tc_prevalence},
            {"empirical_ec_prevalence", empirical_ec_prevalence},
            {"empirical_odds_ratio", num(empirical_odds_ratio)},
            {"latents", rows}};
  }
};

struct SynthResult {
  std::vector<FieldRecord> records;
  SynthTruth truth;
};

namespace detail {

inline std::string SynthUuid(Rng& rng) {
  const std::uint64_t a = rng.NextU64();
  const std::uint64_t b = rng.NextU64();
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-4%03llx-%04llx-%012llx",
                static_cast<unsigned long long>(a >> 32), static_cast<unsigned long long>((a >> 16) & 0xffff),
                static_cast<unsigned long long>(a & 0xfff),
                static_cast<unsigned long long>(0x8000 | ((b >> 48) & 0x3fff)),
                static_cast<unsigned long long>(b & 0xffffffffffffULL));
  return buf;
}

inline std::size_t TiltedDraw(Rng& rng, const std::vector<std::pair<std::string, double>>& levels, double tilt,
                              double latent) {
  const std::size_t k = levels.size();
  std::vector<double> w(k);
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double risk = k == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(k - 1);
    w[i] = levels[i].second * std::exp(tilt * risk * latent);
    total += w[i];
  }
  double u = rng.Uniform() * total;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return k - 1;
}

// Intercept a with mean(sigmoid(a + slope * z)) == rate over `latents`.
inline double SolveStratumIntercept(const std::vector<double>& latents, double slope, double rate) {
  if (latents.empty() || slope == 0) return Logit(rate);
  auto mean_at = [&](double a) {
    double s = 0;
    for (double z : latents) s += Sigmoid(a + slope * z);
    return s / static_cast<double>(latents.size());
  };
  double lo = -50, hi = 50;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline SynthResult Generate(const SynthConfig& config) {
  config.Validate();
  const std::size_t n = static_cast<std::size_t>(config.n_rows);
  SynthResult out;
  auto& truth = out.truth;

  Rng latent_rng(DeriveSeed(config.seed, 1));
  truth.latent.resize(n);
  for (auto& z : truth.latent) z = latent_rng.Normal();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return truth.latent[a] > truth.latent[b]; });
  const auto n_tc = static_cast<std::size_t>(
      std::clamp<long long>(std::llround(config.tc_prevalence * static_cast<double>(n)), 1, static_cast<long long>(n) - 1));
  std::vector<bool> tc(n, false);
  for (std::size_t i = 0; i < n_tc; ++i) tc[order[i]] = true;
  truth.tc_threshold = truth.latent[order[n_tc - 1]];

  std::vector<double> z_tc1, z_tc0;
  for (std::size_t i = 0; i < n; ++i) (tc[i] ? z_tc1 : z_tc0).push_back(truth.latent[i]);
  truth.ec_intercept_tc1 = detail::SolveStratumIntercept(z_tc1, config.ec_latent_slope, config.ec_given_tc1);
  truth.ec_intercept_tc0 = detail::SolveStratumIntercept(z_tc0, config.ec_latent_slope, config.ec_given_tc0);
  Rng ec_rng(DeriveSeed(config.seed, 2));
  std::vector<bool> ec(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = tc[i] ? truth.ec_intercept_tc1 : truth.ec_intercept_tc0;
    ec[i] = ec_rng.Bernoulli(Sigmoid(a + config.ec_latent_slope * truth.latent[i]));
  }

  Rng measure_rng(DeriveSeed(config.seed, 3));
  Rng context_rng(DeriveSeed(config.seed, 4));
  Rng meta_rng(DeriveSeed(config.seed, 5));
  Rng missing_rng(DeriveSeed(config.seed, 6));
  const auto& shapes = DefaultMeasurementShapes();

  // Each collector submits on its own clock, 10 to 60 minutes apart.
  const std::int64_t campaign_start = DaysFromCivil(2023, 3, 1) * 86400 + 8 * 3600;
  std::vector<std::int64_t> collector_clock(static_cast<std::size_t>(config.collectors));
  for (auto& t : collector_clock) t = campaign_start + static_cast<std::int64_t>(meta_rng.Below(3600));

  out.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = out.records[i];
    const double z = truth.latent[i];

    rec.uuid = detail::SynthUuid(meta_rng);
    char sid[16];
    std::snprintf(sid, sizeof sid, "S%05u", static_cast<unsigned>(i + 1));
    rec.sample_id = sid;
    const std::size_t collector = meta_rng.Below(static_cast<std::uint64_t>(config.collectors));
    char cid[16];
    std::snprintf(cid, sizeof cid, "C%02u", static_cast<unsigned>(collector + 1));
    rec.collector_id = cid;
    rec.survey_kind = meta_rng.Bernoulli(config.household_fraction) ? SurveyKind::kHousehold : SurveyKind::kWaterBody;
    rec.latitude = 12.90 + 0.30 * meta_rng.Uniform();
    rec.longitude = 80.10 + 0.20 * meta_rng.Uniform();
    rec.gps_accuracy_m = 3.0 + 22.0 * meta_rng.Uniform();
    auto& clock = collector_clock[collector];
    clock += 600 + static_cast<std::int64_t>(meta_rng.Below(3000));
    const std::int64_t duration = rec.survey_kind == SurveyKind::kHousehold
                                      ? 300 + static_cast<std::int64_t>(meta_rng.Below(1200))
                                      : 120 + static_cast<std::int64_t>(meta_rng.Below(480));
    rec.started_at = clock;
    rec.ended_at = clock + duration;
    clock += duration;
    rec.expected_photo_count = 3;
    rec.photo_count = 3;
    rec.dataset_origin = meta_rng.Bernoulli(config.set2_fraction) ? DatasetOrigin::kSet2 : DatasetOrigin::kSet1;
    if (rec.survey_kind == SurveyKind::kHousehold) rec.children_under_5 = static_cast<int>(meta_rng.Below(3));

    for (std::size_t m = 0; m < kMeasurementCount; ++m) {
      const auto& shape = shapes[m];
      const double s = config.signal(std::string(kMeasurementNames[m]));
      const double eps = measure_rng.Normal();
      const double score = s * z + std::sqrt(std::max(0.0, 1 - s * s)) * eps;
      double v = shape.center + shape.spread * score;
      if (shape.log_scale) v = std::exp(v);
      rec.measurements[m] = std::clamp(v, shape.lo, shape.hi);
    }
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      const double tilt = config.signal(std::string(kCategoricalNames[c]));
      const auto& levels = config.category_levels[c];
      rec.categoricals[c] = levels[detail::TiltedDraw(context_rng, levels, tilt, z)].first;
    }

    for (std::size_t m = 0; m < kMeasurementCount; ++m) {
      if (missing_rng.Bernoulli(config.missing(std::string(kMeasurementNames[m])))) rec.measurements[m].reset();
    }
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      if (missing_rng.Bernoulli(config.missing(std::string(kCategoricalNames[c])))) rec.categoricals[c].clear();
    }
    if (missing_rng.Bernoulli(config.missing("children_under_5"))) rec.children_under_5.reset();

    rec.tc_present = tc[i];
    rec.ec_present = ec[i];
  }

  truth.ec_given_tc1 = config.ec_given_tc1;
  truth.ec_given_tc0 = config.ec_given_tc0;
  truth.ec_latent_slope = config.ec_latent_slope;
  truth.implied_odds_ratio = config.implied_odds_ratio();
  double cells[2][2] = {{0, 0}, {0, 0}};  // [tc][ec]
  for (std::size_t i = 0; i < n; ++i) cells[tc[i] ? 1 : 0][ec[i] ? 1 : 0] += 1;
  truth.empirical_tc_prevalence = static_cast<double>(n_tc) / static_cast<double>(n);
  truth.empirical_ec_prevalence = (cells[0][1] + cells[1][1]) / static_cast<double>(n);
  const bool any_empty = cells[0][0] == 0 || cells[0][1] == 0 || cells[1][0] == 0 || cells[1][1] == 0;
  truth.empirical_odds_ratio = any_empty ? std::nan("") : (cells[1][1] * cells[0][0]) / (cells[1][0] * cells[0][1]);
  return out;
}

inline std::string FixtureCsv(const std::vector<FieldRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::kEmptyInput, "no records to write");
  return WriteRecordsCsv(records);
}

inline void WriteFixture(const std::vector<FieldRecord>& records, const std::string& path) {
  csv::WriteFile(path, FixtureCsv(records));
}

}  // namespace wqscreen
