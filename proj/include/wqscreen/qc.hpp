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

// Rule-based triage of incoming survey submissions into OK / REVIEW / ALERT.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/records.hpp"

namespace wqscreen {

enum class QcDomain { kRecordIntegrity, kSampleId, kGps, kDuration, kPhotos, kLogic, kPlausibility };
enum class QcSeverity { kReview, kAlert };
enum class QcCategory { kOk, kReview, kAlert };

inline std::string_view QcDomainName(QcDomain d) {
  switch (d) {
    case QcDomain::kRecordIntegrity: return "record_integrity";
    case QcDomain::kSampleId: return "sample_id";
    case QcDomain::kGps: return "gps";
    case QcDomain::kDuration: return "duration";
    case QcDomain::kPhotos: return "photos";
    case QcDomain::kLogic: return "logic";
    case QcDomain::kPlausibility: return "plausibility";
  }
  return "unknown";
}

inline std::string_view QcCategoryName(QcCategory c) {
  switch (c) {
    case QcCategory::kOk: return "OK";
    case QcCategory::kReview: return "REVIEW";
    case QcCategory::kAlert: return "ALERT";
  }
  return "unknown";
}

struct QcRule {
  std::string_view code;
  QcDomain domain;
  QcSeverity severity;
};

// The rule catalog, in reporting order.
inline constexpr std::array<QcRule, 14> kQcRules = {{
    {"MISSING_UUID", QcDomain::kRecordIntegrity, QcSeverity::kAlert},
    {"DUPLICATE_UUID", QcDomain::kRecordIntegrity, QcSeverity::kAlert},
    {"MISSING_SAMPLE_ID", QcDomain::kSampleId, QcSeverity::kAlert},
    {"GPS_MISSING", QcDomain::kGps, QcSeverity::kReview},
    {"GPS_OUT_OF_RANGE", QcDomain::kGps, QcSeverity::kReview},
    {"GPS_LOW_ACCURACY", QcDomain::kGps, QcSeverity::kReview},
    {"SPATIAL_CLUSTER", QcDomain::kGps, QcSeverity::kReview},
    {"TIMESTAMP_MISSING", QcDomain::kDuration, QcSeverity::kReview},
    {"DURATION_SHORT", QcDomain::kDuration, QcSeverity::kReview},
    {"BATCH_FILLING", QcDomain::kDuration, QcSeverity::kReview},
    {"PHOTOS_INCOMPLETE", QcDomain::kPhotos, QcSeverity::kReview},
    {"END_BEFORE_START", QcDomain::kLogic, QcSeverity::kAlert},
    {"EC_WITHOUT_TC", QcDomain::kLogic, QcSeverity::kReview},
    {"VALUE_IMPLAUSIBLE", QcDomain::kPlausibility, QcSeverity::kAlert},
}};

inline const QcRule& FindQcRule(std::string_view code) {
  for (const auto& r : kQcRules) {
    if (r.code == code) return r;
  }
  throw Error(ErrorKind::kParameter, "unknown QC rule '" + std::string(code) + "'");
}

inline std::size_t QcRuleOrder(std::string_view code) {
  for (std::size_t i = 0; i < kQcRules.size(); ++i) {
    if (kQcRules[i].code == code) return i;
  }
  throw Error(ErrorKind::kParameter, "unknown QC rule '" + std::string(code) + "'");
}

// ALERT if any triggered rule is an alert, REVIEW if any rule fired, else OK.
inline QcCategory CategoryFor(const std::vector<std::string>& triggered) {
  QcCategory c = QcCategory::kOk;
  for (const auto& code : triggered) {
    if (FindQcRule(code).severity == QcSeverity::kAlert) return QcCategory::kAlert;
    c = QcCategory::kReview;
  }
  return c;
}

struct QcVerdict {
  std::string uuid;
  QcCategory category = QcCategory::kOk;
  std::vector<std::string> triggered;  // catalog order

  void Add(std::string_view code) {
    if (std::find(triggered.begin(), triggered.end(), code) != triggered.end()) return;
    triggered.emplace_back(code);
    std::sort(triggered.begin(), triggered.end(),
              [](const std::string& a, const std::string& b) { return QcRuleOrder(a) < QcRuleOrder(b); });
    category = CategoryFor(triggered);
  }

  bool operator==(const QcVerdict&) const = default;

  nlohmann::ordered_json ToJson() const {
    return {{"uuid", uuid}, {"category", QcCategoryName(category)}, {"triggered", triggered}};
  }
};

class UuidRegistry {
 public:
  // True (and inserted) when novel.
  bool Register(const std::string& uuid) {
    if (uuid.empty()) throw Error(ErrorKind::kParameter, "cannot register an empty uuid");
    return seen_.insert(uuid).second;
  }

  bool Contains(const std::string& uuid) const { return seen_.count(uuid) != 0; }
  std::size_t size() const { return seen_.size(); }

 private:
  std::unordered_set<std::string> seen_;
};

struct QcConfig {
  double gps_accuracy_max_m = 30.0;
  std::int64_t household_min_duration_s = 180;
  std::int64_t water_body_min_duration_s = 60;
  int batch_min = 5;
  std::int64_t batch_gap_s = 60;
  int cluster_min = 5;
  double cluster_radius_m = 10.0;
  bool batch_rules = true;
  PlausibilityBounds bounds;

  static QcConfig FromJson(const nlohmann::json& j) {
    QcConfig c;
    c.gps_accuracy_max_m = j.value("gps_accuracy_max_m", c.gps_accuracy_max_m);
    c.household_min_duration_s = j.value("household_min_duration_s", c.household_min_duration_s);
    c.water_body_min_duration_s = j.value("water_body_min_duration_s", c.water_body_min_duration_s);
    c.batch_min = j.value("batch_min", c.batch_min);
    c.batch_gap_s = j.value("batch_gap_s", c.batch_gap_s);
    c.cluster_min = j.value("cluster_min", c.cluster_min);
    c.cluster_radius_m = j.value("cluster_radius_m", c.cluster_radius_m);
    c.batch_rules = j.value("batch_rules", c.batch_rules);
    if (j.contains("bounds")) c.bounds = PlausibilityBounds::FromJson(j.at("bounds"));
    if (c.batch_min < 2 || c.cluster_min < 2) throw Error(ErrorKind::kParameter, "batch_min and cluster_min must be >= 2");
    if (c.batch_gap_s <= 0 || !(c.cluster_radius_m > 0)) {
      throw Error(ErrorKind::kParameter, "batch_gap_s and cluster_radius_m must be positive");
    }
    return c;
  }
};

// Per-record rules. The registry gains the record's uuid when it is present
// and novel.
inline QcVerdict EvaluateRecord(const FieldRecord& rec, UuidRegistry& registry, const QcConfig& config = {}) {
  QcVerdict v;
  v.uuid = rec.uuid;
  if (rec.uuid.empty()) {
    v.Add("MISSING_UUID");
  } else if (!registry.Register(rec.uuid)) {
    v.Add("DUPLICATE_UUID");
  }
  if (!rec.sample_id || Trim(*rec.sample_id).empty()) v.Add("MISSING_SAMPLE_ID");

  if (!rec.latitude || !rec.longitude) {
    v.Add("GPS_MISSING");
  } else if (std::fabs(*rec.latitude) > 90.0 || std::fabs(*rec.longitude) > 180.0) {
    v.Add("GPS_OUT_OF_RANGE");
  }
  if (rec.gps_accuracy_m && *rec.gps_accuracy_m > config.gps_accuracy_max_m) v.Add("GPS_LOW_ACCURACY");

  if (!rec.started_at || !rec.ended_at) {
    v.Add("TIMESTAMP_MISSING");
  } else if (*rec.ended_at < *rec.started_at) {
    v.Add("END_BEFORE_START");
  } else {
    const std::int64_t duration = *rec.ended_at - *rec.started_at;
    const std::int64_t min = rec.survey_kind == SurveyKind::kHousehold ? config.household_min_duration_s
                                                                       : config.water_body_min_duration_s;
    if (duration < min) v.Add("DURATION_SHORT");
  }

  if (rec.photo_count < rec.expected_photo_count) v.Add("PHOTOS_INCOMPLETE");
  if (rec.ec_present == true && rec.tc_present == false) v.Add("EC_WITHOUT_TC");

  for (std::size_t m = 0; m < kMeasurementCount; ++m) {
    const auto& value = rec.measurements[m];
    if (value && !config.bounds.Contains(static_cast<Measurement>(m), *value)) {
      v.Add("VALUE_IMPLAUSIBLE");
      break;
    }
  }
  return v;
}

// Great-circle distance in metres.
inline double HaversineMeters(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadius = 6371008.8;
  constexpr double kRad = M_PI / 180.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(a)));
}

struct BatchFlags {
  std::map<std::string, int> rule_counts;  // records carrying each rule
  std::map<std::string, int> category_counts;

  nlohmann::json ToJson() const { return {{"rules", rule_counts}, {"categories", category_counts}}; }
};

struct QcBatchResult {
  std::vector<QcVerdict> verdicts;
  BatchFlags flags;

  bool any_alert() const {
    return std::any_of(verdicts.begin(), verdicts.end(), [](const QcVerdict& v) { return v.category == QcCategory::kAlert; });
  }
};

namespace detail {

// Indices of records in a run of >= batch_min submissions from one collector
// with every consecutive gap below batch_gap_s.
inline std::vector<std::size_t> BatchFillingRows(const std::vector<FieldRecord>& records, const QcConfig& config) {
  std::map<std::string, std::vector<std::pair<std::int64_t, std::size_t>>> by_collector;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.collector_id || r.collector_id->empty()) continue;
    const auto t = r.ended_at ? r.ended_at : r.started_at;
    if (!t) continue;
    by_collector[*r.collector_id].emplace_back(*t, i);
  }
  std::vector<std::size_t> out;
  for (auto& [collector, subs] : by_collector) {
    std::sort(subs.begin(), subs.end());
    std::size_t start = 0;
    for (std::size_t j = 1; j <= subs.size(); ++j) {
      const bool breaks = j == subs.size() || subs[j].first - subs[j - 1].first >= config.batch_gap_s;
      if (!breaks) continue;
      if (j - start >= static_cast<std::size_t>(config.batch_min)) {
        for (std::size_t k = start; k < j; ++k) out.push_back(subs[k].second);
      }
      start = j;
    }
  }
  return out;
}

// Household records in single-linkage groups (edges at <= cluster_radius_m)
// of at least cluster_min members.
inline std::vector<std::size_t> SpatialClusterRows(const std::vector<FieldRecord>& records, const QcConfig& config) {
  std::vector<std::size_t> pts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.survey_kind == SurveyKind::kHousehold && r.latitude && r.longitude) pts.push_back(i);
  }
  std::vector<std::size_t> parent(pts.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t a = 0; a < pts.size(); ++a) {
    const auto& ra = records[pts[a]];
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const auto& rb = records[pts[b]];
      if (HaversineMeters(*ra.latitude, *ra.longitude, *rb.latitude, *rb.longitude) <= config.cluster_radius_m) {
        parent[find(a)] = find(b);
      }
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t a = 0; a < pts.size(); ++a) groups[find(a)].push_back(pts[a]);
  std::vector<std::size_t> out;
  for (const auto& [root, members] : groups) {
    if (members.size() >= static_cast<std::size_t>(config.cluster_min)) out.insert(out.end(), members.begin(), members.end());
  }
  return out;
}

}  // namespace detail

inline QcBatchResult EvaluateBatch(const std::vector<FieldRecord>& records, const QcConfig& config = {}) {
  QcBatchResult result;
  UuidRegistry registry;
  for (const auto& r : records) result.verdicts.push_back(EvaluateRecord(r, registry, config));
  if (config.batch_rules) {
    for (std::size_t i : detail::BatchFillingRows(records, config)) result.verdicts[i].Add("BATCH_FILLING");
    for (std::size_t i : detail::SpatialClusterRows(records, config)) result.verdicts[i].Add("SPATIAL_CLUSTER");
  }
  for (const auto& v : result.verdicts) {
    ++result.flags.category_counts[std::string(QcCategoryName(v.category))];
    for (const auto& code : v.triggered) ++result.flags.rule_counts[code];
  }
  return result;
}

inline std::string VerdictsJsonLines(const std::vector<QcVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    out += v.ToJson().dump();
    out.push_back('\n');
  }
  return out;
}

// Plain-text summary: category counts, then per-rule counts in catalog order.
inline std::string QcSummaryTable(const QcBatchResult& result) {
  std::string out = "category  count\n";
  for (QcCategory c : {QcCategory::kOk, QcCategory::kReview, QcCategory::kAlert}) {
    const std::string name(QcCategoryName(c));
    const auto it = result.flags.category_counts.find(name);
    const int n = it == result.flags.category_counts.end() ? 0 : it->second;
    out += name + std::string(10 - name.size(), ' ') + std::to_string(n) + "\n";
  }
  out += "\nrule                domain            severity  count\n";
  for (const auto& rule : kQcRules) {
    const std::string code(rule.code);
    const auto it = result.flags.rule_counts.find(code);
    const int n = it == result.flags.rule_counts.end() ? 0 : it->second;
    const std::string domain(QcDomainName(rule.domain));
    const std::string severity = rule.severity == QcSeverity::kAlert ? "alert" : "review";
    out += code + std::string(20 - code.size(), ' ') + domain + std::string(18 - domain.size(), ' ') + severity +
           std::string(10 - severity.size(), ' ') + std::to_string(n) + "\n";
  }
  return out;
}

}  // namespace wqscreen
