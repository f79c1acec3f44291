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

// Survey record ingestion: CSV parsing, harmonization of spellings and
// units, technical cleaning, outlier screening and one-hot encoding into a
// FeatureMatrix.

#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wqscreen/common.hpp"
#include "wqscreen/csv.hpp"
#include "wqscreen/features.hpp"
#include "wqscreen/split.hpp"

namespace wqscreen {

enum class SurveyKind { kHousehold, kWaterBody };
enum class DatasetOrigin { kSet1, kSet2 };

inline std::string_view SurveyKindName(SurveyKind kind) {
  return kind == SurveyKind::kHousehold ? "household" : "water_body";
}
inline std::string_view DatasetOriginName(DatasetOrigin origin) {
  return origin == DatasetOrigin::kSet1 ? "set1" : "set2";
}

// The seven field measurements, in canonical units.
enum class Measurement : std::size_t {
  kTurbidity = 0,  // NTU
  kTds,            // ppm (mg/L)
  kConductivity,   // uS/cm
  kPh,
  kOrp,            // mV
  kHardness,       // mg/L
  kAlkalinity,     // mg/L
};
inline constexpr std::size_t kMeasurementCount = 7;

inline constexpr std::array<std::string_view, kMeasurementCount> kMeasurementNames = {
    "turbidity_ntu", "tds_ppm", "conductivity_us_cm", "ph", "orp_mv", "hardness_mg_l", "alkalinity_mg_l"};

enum class Categorical : std::size_t {
  kSourceType = 0,
  kContainerType,
  kContainerMaterial,
  kContainerPlacement,
  kStorageDuration,
  kTreatment,
  kEducationLevel,
  kSex,
  kPerception,
};
inline constexpr std::size_t kCategoricalCount = 9;

inline constexpr std::array<std::string_view, kCategoricalCount> kCategoricalNames = {
    "source_type",       "container_type", "container_material", "container_placement", "storage_duration",
    "treatment",         "education_level", "sex",               "perception"};

inline std::optional<Measurement> FindMeasurement(std::string_view name) {
  for (std::size_t i = 0; i < kMeasurementCount; ++i) {
    if (kMeasurementNames[i] == name) return static_cast<Measurement>(i);
  }
  return std::nullopt;
}

inline std::optional<Categorical> FindCategorical(std::string_view name) {
  for (std::size_t i = 0; i < kCategoricalCount; ++i) {
    if (kCategoricalNames[i] == name) return static_cast<Categorical>(i);
  }
  return std::nullopt;
}

inline constexpr std::string_view kRoTreatment = "RO treatment";
inline constexpr std::string_view kOtherCategory = "other";

struct FieldRecord {
  std::string uuid;
  std::optional<std::string> sample_id;
  std::optional<std::string> collector_id;
  std::optional<double> latitude;
  std::optional<double> longitude;
  std::optional<double> gps_accuracy_m;
  std::optional<std::int64_t> started_at;  // seconds since the Unix epoch, UTC
  std::optional<std::int64_t> ended_at;
  SurveyKind survey_kind = SurveyKind::kHousehold;
  int photo_count = 0;
  int expected_photo_count = 0;
  std::array<std::optional<double>, kMeasurementCount> measurements{};
  // Raw unit tag per measurement; empty means the canonical unit.
  std::array<std::string, kMeasurementCount> unit_tags{};
  // Empty string means the answer was not given.
  std::array<std::string, kCategoricalCount> categoricals{};
  std::optional<int> children_under_5;
  DatasetOrigin dataset_origin = DatasetOrigin::kSet1;
  std::optional<bool> tc_present;
  std::optional<bool> ec_present;

  std::optional<double>& measurement(Measurement m) { return measurements[static_cast<std::size_t>(m)]; }
  const std::optional<double>& measurement(Measurement m) const {
    return measurements[static_cast<std::size_t>(m)];
  }
  std::string& categorical(Categorical c) { return categoricals[static_cast<std::size_t>(c)]; }
  const std::string& categorical(Categorical c) const { return categoricals[static_cast<std::size_t>(c)]; }

  bool operator==(const FieldRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Timestamps

inline std::int64_t DaysFromCivil(int y, unsigned m, unsigned d) {
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

// Accepts integer epoch seconds or ISO 8601 "YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]".
inline std::optional<std::int64_t> ParseTimestamp(std::string_view raw) {
  const std::string text = Trim(raw);
  if (text.empty()) return std::nullopt;
  std::int64_t epoch = 0;
  if (ParseInt64(text, epoch)) return epoch;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double s = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3 || consumed != 10) {
    return std::nullopt;
  }
  std::size_t pos = 10;
  if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
    ++pos;
    int n = 0;
    if (std::sscanf(text.c_str() + pos, "%2d:%2d%n", &h, &mi, &n) != 2) return std::nullopt;
    pos += static_cast<std::size_t>(n);
    if (pos < text.size() && text[pos] == ':') {
      ++pos;
      std::size_t end = pos;
      while (end < text.size() && (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.')) ++end;
      if (!ParseDouble(std::string_view(text).substr(pos, end - pos), s)) return std::nullopt;
      pos = end;
    }
  }
  std::int64_t offset = 0;
  if (pos < text.size()) {
    if (text[pos] == 'Z' && pos + 1 == text.size()) {
      pos = text.size();
    } else if (text[pos] == '+' || text[pos] == '-') {
      int oh = 0, om = 0;
      if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) return std::nullopt;
      offset = (text[pos] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
      pos = text.size();
    } else {
      return std::nullopt;
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s >= 61) return std::nullopt;
  return DaysFromCivil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 +
         static_cast<std::int64_t>(std::floor(s)) - offset;
}

inline std::string FormatTimestamp(std::int64_t epoch) {
  const std::chrono::sys_seconds tp{std::chrono::seconds{epoch}};
  const auto day = std::chrono::floor<std::chrono::days>(tp);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

// ---------------------------------------------------------------------------
// parse_records

struct ParseWarning {
  std::size_t row = 0;  // zero-based data row (header excluded)
  std::string column;
  std::string value;
  std::string message;
};

struct ParseResult {
  std::vector<FieldRecord> records;
  std::vector<ParseWarning> warnings;
};

// Record field name -> CSV header. Fields without an entry are looked up
// under their own name.
using ColumnSchema = std::map<std::string, std::string>;

inline std::vector<std::string> RecordFieldNames() {
  std::vector<std::string> names = {"uuid",       "sample_id",   "collector_id", "latitude",
                                    "longitude",  "gps_accuracy_m", "started_at", "ended_at",
                                    "survey_kind", "photo_count", "expected_photo_count"};
  for (auto m : kMeasurementNames) names.emplace_back(m);
  for (auto m : kMeasurementNames) names.push_back(std::string(m) + "_unit");
  for (auto c : kCategoricalNames) names.emplace_back(c);
  for (auto extra : {"children_under_5", "dataset_origin", "tc_present", "ec_present"}) names.emplace_back(extra);
  return names;
}

inline ColumnSchema ColumnSchemaFromJson(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::kSchema, "column schema must be a JSON object");
  const auto known = RecordFieldNames();
  ColumnSchema schema;
  for (const auto& [field, header] : doc.items()) {
    if (std::find(known.begin(), known.end(), field) == known.end()) {
      throw Error(ErrorKind::kSchema, "column schema names unknown record field '" + field + "'");
    }
    if (!header.is_string()) throw Error(ErrorKind::kSchema, "header for '" + field + "' must be a string");
    schema[field] = header.get<std::string>();
  }
  return schema;
}

namespace detail {

inline std::optional<bool> ParseBinary(std::string_view raw) {
  const std::string v = ToLower(Trim(raw));
  if (v == "1" || v == "true" || v == "yes" || v == "present" || v == "positive" || v == "y") return true;
  if (v == "0" || v == "false" || v == "no" || v == "absent" || v == "negative" || v == "n") return false;
  return std::nullopt;
}

inline std::optional<SurveyKind> ParseSurveyKind(std::string_view raw) {
  std::string v = ToLower(Trim(raw));
  std::replace(v.begin(), v.end(), ' ', '_');
  if (v == "household" || v == "hh") return SurveyKind::kHousehold;
  if (v == "water_body" || v == "waterbody") return SurveyKind::kWaterBody;
  return std::nullopt;
}

inline std::optional<DatasetOrigin> ParseOrigin(std::string_view raw) {
  const std::string v = ToLower(Trim(raw));
  if (v == "set1" || v == "1") return DatasetOrigin::kSet1;
  if (v == "set2" || v == "2") return DatasetOrigin::kSet2;
  return std::nullopt;
}

}  // namespace detail

// Parses survey CSV text into records. Empty cells are missing without
// comment; cells that fail to parse become missing (or their default) with a
// warning each. Missing uuid values are kept as empty strings for QC.
inline ParseResult ParseRecords(std::string_view csv_text, const ColumnSchema& schema = {}) {
  const auto rows = csv::Parse(csv_text);
  if (rows.empty()) throw Error(ErrorKind::kEmptyInput, "CSV input has no header row");
  const auto& header = rows.front();
  std::unordered_map<std::string, std::size_t> header_index;
  for (std::size_t i = 0; i < header.size(); ++i) header_index.emplace(Trim(header[i]), i);

  std::unordered_map<std::string, std::size_t> field_col;
  for (const auto& field : RecordFieldNames()) {
    auto it = schema.find(field);
    const std::string& name = it == schema.end() ? field : it->second;
    auto hit = header_index.find(name);
    if (hit != header_index.end()) field_col.emplace(field, hit->second);
  }
  std::vector<std::string> missing_mandatory;
  for (const std::string field : {"uuid", "survey_kind"}) {
    if (!field_col.contains(field)) {
      auto it = schema.find(field);
      missing_mandatory.push_back(it == schema.end() ? field : it->second);
    }
  }
  if (!missing_mandatory.empty()) {
    std::string names;
    for (const auto& n : missing_mandatory) names += (names.empty() ? "" : ", ") + n;
    throw Error(ErrorKind::kSchema, "missing mandatory columns: " + names);
  }

  ParseResult result;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t data_row = r - 1;
    auto cell = [&](const std::string& field) -> std::optional<std::string> {
      auto it = field_col.find(field);
      if (it == field_col.end() || it->second >= row.size()) return std::nullopt;
      std::string v = Trim(row[it->second]);
      if (v.empty()) return std::nullopt;
      return v;
    };
    auto warn = [&](const std::string& field, const std::string& value, const std::string& message) {
      result.warnings.push_back({data_row, field, value, message});
    };
    auto real = [&](const std::string& field) -> std::optional<double> {
      auto v = cell(field);
      if (!v) return std::nullopt;
      double x = 0;
      if (ParseDouble(*v, x)) return x;
      warn(field, *v, "not a number; treated as missing");
      return std::nullopt;
    };
    auto count = [&](const std::string& field) -> std::optional<int> {
      auto v = cell(field);
      if (!v) return std::nullopt;
      std::int64_t x = 0;
      double d = 0;
      if (ParseInt64(*v, x) && x >= 0) return static_cast<int>(x);
      if (ParseDouble(*v, d) && d >= 0 && d == std::floor(d)) return static_cast<int>(d);
      warn(field, *v, "not a non-negative integer; treated as missing");
      return std::nullopt;
    };
    auto timestamp = [&](const std::string& field) -> std::optional<std::int64_t> {
      auto v = cell(field);
      if (!v) return std::nullopt;
      auto t = ParseTimestamp(*v);
      if (!t) warn(field, *v, "unrecognised timestamp; treated as missing");
      return t;
    };
    auto binary = [&](const std::string& field) -> std::optional<bool> {
      auto v = cell(field);
      if (!v) return std::nullopt;
      auto b = detail::ParseBinary(*v);
      if (!b) warn(field, *v, "not a binary outcome; treated as missing");
      return b;
    };

    FieldRecord rec;
    rec.uuid = cell("uuid").value_or("");
    rec.sample_id = cell("sample_id");
    rec.collector_id = cell("collector_id");
    rec.latitude = real("latitude");
    rec.longitude = real("longitude");
    rec.gps_accuracy_m = real("gps_accuracy_m");
    rec.started_at = timestamp("started_at");
    rec.ended_at = timestamp("ended_at");
    if (auto v = cell("survey_kind")) {
      if (auto kind = detail::ParseSurveyKind(*v)) {
        rec.survey_kind = *kind;
      } else {
        warn("survey_kind", *v, "unknown survey kind; assuming household");
      }
    }
    rec.photo_count = count("photo_count").value_or(0);
    rec.expected_photo_count = count("expected_photo_count").value_or(0);
    for (std::size_t m = 0; m < kMeasurementCount; ++m) {
      const std::string name(kMeasurementNames[m]);
      rec.measurements[m] = real(name);
      rec.unit_tags[m] = cell(name + "_unit").value_or("");
    }
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      rec.categoricals[c] = cell(std::string(kCategoricalNames[c])).value_or("");
    }
    rec.children_under_5 = count("children_under_5");
    if (auto v = cell("dataset_origin")) {
      if (auto origin = detail::ParseOrigin(*v)) {
        rec.dataset_origin = *origin;
      } else {
        warn("dataset_origin", *v, "unknown dataset origin; assuming set1");
      }
    }
    rec.tc_present = binary("tc_present");
    rec.ec_present = binary("ec_present");
    result.records.push_back(std::move(rec));
  }
  return result;
}

// Inverse of ParseRecords for the default (identity) schema. Reals use the
// shortest round-trip decimal form, so parse(write(x)) == x.
inline std::string WriteRecordsCsv(const std::vector<FieldRecord>& records) {
  std::string out;
  csv::AppendRow(out, RecordFieldNames());
  auto real = [](const std::optional<double>& v) { return v ? FormatDouble(*v) : std::string(); };
  auto ts = [](const std::optional<std::int64_t>& v) { return v ? FormatTimestamp(*v) : std::string(); };
  auto binary = [](const std::optional<bool>& v) { return v ? std::string(*v ? "1" : "0") : std::string(); };
  for (const auto& rec : records) {
    csv::Row row = {rec.uuid,
                    rec.sample_id.value_or(""),
                    rec.collector_id.value_or(""),
                    real(rec.latitude),
                    real(rec.longitude),
                    real(rec.gps_accuracy_m),
                    ts(rec.started_at),
                    ts(rec.ended_at),
                    std::string(SurveyKindName(rec.survey_kind)),
                    std::to_string(rec.photo_count),
                    std::to_string(rec.expected_photo_count)};
    for (const auto& m : rec.measurements) row.push_back(real(m));
    for (const auto& u : rec.unit_tags) row.push_back(u);
    for (const auto& c : rec.categoricals) row.push_back(c);
    row.push_back(rec.children_under_5 ? std::to_string(*rec.children_under_5) : "");
    row.emplace_back(DatasetOriginName(rec.dataset_origin));
    row.push_back(binary(rec.tc_present));
    row.push_back(binary(rec.ec_present));
    csv::AppendRow(out, row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// harmonize

// Alias table for categorical spellings plus unit conversion factors.
//
// JSON layout:
//   {"categories": {"treatment": {"boiling treatment": ["Boiled", "BOIL"]}},
//    "units": {"tds_ppm": {"g/L": 1000}}}
// Matching of raw spellings and unit tags is case-insensitive and trims
// whitespace. Canonical labels always map to themselves.
class AliasDictionary {
 public:
  void AddCanonical(Categorical field, std::string_view canonical) {
    AddAlias(field, canonical, canonical);
  }

  void AddAlias(Categorical field, std::string_view raw, std::string_view canonical) {
    auto& table = aliases_[static_cast<std::size_t>(field)];
    const std::string key = ToLower(Trim(raw));
    const std::string value = Trim(canonical);
    auto [it, inserted] = table.emplace(key, value);
    if (!inserted && it->second != value) {
      throw Error(ErrorKind::kDictionary, "alias '" + std::string(raw) + "' for " +
                                              std::string(kCategoricalNames[static_cast<std::size_t>(field)]) +
                                              " maps to both '" + it->second + "' and '" + value + "'");
    }
    if (key != ToLower(value)) AddCanonical(field, value);
    canonical_[static_cast<std::size_t>(field)].insert(value);
  }

  void AddUnit(Measurement m, std::string_view unit, double factor) {
    if (!(factor > 0) || !std::isfinite(factor)) {
      throw Error(ErrorKind::kDictionary, "unit factor for '" + std::string(unit) + "' must be positive");
    }
    auto& table = units_[static_cast<std::size_t>(m)];
    auto [it, inserted] = table.emplace(ToLower(Trim(unit)), factor);
    if (!inserted && it->second != factor) {
      throw Error(ErrorKind::kDictionary, "unit '" + std::string(unit) + "' has conflicting factors");
    }
  }

  bool Covers(Categorical field) const { return !aliases_[static_cast<std::size_t>(field)].empty(); }

  // Canonical label for a raw spelling; "other" when the field is covered
  // but the spelling is unknown; unchanged when the field is not covered.
  std::string Canonicalize(Categorical field, std::string_view raw) const {
    const std::string trimmed = Trim(raw);
    if (trimmed.empty()) return trimmed;
    const auto& table = aliases_[static_cast<std::size_t>(field)];
    if (table.empty()) return trimmed;
    const std::string key = ToLower(trimmed);
    if (key == kOtherCategory) return std::string(kOtherCategory);
    auto it = table.find(key);
    return it == table.end() ? std::string(kOtherCategory) : it->second;
  }

  std::optional<double> UnitFactor(Measurement m, std::string_view unit) const {
    const auto& table = units_[static_cast<std::size_t>(m)];
    auto it = table.find(ToLower(Trim(unit)));
    if (it == table.end()) return std::nullopt;
    return it->second;
  }

  static AliasDictionary FromJson(const nlohmann::json& doc) {
    AliasDictionary dict = WithStandardUnits();
    if (doc.contains("categories")) {
      for (const auto& [field_name, groups] : doc.at("categories").items()) {
        auto field = FindCategorical(field_name);
        if (!field) throw Error(ErrorKind::kDictionary, "unknown categorical field '" + field_name + "'");
        for (const auto& [canonical, raws] : groups.items()) {
          dict.AddCanonical(*field, canonical);
          for (const auto& raw : raws) dict.AddAlias(*field, raw.get<std::string>(), canonical);
        }
      }
    }
    if (doc.contains("units")) {
      for (const auto& [field_name, table] : doc.at("units").items()) {
        auto m = FindMeasurement(field_name);
        if (!m) throw Error(ErrorKind::kDictionary, "unknown measurement '" + field_name + "'");
        for (const auto& [unit, factor] : table.items()) dict.AddUnit(*m, unit, factor.get<double>());
      }
    }
    return dict;
  }

  // Conversions into the canonical units declared on FieldRecord.
  static AliasDictionary WithStandardUnits() {
    AliasDictionary d;
    d.AddUnit(Measurement::kTurbidity, "NTU", 1.0);
    d.AddUnit(Measurement::kTurbidity, "FNU", 1.0);
    for (auto unit : {"ppm", "mg/L", "mg/l"}) d.AddUnit(Measurement::kTds, unit, 1.0);
    d.AddUnit(Measurement::kTds, "g/L", 1000.0);
    d.AddUnit(Measurement::kTds, "ppt", 1000.0);
    d.AddUnit(Measurement::kConductivity, "uS/cm", 1.0);
    d.AddUnit(Measurement::kConductivity, "\xC2\xB5S/cm", 1.0);
    d.AddUnit(Measurement::kConductivity, "mS/cm", 1000.0);
    d.AddUnit(Measurement::kConductivity, "S/m", 10000.0);
    d.AddUnit(Measurement::kPh, "pH", 1.0);
    d.AddUnit(Measurement::kOrp, "mV", 1.0);
    d.AddUnit(Measurement::kOrp, "V", 1000.0);
    for (auto m : {Measurement::kHardness, Measurement::kAlkalinity}) {
      d.AddUnit(m, "mg/L", 1.0);
      d.AddUnit(m, "ppm", 1.0);
      d.AddUnit(m, "g/L", 1000.0);
    }
    return d;
  }

 private:
  std::array<std::map<std::string, std::string>, kCategoricalCount> aliases_;
  std::array<std::set<std::string>, kCategoricalCount> canonical_;
  std::array<std::map<std::string, double>, kMeasurementCount> units_;
};

// Canonical spellings used across the toolkit; the CLI falls back to this
// table when no dictionary file is given.
inline AliasDictionary DefaultDictionary() {
  AliasDictionary d = AliasDictionary::WithStandardUnits();
  const std::vector<std::pair<std::string, std::vector<std::string>>> treatment = {
      {"boiling treatment", {"boiled", "boiling", "boil", "boil water"}},
      {"no treatment", {"none", "no", "untreated", "no hh treatment", "nothing"}},
      {"HH treatment", {"hh", "household treatment", "filter", "filtration", "candle filter", "cloth filter",
                        "chlorination", "chlorine", "uv"}},
      {std::string(kRoTreatment), {"ro", "reverse osmosis", "ro purifier", "ro treated"}},
  };
  for (const auto& [canonical, raws] : treatment) {
    d.AddCanonical(Categorical::kTreatment, canonical);
    for (const auto& raw : raws) d.AddAlias(Categorical::kTreatment, raw, canonical);
  }
  const std::vector<std::pair<std::string, std::vector<std::string>>> source = {
      {"municipal supply", {"municipal", "metro water", "piped", "tap", "corporation"}},
      {"bore well", {"borewell", "bore-well", "tube well"}},
      {"public tap", {"street tap", "public stand post"}},
      {"well", {"open well", "dug well"}},
      {"river", {"stream", "lake", "pond"}},
      {"packaged water", {"can", "bubble top", "bottled", "water can"}},
      {"tanker", {"lorry", "water tanker"}},
  };
  for (const auto& [canonical, raws] : source) {
    d.AddCanonical(Categorical::kSourceType, canonical);
    for (const auto& raw : raws) d.AddAlias(Categorical::kSourceType, raw, canonical);
  }
  return d;
}

// Maps categorical spellings to canonical labels and converts tagged
// measurements into canonical units. Record count and order are preserved.
inline std::vector<FieldRecord> Harmonize(std::vector<FieldRecord> records, const AliasDictionary& dictionary) {
  for (auto& rec : records) {
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      rec.categoricals[c] = dictionary.Canonicalize(static_cast<Categorical>(c), rec.categoricals[c]);
    }
    for (std::size_t m = 0; m < kMeasurementCount; ++m) {
      if (rec.unit_tags[m].empty()) continue;
      const auto factor = dictionary.UnitFactor(static_cast<Measurement>(m), rec.unit_tags[m]);
      if (!factor) {
        throw Error(ErrorKind::kDictionary, "no conversion from unit '" + rec.unit_tags[m] + "' for " +
                                                std::string(kMeasurementNames[m]));
      }
      if (rec.measurements[m]) *rec.measurements[m] *= *factor;
      rec.unit_tags[m].clear();
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// clean / screen_outliers

enum class RemovalReason { kDuplicate, kImplausibleValue, kRoTreated, kMissingOutcome, kOutlier };

inline std::string_view RemovalReasonName(RemovalReason reason) {
  switch (reason) {
    case RemovalReason::kDuplicate: return "duplicate";
    case RemovalReason::kImplausibleValue: return "implausible_value";
    case RemovalReason::kRoTreated: return "ro_treated";
    case RemovalReason::kMissingOutcome: return "missing_outcome";
    case RemovalReason::kOutlier: return "outlier";
  }
  return "unknown";
}

struct Removal {
  std::size_t row = 0;  // index into the list handed to the operation
  std::string uuid;
  RemovalReason reason = RemovalReason::kDuplicate;
};

struct CleanLog {
  std::vector<Removal> removed;
  std::size_t kept_count = 0;

  // One JSON object per line: {"row": int, "uuid": string, "reason": string}.
  std::string ToJsonLines() const {
    std::string out;
    for (const auto& r : removed) {
      nlohmann::json line = {{"row", r.row}, {"uuid", r.uuid}, {"reason", RemovalReasonName(r.reason)}};
      out += line.dump();
      out.push_back('\n');
    }
    return out;
  }
};

// Closed plausibility interval per measurement, canonical units.
struct PlausibilityBounds {
  std::array<std::pair<double, double>, kMeasurementCount> range = {{
      {0.0, 4000.0},      // turbidity NTU
      {0.0, 50000.0},     // TDS ppm
      {0.0, 80000.0},     // EC uS/cm
      {0.0, 14.0},        // pH
      {-2000.0, 2000.0},  // ORP mV
      {0.0, 10000.0},     // hardness mg/L
      {0.0, 10000.0},     // alkalinity mg/L
  }};

  bool Contains(Measurement m, double v) const {
    const auto& [lo, hi] = range[static_cast<std::size_t>(m)];
    return v >= lo && v <= hi;
  }

  static PlausibilityBounds FromJson(const nlohmann::json& doc) {
    PlausibilityBounds b;
    for (const auto& [name, interval] : doc.items()) {
      auto m = FindMeasurement(name);
      if (!m) throw Error(ErrorKind::kParameter, "unknown measurement '" + name + "' in bounds");
      if (!interval.is_array() || interval.size() != 2) {
        throw Error(ErrorKind::kParameter, "bounds for '" + name + "' must be [low, high]");
      }
      const double lo = interval[0].get<double>();
      const double hi = interval[1].get<double>();
      if (!(lo <= hi)) throw Error(ErrorKind::kParameter, "bounds for '" + name + "' are inverted");
      b.range[static_cast<std::size_t>(*m)] = {lo, hi};
    }
    return b;
  }
};

struct CleanResult {
  std::vector<FieldRecord> records;
  CleanLog log;
};

namespace detail {

// Every field except the uuid, rendered exactly; equal keys mean a
// re-submission of the same survey.
inline std::string ContentKey(const FieldRecord& rec) {
  FieldRecord copy = rec;
  copy.uuid.clear();
  std::string text = WriteRecordsCsv({copy});
  return text.substr(text.find('\n') + 1);
}

}  // namespace detail

// Technical cleaning. Each removed record is logged with the first reason
// that applies, checked in the order duplicate, implausible value, RO
// treatment, missing outcome.
inline CleanResult Clean(const std::vector<FieldRecord>& records, const PlausibilityBounds& bounds = {}) {
  CleanResult out;
  std::unordered_set<std::string> seen_uuids;
  std::unordered_set<std::string> seen_content;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    bool duplicate = false;
    if (!rec.uuid.empty() && !seen_uuids.insert(rec.uuid).second) duplicate = true;
    if (!seen_content.insert(detail::ContentKey(rec)).second) duplicate = true;

    std::optional<RemovalReason> reason;
    if (duplicate) {
      reason = RemovalReason::kDuplicate;
    } else {
      for (std::size_t m = 0; m < kMeasurementCount && !reason; ++m) {
        if (rec.measurements[m] && !bounds.Contains(static_cast<Measurement>(m), *rec.measurements[m])) {
          reason = RemovalReason::kImplausibleValue;
        }
      }
      if (!reason && ToLower(rec.categorical(Categorical::kTreatment)) == ToLower(kRoTreatment)) {
        reason = RemovalReason::kRoTreated;
      }
      // Both stages need their label, so a record missing either is unusable.
      if (!reason && (!rec.tc_present || !rec.ec_present)) reason = RemovalReason::kMissingOutcome;
    }
    if (reason) {
      out.log.removed.push_back({i, rec.uuid, *reason});
    } else {
      out.records.push_back(rec);
    }
  }
  out.log.kept_count = out.records.size();
  return out;
}

// Single-pass z-score screen over the physicochemical measurements. Column
// means and sample SDs come from the non-missing values of the input list;
// columns with fewer than two values or zero SD are skipped.
inline CleanResult ScreenOutliers(const std::vector<FieldRecord>& records, double z_threshold = 4.0) {
  if (!(z_threshold > 0)) throw Error(ErrorKind::kParameter, "z_threshold must be positive");
  std::array<double, kMeasurementCount> mean{};
  std::array<double, kMeasurementCount> sd{};
  for (std::size_t m = 0; m < kMeasurementCount; ++m) {
    std::vector<double> values;
    for (const auto& rec : records) {
      if (rec.measurements[m]) values.push_back(*rec.measurements[m]);
    }
    mean[m] = values.size() >= 2 ? Mean(values) : 0.0;
    sd[m] = values.size() >= 2 ? SampleSd(values) : 0.0;
  }
  CleanResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    bool outlier = false;
    for (std::size_t m = 0; m < kMeasurementCount && !outlier; ++m) {
      if (!rec.measurements[m] || !(sd[m] > 0)) continue;
      outlier = std::abs(*rec.measurements[m] - mean[m]) / sd[m] > z_threshold;
    }
    if (outlier) {
      out.log.removed.push_back({i, rec.uuid, RemovalReason::kOutlier});
    } else {
      out.records.push_back(rec);
    }
  }
  out.log.kept_count = out.records.size();
  return out;
}

// ---------------------------------------------------------------------------
// encode

// Column layout fixed at training time; prediction-time rows are encoded
// against it so unseen categories become all-zero one-hot groups.
struct EncodingSchema {
  std::vector<Column> columns;
  // For each categorical field, the sorted categories seen at fit time.
  std::array<std::vector<std::string>, kCategoricalCount> categories;

  nlohmann::json ToJson() const {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : columns) cols.push_back({{"name", c.name}, {"kind", ColumnKindName(c.kind)}});
    nlohmann::json cats = nlohmann::json::object();
    for (std::size_t i = 0; i < kCategoricalCount; ++i) cats[std::string(kCategoricalNames[i])] = categories[i];
    return {{"columns", cols}, {"categories", cats}};
  }

  static EncodingSchema FromJson(const nlohmann::json& doc) {
    EncodingSchema s;
    for (const auto& c : doc.at("columns")) {
      s.columns.push_back({c.at("name").get<std::string>(), ParseColumnKind(c.at("kind").get<std::string>())});
    }
    for (std::size_t i = 0; i < kCategoricalCount; ++i) {
      const std::string name(kCategoricalNames[i]);
      if (doc.at("categories").contains(name)) {
        s.categories[i] = doc.at("categories").at(name).get<std::vector<std::string>>();
      }
    }
    return s;
  }
};

inline constexpr std::string_view kOriginColumn = "dataset_origin=set2";

inline std::string OneHotName(Categorical field, std::string_view category) {
  return std::string(kCategoricalNames[static_cast<std::size_t>(field)]) + "=" + std::string(category);
}

// Builds the column layout from the records: the seven measurements
// (physicochemical), then every contextual column; each kind sorted
// lexicographically by name.
inline EncodingSchema BuildEncodingSchema(const std::vector<FieldRecord>& records) {
  EncodingSchema schema;
  std::vector<std::string> physico(kMeasurementNames.begin(), kMeasurementNames.end());
  std::sort(physico.begin(), physico.end());
  for (auto& name : physico) schema.columns.push_back({name, ColumnKind::kPhysicochemical});

  std::vector<std::string> contextual = {"children_under_5", std::string(kOriginColumn), "latitude", "longitude"};
  for (std::size_t c = 0; c < kCategoricalCount; ++c) {
    std::set<std::string> seen;
    for (const auto& rec : records) {
      if (!rec.categoricals[c].empty()) seen.insert(rec.categoricals[c]);
    }
    schema.categories[c].assign(seen.begin(), seen.end());
    for (const auto& cat : seen) contextual.push_back(OneHotName(static_cast<Categorical>(c), cat));
  }
  std::sort(contextual.begin(), contextual.end());
  for (auto& name : contextual) schema.columns.push_back({name, ColumnKind::kContextual});
  return schema;
}

inline FeatureMatrix EncodeFeatures(const std::vector<FieldRecord>& records, const EncodingSchema& schema) {
  FeatureMatrix matrix(schema.columns, records.size());
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) col_of.emplace(schema.columns[c].name, c);
  auto put = [&](std::size_t r, const std::string& name, const std::optional<double>& v) {
    auto it = col_of.find(name);
    if (it == col_of.end()) return;
    if (v) {
      matrix.Set(r, it->second, *v);
    } else {
      matrix.SetMissing(r, it->second);
    }
  };
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    matrix.set_row_id(r, rec.uuid);
    for (std::size_t m = 0; m < kMeasurementCount; ++m) put(r, std::string(kMeasurementNames[m]), rec.measurements[m]);
    put(r, "latitude", rec.latitude);
    put(r, "longitude", rec.longitude);
    put(r, "children_under_5",
        rec.children_under_5 ? std::optional<double>(*rec.children_under_5) : std::nullopt);
    put(r, std::string(kOriginColumn), rec.dataset_origin == DatasetOrigin::kSet2 ? 1.0 : 0.0);
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      for (const auto& cat : schema.categories[c]) {
        put(r, OneHotName(static_cast<Categorical>(c), cat), rec.categoricals[c] == cat ? 1.0 : 0.0);
      }
    }
  }
  return matrix;
}

struct Encoded {
  FeatureMatrix matrix;
  Labels labels;
  EncodingSchema schema;
};

// One-hot encodes cleaned records. Row order follows the input.
inline Encoded Encode(const std::vector<FieldRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::kEmptyInput, "no records to encode");
  Encoded out;
  out.schema = BuildEncodingSchema(records);
  out.matrix = EncodeFeatures(records, out.schema);
  out.labels.tc.reserve(records.size());
  out.labels.ec.reserve(records.size());
  for (const auto& rec : records) {
    if (!rec.tc_present || !rec.ec_present) {
      throw Error(ErrorKind::kSchema, "record '" + rec.uuid + "' lacks an outcome label; clean before encoding");
    }
    out.labels.tc.push_back(*rec.tc_present ? 1 : 0);
    out.labels.ec.push_back(*rec.ec_present ? 1 : 0);
  }
  return out;
}

}  // namespace wqscreen
