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

#include <bit>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wqscreen/common.hpp"

namespace wqscreen {

enum class ColumnKind { kPhysicochemical, kContextual, kAuxiliary };

inline std::string_view ColumnKindName(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kPhysicochemical: return "physicochemical";
    case ColumnKind::kContextual: return "contextual";
    case ColumnKind::kAuxiliary: return "auxiliary";
  }
  return "unknown";
}

inline ColumnKind ParseColumnKind(std::string_view name) {
  if (name == "physicochemical") return ColumnKind::kPhysicochemical;
  if (name == "contextual") return ColumnKind::kContextual;
  if (name == "auxiliary") return ColumnKind::kAuxiliary;
  throw Error(ErrorKind::kSchema, "unknown column kind '" + std::string(name) + "'");
}

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::kContextual;

  bool operator==(const Column&) const = default;
};

// Dense row-major design matrix. Missing cells hold NaN and are flagged in
// the parallel mask; the mask is authoritative.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  FeatureMatrix(std::vector<Column> columns, std::size_t rows)
      : columns_(std::move(columns)),
        rows_(rows),
        values_(rows * columns_.size(), 0.0),
        missing_(rows * columns_.size(), 0),
        row_ids_(rows) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return columns_.size(); }
  bool empty() const { return rows_ == 0 || columns_.empty(); }

  const std::vector<Column>& columns() const { return columns_; }
  const Column& column(std::size_t c) const { return columns_.at(c); }

  std::optional<std::size_t> FindColumn(std::string_view name) const {
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (columns_[c].name == name) return c;
    }
    return std::nullopt;
  }

  double value(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  bool missing(std::size_t r, std::size_t c) const { return missing_[r * cols() + c] != 0; }

  void Set(std::size_t r, std::size_t c, double v) {
    values_[r * cols() + c] = v;
    missing_[r * cols() + c] = 0;
  }

  void SetMissing(std::size_t r, std::size_t c) {
    values_[r * cols() + c] = std::numeric_limits<double>::quiet_NaN();
    missing_[r * cols() + c] = 1;
  }

  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }
  std::span<const std::uint8_t> row_missing(std::size_t r) const {
    return {missing_.data() + r * cols(), cols()};
  }

  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint8_t>& missing_mask() const { return missing_; }

  const std::vector<std::string>& row_ids() const { return row_ids_; }
  void set_row_id(std::size_t r, std::string id) { row_ids_.at(r) = std::move(id); }

  FeatureMatrix SelectRows(std::span<const std::size_t> indices) const {
    FeatureMatrix out(columns_, indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::size_t src = indices[i];
      std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(src * cols()), cols(),
                  out.values_.begin() + static_cast<std::ptrdiff_t>(i * cols()));
      std::copy_n(missing_.begin() + static_cast<std::ptrdiff_t>(src * cols()), cols(),
                  out.missing_.begin() + static_cast<std::ptrdiff_t>(i * cols()));
      out.row_ids_[i] = row_ids_[src];
    }
    return out;
  }

  FeatureMatrix SelectColumns(std::span<const std::size_t> indices) const {
    std::vector<Column> cols_out;
    cols_out.reserve(indices.size());
    for (std::size_t c : indices) cols_out.push_back(columns_.at(c));
    FeatureMatrix out(std::move(cols_out), rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t j = 0; j < indices.size(); ++j) {
        if (missing(r, indices[j])) {
          out.SetMissing(r, j);
        } else {
          out.Set(r, j, value(r, indices[j]));
        }
      }
    }
    out.row_ids_ = row_ids_;
    return out;
  }

  // Returns a copy with one extra column; `missing` may be empty (no missing).
  FeatureMatrix WithColumn(Column column, std::span<const double> col_values,
                           std::span<const std::uint8_t> col_missing = {}) const {
    if (col_values.size() != rows_) {
      throw Error(ErrorKind::kSchema, "appended column '" + column.name + "' has " +
                                          std::to_string(col_values.size()) + " rows, expected " +
                                          std::to_string(rows_));
    }
    std::vector<Column> cols_out = columns_;
    cols_out.push_back(std::move(column));
    FeatureMatrix out(std::move(cols_out), rows_);
    const std::size_t w = out.cols();
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols(); ++c) {
        out.values_[r * w + c] = value(r, c);
        out.missing_[r * w + c] = missing_[r * cols() + c];
      }
      if (!col_missing.empty() && col_missing[r]) {
        out.SetMissing(r, w - 1);
      } else {
        out.Set(r, w - 1, col_values[r]);
      }
    }
    out.row_ids_ = row_ids_;
    return out;
  }

  bool BitwiseEqual(const FeatureMatrix& other) const {
    if (columns_ != other.columns_ || rows_ != other.rows_ || row_ids_ != other.row_ids_) {
      return false;
    }
    if (missing_ != other.missing_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (missing_[i]) continue;
      if (std::bit_cast<std::uint64_t>(values_[i]) != std::bit_cast<std::uint64_t>(other.values_[i])) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> missing_;
  std::vector<std::string> row_ids_;
};

// Binary outcome vectors aligned with FeatureMatrix rows.
struct Labels {
  std::vector<int> tc;
  std::vector<int> ec;
};

}  // namespace wqscreen
