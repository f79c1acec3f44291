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
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wqscreen/common.hpp"

namespace wqscreen {

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified holdout split.
//
// The total test size is ceil(n * test_fraction); it is distributed across
// the two classes by largest remainder of the exact per-class quotas, so each
// class contributes floor or ceil of its own quota and the test prevalence is
// within 1/test_count of the overall prevalence. Ties in the remainders go to
// the positive class. Within a class the held-out rows are a seeded shuffle.
inline SplitIndices StratifiedSplit(std::span<const int> labels, double test_fraction,
                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::kParameter, "test_fraction must lie in (0, 1)");
  }
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw Error(ErrorKind::kParameter, "labels must be 0 or 1");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw Error(ErrorKind::kStratification, "both classes must be present to stratify");
  }
  const double n = static_cast<double>(labels.size());
  // The epsilon keeps exact products such as 0.15 * 80 from rounding up.
  auto total_test = static_cast<std::size_t>(std::ceil(n * test_fraction - 1e-9));
  total_test = std::clamp<std::size_t>(total_test, 1, labels.size() - 1);

  std::array<std::size_t, 2> take{};
  std::array<double, 2> remainder{};
  std::size_t allocated = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    const double quota = static_cast<double>(by_class[k].size()) * static_cast<double>(total_test) / n;
    take[k] = static_cast<std::size_t>(std::floor(quota + 1e-12));
    remainder[k] = quota - static_cast<double>(take[k]);
    allocated += take[k];
  }
  std::array<std::size_t, 2> order = {1, 0};
  if (remainder[0] > remainder[1]) order = {0, 1};
  for (std::size_t j = 0; allocated < total_test; j = (j + 1) % 2) {
    const std::size_t k = order[j];
    if (take[k] < by_class[k].size()) {
      ++take[k];
      ++allocated;
    }
  }

  Rng rng(seed);
  SplitIndices out;
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<std::size_t> members = by_class[k];
    rng.Shuffle(members);
    out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[k]));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(take[k]), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace wqscreen
