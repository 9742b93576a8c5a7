// Copyright 2026 The DAVI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Chooses the threshold that binarizes segmenter confidence differences so
// they agree best (pooled F1) with the source model's binary change maps
// across the whole target set. Ties go to the smallest candidate.

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "davi/errors.hpp"
#include "davi/evaluation.hpp"
#include "davi/grid.hpp"
#include "davi/label_algebra.hpp"

namespace davi {

struct ThresholdCandidate {
  double threshold = 0.0;
  double f1 = 0.0;
};

struct ThresholdSearchResult {
  double tau_v = 0.0;
  double best_f1 = 0.0;
  std::vector<ThresholdCandidate> grid;

  nlohmann::json to_json() const {
    nlohmann::json j{{"tau_v", tau_v}, {"best_f1", best_f1}, {"grid", nlohmann::json::array()}};
    for (const auto& c : grid) j["grid"].push_back({{"candidate", c.threshold}, {"f1", c.f1}});
    return j;
  }
};

/// 0.05, 0.10, ..., 0.95.
inline std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(k / 20.0);
  return g;
}

/// F1 of `candidate` against `reference`, from pooled counts.
inline double pooled_f1(const ConfusionCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline ThresholdSearchResult search_tau(std::span<const DiffMap> diff_maps,
                                        std::span<const BinaryMap> reference_maps,
                                        std::span<const double> grid) {
  if (diff_maps.empty()) throw ValidationError("search_tau: no maps");
  if (diff_maps.size() != reference_maps.size()) {
    throw ValidationError("search_tau: diff and reference lists differ in length");
  }
  if (grid.empty()) throw ValidationError("search_tau: empty candidate grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw ValidationError("search_tau: grid value outside [0,1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw ValidationError("search_tau: grid must be strictly increasing");
    }
  }
  bool any_reference = false;
  for (std::size_t i = 0; i < diff_maps.size(); ++i) {
    require_same_shape(diff_maps[i], reference_maps[i], "search_tau");
    any_reference = any_reference || count_positive(reference_maps[i]) > 0;
  }
  if (!any_reference) {
    throw ValidationError("search_tau: degenerate reference (source maps are empty across the dataset)");
  }

  ThresholdSearchResult out;
  out.grid.reserve(grid.size());
  bool first = true;
  for (double t : grid) {
    ConfusionCounts pooled;
    for (std::size_t i = 0; i < diff_maps.size(); ++i) {
      pooled += confusion(binarize(diff_maps[i], t), reference_maps[i]);
    }
    const double f1 = pooled_f1(pooled);
    out.grid.push_back({t, f1});
    if (first || f1 > out.best_f1) {
      out.tau_v = t;
      out.best_f1 = f1;
      first = false;
    }
  }
  return out;
}

inline ThresholdSearchResult search_tau(std::span<const DiffMap> diff_maps,
                                        std::span<const BinaryMap> reference_maps) {
  const auto g = default_tau_grid();
  return search_tau(diff_maps, reference_maps, g);
}

}  // namespace davi
