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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "davi/data_io.hpp"
#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/raster_io.hpp"

namespace davi {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept {
    return a += b;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(const BinaryMap& pred, const BinaryMap& gt) {
  require_same_shape(pred, gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

enum class MetricScope { kPositiveClass, kMacro };
enum class MetricLevel { kPerPair, kPooled };

inline std::string to_string(MetricScope s) {
  return s == MetricScope::kMacro ? "macro" : "positive-class";
}
inline std::string to_string(MetricLevel l) { return l == MetricLevel::kPooled ? "pooled" : "per-pair"; }

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  MetricScope scope = MetricScope::kPositiveClass;
  MetricLevel level = MetricLevel::kPooled;
  /// Names of ratios whose denominator was zero (reported as 0).
  std::vector<std::string> degenerate_flags;
  ConfusionCounts counts;

  nlohmann::json to_json() const {
    return {{"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"accuracy", accuracy},
            {"scope", to_string(scope)},
            {"level", to_string(level)},
            {"degenerate_flags", degenerate_flags},
            {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}}}};
  }
};

namespace detail {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline ClassScores class_scores(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                                const std::string& suffix, std::vector<std::string>& flags) {
  ClassScores s;
  if (tp + fp > 0) {
    s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  } else {
    flags.push_back("precision" + suffix);
  }
  if (tp + fn > 0) {
    s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    flags.push_back("recall" + suffix);
  }
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  } else {
    flags.push_back("f1" + suffix);
  }
  return s;
}

}  // namespace detail

/// Positive-class or macro (unweighted mean over classes 0 and 1) scores.
/// Undefined ratios are reported as 0 and named in degenerate_flags.
inline MetricsReport metrics(const ConfusionCounts& c, MetricScope scope,
                             MetricLevel level = MetricLevel::kPooled) {
  MetricsReport r;
  r.scope = scope;
  r.level = level;
  r.counts = c;
  if (c.total() == 0) throw ValidationError("metrics: no evaluated pixels");
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (scope == MetricScope::kPositiveClass) {
    const auto s = detail::class_scores(c.tp, c.fp, c.fn, "", r.degenerate_flags);
    r.precision = s.precision;
    r.recall = s.recall;
    r.f1 = s.f1;
  } else {
    const auto pos = detail::class_scores(c.tp, c.fp, c.fn, "/class1", r.degenerate_flags);
    const auto neg = detail::class_scores(c.tn, c.fn, c.fp, "/class0", r.degenerate_flags);
    r.precision = 0.5 * (pos.precision + neg.precision);
    r.recall = 0.5 * (pos.recall + neg.recall);
    r.f1 = 0.5 * (pos.f1 + neg.f1);
  }
  return r;
}

struct PairEvaluation {
  std::string id;
  MetricsReport positive;
  MetricsReport macro;
};

struct EvaluationReport {
  MetricsReport pooled_positive;
  MetricsReport pooled_macro;
  std::vector<PairEvaluation> pairs;
  std::vector<std::string> missing_predictions;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pooled"] = {{"positive", pooled_positive.to_json()}, {"macro", pooled_macro.to_json()}};
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs) {
      j["pairs"].push_back({{"id", p.id}, {"positive", p.positive.to_json()}, {"macro", p.macro.to_json()}});
    }
    j["missing_predictions"] = missing_predictions;
    return j;
  }
};

/// Aggregates per-pair confusion counts into pooled reports.
inline EvaluationReport summarize(const std::vector<std::pair<std::string, ConfusionCounts>>& per_pair,
                                  std::vector<std::string> missing = {}) {
  if (per_pair.empty()) throw ValidationError("evaluation: no pairs to evaluate");
  EvaluationReport rep;
  ConfusionCounts pooled;
  for (const auto& [id, c] : per_pair) {
    pooled += c;
    rep.pairs.push_back({id, metrics(c, MetricScope::kPositiveClass, MetricLevel::kPerPair),
                         metrics(c, MetricScope::kMacro, MetricLevel::kPerPair)});
  }
  rep.pooled_positive = metrics(pooled, MetricScope::kPositiveClass);
  rep.pooled_macro = metrics(pooled, MetricScope::kMacro);
  rep.missing_predictions = std::move(missing);
  return rep;
}

/// Predictions are binary rasters at <pred_dir>/<id>.png.
inline EvaluationReport evaluate_run(const std::filesystem::path& pred_dir,
                                     const DatasetManifest& manifest, bool strict = true) {
  if (!manifest.any_ground_truth()) {
    throw ValidationError("evaluate: no ground truth in manifest");
  }
  if (!std::filesystem::is_directory(pred_dir)) {
    throw UpstreamMissing("predictions directory not found: " + pred_dir.string());
  }
  std::vector<std::pair<std::string, ConfusionCounts>> per_pair;
  std::vector<std::string> missing;
  for (const auto& rec : manifest.pairs) {
    if (!rec.gt) continue;
    const auto path = pred_dir / (rec.id + ".png");
    if (!std::filesystem::exists(path)) {
      missing.push_back(rec.id);
      continue;
    }
    per_pair.emplace_back(rec.id, confusion(read_binary_map(path), load_ground_truth(rec)));
  }
  if (strict && !missing.empty()) {
    std::string msg = "evaluate: missing predictions for:";
    for (const auto& id : missing) msg += " " + id;
    throw UpstreamMissing(msg);
  }
  return summarize(per_pair, std::move(missing));
}

}  // namespace davi
