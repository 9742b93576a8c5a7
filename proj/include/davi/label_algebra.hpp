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

// Pixel-wise pseudo-label algebra and the two loss functionals used to adapt
// a change detector. Everything here is pure: no state, no allocation beyond
// the returned grid.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "davi/errors.hpp"
#include "davi/grid.hpp"

namespace davi {

/// Image-level change presence bit derived from a binary change map.
enum class CoarseLabel : std::uint8_t { kAbsent = 0, kPresent = 1 };

/// Which form of the entropy / cross-entropy functional to evaluate.
///   kSingleTerm: -sum p ln p  and  -sum m ln p
///   kBinary:     two-class forms that also score (1-p) and (1-m)
enum class LossVariant { kSingleTerm, kBinary };

inline constexpr double kLogClamp = 1e-7;

inline std::string to_string(LossVariant v) {
  return v == LossVariant::kBinary ? "binary" : "single_term";
}

inline LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "binary") return LossVariant::kBinary;
  if (s == "single_term") return LossVariant::kSingleTerm;
  throw ValidationError("unknown loss variant '" + s + "' (expected binary|single_term)");
}

/// Throws ValidationError unless every value is finite and inside [0,1].
template <typename Tag>
void validate_unit_interval(const TaggedGrid<float, Tag>& map, const char* what) {
  for (float v : map) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite value");
    if (v < 0.0f || v > 1.0f) throw ValidationError(std::string(what) + ": value outside [0,1]");
  }
}

/// 1 where value >= threshold (inclusive), else 0.
template <typename Tag>
BinaryMap binarize(const TaggedGrid<float, Tag>& map, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ValidationError("binarize: threshold must lie in [0,1]");
  }
  // Compare in the storage precision so a stored 0.5f meets a 0.5 threshold.
  const auto t = static_cast<float>(threshold);
  BinaryMap out(map.height(), map.width());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const float v = map[i];
    if (!std::isfinite(v)) throw ValidationError("binarize: non-finite probability");
    out[i] = v >= t ? 1 : 0;
  }
  return out;
}

inline DiffMap clipped_confidence_diff(const ConfidenceMap& pre, const ConfidenceMap& post) {
  require_same_shape(pre, post, "clipped_confidence_diff");
  DiffMap out(pre.height(), pre.width());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::max(0.0f, pre[i] - post[i]);
  return out;
}

/// Pixel-wise logical OR.
inline BinaryMap combine_max(const BinaryMap& a, const BinaryMap& b) {
  require_same_shape(a, b, "combine_max");
  BinaryMap out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::max(a[i], b[i]);
  return out;
}

/// Adopts the target model's positive decision where its cross-view spread is
/// below tau_r; every other pixel keeps the source model's value.
inline BinaryMap consistency_update(const BinaryMap& mean_binary, const StdMap& spread,
                                    const BinaryMap& source_binary, double tau_r) {
  require_same_shape(mean_binary, spread, "consistency_update");
  require_same_shape(mean_binary, source_binary, "consistency_update");
  if (!(tau_r >= 0.0) || !std::isfinite(tau_r)) {
    throw ValidationError("consistency_update: tau_r must be a finite non-negative value");
  }
  BinaryMap out(source_binary);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (static_cast<double>(spread[i]) < tau_r && mean_binary[i] == 1) out[i] = 1;
  }
  return out;
}

struct MeanStd {
  ProbabilityMap mean;
  StdMap stddev;
};

/// Pixel-wise mean and population standard deviation over K >= 2 views.
inline MeanStd mean_std(std::span<const ProbabilityMap> maps) {
  if (maps.size() < 2) throw ValidationError("mean_std: needs at least two maps");
  const auto& first = maps.front();
  for (const auto& m : maps) require_same_shape(first, m, "mean_std");
  const double k = static_cast<double>(maps.size());
  MeanStd out{ProbabilityMap(first.height(), first.width()), StdMap(first.height(), first.width())};
  for (std::size_t i = 0; i < first.size(); ++i) {
    double sum = 0.0;
    for (const auto& m : maps) sum += m[i];
    const double mean = sum / k;
    double sq = 0.0;
    for (const auto& m : maps) sq += (m[i] - mean) * (m[i] - mean);
    out.mean[i] = static_cast<float>(std::clamp(mean, 0.0, 1.0));
    out.stddev[i] = static_cast<float>(std::sqrt(sq / k));
  }
  return out;
}

inline CoarseLabel coarse_label(const BinaryMap& source_binary) {
  for (auto v : source_binary) {
    if (v != 0) return CoarseLabel::kPresent;
  }
  return CoarseLabel::kAbsent;
}

inline BinaryMap mask_fine(CoarseLabel q, const BinaryMap& fine) {
  if (q == CoarseLabel::kPresent) return fine;
  return BinaryMap(fine.height(), fine.width(), std::uint8_t{0});
}

inline std::size_t count_positive(const BinaryMap& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Loss functionals. Probabilities are clamped to [kLogClamp, 1 - kLogClamp]
// before any logarithm. Values are sums over pixels; callers divide.

namespace detail {
inline double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }
}  // namespace detail

inline double pixel_entropy(double p, LossVariant variant) {
  const double c = detail::clamp_prob(p);
  double h = -c * std::log(c);
  if (variant == LossVariant::kBinary) h -= (1.0 - c) * std::log(1.0 - c);
  return h;
}

inline double pixel_cross_entropy(double target, double p, LossVariant variant) {
  const double c = detail::clamp_prob(p);
  double ce = -target * std::log(c);
  if (variant == LossVariant::kBinary) ce -= (1.0 - target) * std::log(1.0 - c);
  return ce;
}

template <typename T>
double prediction_entropy(std::span<const T> probs, LossVariant variant) {
  double total = 0.0;
  for (T p : probs) total += pixel_entropy(static_cast<double>(p), variant);
  return total;
}

inline double prediction_entropy(const ProbabilityMap& p, LossVariant variant) {
  return prediction_entropy<float>(p.values(), variant);
}

template <typename T>
double pseudo_cross_entropy(std::span<const std::uint8_t> labels, std::span<const T> probs,
                            LossVariant variant) {
  if (labels.size() != probs.size()) throw ShapeMismatch("pseudo_cross_entropy: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += pixel_cross_entropy(labels[i], static_cast<double>(probs[i]), variant);
  }
  return total;
}

inline double pseudo_cross_entropy(const BinaryMap& labels, const ProbabilityMap& p,
                                   LossVariant variant) {
  require_same_shape(labels, p, "pseudo_cross_entropy");
  return pseudo_cross_entropy<float>(labels.values(), p.values(), variant);
}

// Derivatives with respect to the pre-sigmoid logit z, p = sigmoid(z). These
// are exact derivatives of the unclamped functionals, which coincide with the
// clamped ones whenever p lies strictly inside the clamp band.

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double entropy_logit_grad(double z, double p, LossVariant variant) {
  const double dp_dz = p * (1.0 - p);
  if (variant == LossVariant::kBinary) return -z * dp_dz;
  return -(log_sigmoid(z) + 1.0) * dp_dz;
}

inline double cross_entropy_logit_grad(double target, double p, LossVariant variant) {
  if (variant == LossVariant::kBinary) return p - target;
  return -target * (1.0 - p);
}

}  // namespace davi
