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

// Test-time adaptation of a change detector on unlabeled target pairs.
//
// Step 1 runs once and is frozen afterwards:
//   M0    = binarize(f0(pair), 0.5)
//   diff  = max(0, seg(pre) - seg(post))
//   tau_v = search over the whole set
//   MV    = binarize(diff, tau_v)
//   q     = any(M0)
//
// Step 2 runs for every pair in every iteration:
//   P, P' = f(pair), f(augmented pair)
//   U, S  = binarize(mean(P, P'), 0.5), std(P, P')
//   MC    = U where (S < tau_r and U = 1), else M0
//   MF*   = q * max(MC, MV)
//
// and the target model takes one AdamW step on
//   CE(MF*, P) + lambda * H(P)
// with both terms averaged over pixels and over the batch.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "davi/change_model.hpp"
#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/label_algebra.hpp"
#include "davi/segmenter.hpp"
#include "davi/threshold_search.hpp"
#include "davi/util.hpp"

namespace davi {

/// Which pseudo-label components feed the fine-grained label.
struct LabelComponents {
  bool source = true;       // M0 from the frozen source model
  bool diff_seg = true;     // MV from segmenter confidence differences
  bool coarse_mask = true;  // image-level masking by q
  bool refinement = true;   // per-iteration consistency update of M0

  bool operator==(const LabelComponents&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LabelComponents, source, diff_seg, coarse_mask,
                                                refinement)

struct AblationPreset {
  const char* name;
  int row;
  LabelComponents components;
};

/// The eight component combinations of the ablation table, in row order.
inline const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> presets{
      {"source-only", 1, {true, false, false, false}},
      {"source-coarse", 2, {true, false, true, false}},
      {"diffseg-only", 3, {false, true, false, false}},
      {"diffseg-coarse", 4, {false, true, true, false}},
      {"fusion", 5, {true, true, false, false}},
      {"fusion-coarse", 6, {true, true, true, false}},
      {"fusion-refine", 7, {true, true, false, true}},
      {"davi", 8, {true, true, true, true}},
  };
  return presets;
}

inline LabelComponents ablation_components(const std::string& name) {
  for (const auto& p : ablation_presets()) {
    if (name == p.name || name == std::to_string(p.row)) return p.components;
  }
  std::string known;
  for (const auto& p : ablation_presets()) known += std::string(known.empty() ? "" : ", ") + p.name;
  throw ValidationError("unknown ablation preset '" + name + "' (known: " + known + ")");
}

/// Photometric, geometry-preserving augmentation. The same draw is applied to
/// pre and post.
struct AugmentationSpec {
  double brightness = 0.05;  // additive offset drawn from [-b, b]
  double contrast = 0.10;    // gain drawn from [1-c, 1+c], about mid-grey
  double noise = 0.01;       // std of additive Gaussian noise

  bool operator==(const AugmentationSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentationSpec, brightness, contrast, noise)

struct AdaptationConfig {
  double lambda = 0.1;
  double tau_r = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  std::size_t lr_step = 8;
  double lr_gamma = 0.5;
  LossVariant ce_variant = LossVariant::kBinary;
  LossVariant entropy_variant = LossVariant::kBinary;
  AugmentationSpec augmentation;
  /// Number of prediction views for the consistency statistics (original
  /// plus views-1 augmentations).
  std::size_t views = 2;
  LabelComponents components;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("config: lambda must be >= 0");
    if (!(tau_r >= 0.0) || !std::isfinite(tau_r)) throw ValidationError("config: tau_r must be >= 0");
    if (batch_size == 0) throw ValidationError("config: batch_size must be >= 1");
    if (views < 2) throw ValidationError("config: views must be >= 2");
    if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const AdaptationConfig& c) {
  j = {{"lambda", c.lambda},
       {"tau_r", c.tau_r},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"lr_step", c.lr_step},
       {"lr_gamma", c.lr_gamma},
       {"ce_variant", to_string(c.ce_variant)},
       {"entropy_variant", to_string(c.entropy_variant)},
       {"augmentation", c.augmentation},
       {"views", c.views},
       {"components", c.components},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, AdaptationConfig& c) {
  AdaptationConfig d;
  c.lambda = j.value("lambda", d.lambda);
  c.tau_r = j.value("tau_r", d.tau_r);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.lr_step = j.value("lr_step", d.lr_step);
  c.lr_gamma = j.value("lr_gamma", d.lr_gamma);
  c.ce_variant = loss_variant_from_string(j.value("ce_variant", to_string(d.ce_variant)));
  c.entropy_variant = loss_variant_from_string(j.value("entropy_variant", to_string(d.entropy_variant)));
  c.augmentation = j.value("augmentation", d.augmentation);
  c.views = j.value("views", d.views);
  c.components = j.value("components", d.components);
  c.seed = j.value("seed", d.seed);
}

// --- Step 1 -------------------------------------------------------------------

struct PseudoLabelEntry {
  std::string id;
  BinaryMap m0;  // source model, binarized at 0.5
  BinaryMap mv;  // segmenter confidence difference, binarized at tau_v
  CoarseLabel q = CoarseLabel::kAbsent;
  double tau_v = 0.0;

  bool operator==(const PseudoLabelEntry&) const = default;
};

struct PseudoLabelSet {
  std::vector<PseudoLabelEntry> entries;
  double tau_v = 0.0;
  /// Empty when tau_v was supplied rather than searched.
  std::optional<ThresholdSearchResult> search;
  std::vector<std::string> failed;  // pairs skipped after segmenter errors

  const PseudoLabelEntry* find(const std::string& id) const {
    for (const auto& e : entries) {
      if (e.id == id) return &e;
    }
    return nullptr;
  }
};

struct PseudoLabelOptions {
  std::string prompt = kDefaultPrompt;
  std::vector<double> grid = default_tau_grid();
  std::optional<double> tau_v_override;
  bool continue_on_error = false;
};

inline PseudoLabelSet generate_pseudo_labels(const ChangeDetector& source, Segmenter& segmenter,
                                             const std::vector<ImagePair>& pairs,
                                             const PseudoLabelOptions& opt = {}) {
  if (pairs.empty()) throw ValidationError("generate_pseudo_labels: no pairs");
  struct Partial {
    std::string id;
    BinaryMap m0;
    DiffMap diff;
  };
  std::vector<Partial> partial;
  PseudoLabelSet out;
  for (const auto& pair : pairs) {
    pair.validate();
    ConfidencePair conf;
    try {
      conf = segment_pair(segmenter, pair.pre, pair.post, opt.prompt);
    } catch (const BackendError&) {
      if (!opt.continue_on_error) throw;
      out.failed.push_back(pair.id);
      continue;
    }
    partial.push_back({pair.id, binarize(source.predict(pair), 0.5),
                       clipped_confidence_diff(conf.pre, conf.post)});
  }
  if (partial.empty()) throw BackendError("generate_pseudo_labels: every pair failed", true);

  if (opt.tau_v_override) {
    out.tau_v = *opt.tau_v_override;
    if (!(out.tau_v >= 0.0 && out.tau_v <= 1.0)) throw ValidationError("tau_v must lie in [0,1]");
  } else {
    std::vector<DiffMap> diffs;
    std::vector<BinaryMap> refs;
    for (const auto& p : partial) {
      diffs.push_back(p.diff);
      refs.push_back(p.m0);
    }
    out.search = search_tau(diffs, refs, opt.grid);
    out.tau_v = out.search->tau_v;
  }
  for (auto& p : partial) {
    const auto q = coarse_label(p.m0);
    out.entries.push_back({p.id, std::move(p.m0), binarize(p.diff, out.tau_v), q, out.tau_v});
  }
  return out;
}

// --- Step 2 -------------------------------------------------------------------

struct AugmentationDescriptor {
  double brightness = 0.0;
  double contrast = 1.0;
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
};

struct AugmentedPair {
  const ImagePair* original = nullptr;
  ImagePair augmented;
  AugmentationDescriptor descriptor;
};

inline AugmentedPair augment(const ImagePair& pair, const AugmentationSpec& spec, Rng& rng) {
  AugmentedPair out;
  out.original = &pair;
  auto& d = out.descriptor;
  d.brightness = rng.uniform(-spec.brightness, spec.brightness);
  d.contrast = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
  d.noise = spec.noise;
  d.noise_seed = rng.next_u64();
  auto apply = [&](const ImageTile& src) {
    Rng noise(d.noise_seed);  // identical noise field on pre and post
    ImageTile dst = src;
    for (auto& v : dst.values()) {
      const double x = (v - 0.5) * d.contrast + 0.5 + d.brightness + noise.normal() * d.noise;
      v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
    return dst;
  };
  out.augmented = ImagePair{pair.id, apply(pair.pre), apply(pair.post)};
  return out;
}

/// Fine-grained label for the enabled components. `mean_binary` / `spread`
/// are only consulted when refinement is on.
inline BinaryMap compose_fine_label(const PseudoLabelEntry& labels, const BinaryMap* mean_binary,
                                    const StdMap* spread, const LabelComponents& comp,
                                    double tau_r) {
  BinaryMap base = comp.source ? labels.m0 : BinaryMap(labels.m0.height(), labels.m0.width());
  if (comp.refinement) {
    if (mean_binary == nullptr || spread == nullptr) {
      throw ValidationError("compose_fine_label: refinement needs target-model statistics");
    }
    base = consistency_update(*mean_binary, *spread, base, tau_r);
  }
  if (comp.diff_seg) base = combine_max(base, labels.mv);
  if (comp.coarse_mask) base = mask_fine(labels.q, base);
  return base;
}

struct RefineResult {
  BinaryMap fine_label;        // MF*
  ProbabilityMap prediction;   // target prediction on the original view
  std::unique_ptr<ForwardTrace> trace;
};

inline RefineResult refine_step(const TrainableChangeDetector& target,
                                const std::vector<AugmentedPair>& views,
                                const PseudoLabelEntry& labels, const AdaptationConfig& config) {
  if (views.empty() || views.front().original == nullptr) {
    throw ValidationError("refine_step: needs the original pair and at least one augmentation");
  }
  const ImagePair& original = *views.front().original;
  RefineResult r;
  r.trace = target.forward(original);
  r.prediction = ProbabilityMap(r.trace->height, r.trace->width);
  for (std::size_t i = 0; i < r.prediction.size(); ++i) {
    r.prediction[i] = static_cast<float>(r.trace->probs[i]);
  }
  require_same_shape(r.prediction, labels.m0, "refine_step");

  if (!config.components.refinement) {
    r.fine_label = compose_fine_label(labels, nullptr, nullptr, config.components, config.tau_r);
    return r;
  }
  std::vector<ProbabilityMap> maps{r.prediction};
  for (const auto& v : views) {
    maps.push_back(target.predict(v.augmented));
    require_same_shape(maps.front(), maps.back(), "refine_step");
  }
  const auto stats = mean_std(maps);
  const auto mean_binary = binarize(stats.mean, 0.5);
  r.fine_label = compose_fine_label(labels, &mean_binary, &stats.stddev, config.components,
                                    config.tau_r);
  return r;
}

inline RefineResult refine_step(const TrainableChangeDetector& target, const AugmentedPair& pair,
                                const PseudoLabelEntry& labels, const AdaptationConfig& config) {
  return refine_step(target, std::vector<AugmentedPair>{pair}, labels, config);
}

// --- Training loop --------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double ce = 0.0;        // mean per-pixel CE over pairs
  double entropy = 0.0;   // mean per-pixel entropy over pairs
  double total = 0.0;     // ce + lambda * entropy
  double learning_rate = 0.0;
  std::optional<double> eval_entropy;  // mean binary entropy on the frozen eval batch

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"ce", ce}, {"entropy", entropy}, {"total", total},
                     {"learning_rate", learning_rate}};
    if (eval_entropy) j["eval_entropy"] = *eval_entropy;
    return j;
  }
};

struct AdaptationResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochRecord> curve;
  /// Mean binary entropy on the eval batch before any update.
  std::optional<double> initial_eval_entropy;
};

struct AdaptOptions {
  /// Frozen batch whose mean prediction entropy is logged after every epoch.
  const std::vector<ImagePair>* eval_pairs = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

inline double mean_binary_entropy(const ChangeDetector& model, const std::vector<ImagePair>& pairs) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const auto pred = model.predict(p);
    total += prediction_entropy(pred, LossVariant::kBinary);
    n += pred.size();
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

inline AdaptationResult adapt(TrainableChangeDetector& target, const std::vector<ImagePair>& pairs,
                              const PseudoLabelSet& labels, const AdaptationConfig& config,
                              const AdaptOptions& options = {}) {
  config.validate();
  // Pairs without Step-1 labels (segmenter failures) do not take part.
  std::vector<std::pair<const ImagePair*, const PseudoLabelEntry*>> items;
  for (const auto& p : pairs) {
    if (const auto* e = labels.find(p.id)) items.emplace_back(&p, e);
  }
  if (items.empty()) throw ValidationError("adapt: no pair has pseudo labels");

  AdamW opt(target.parameters().size(), {config.weight_decay});
  Rng order_rng(mix_seed(config.seed, 0xada));
  Rng aug_rng(mix_seed(config.seed, 0xa06));
  AdaptationResult result;
  if (options.eval_pairs) result.initial_eval_entropy = mean_binary_entropy(target, *options.eval_pairs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = step_lr(config.learning_rate, epoch, config.lr_step, config.lr_gamma);
    const auto order = shuffled_indices(items.size(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = lr;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double batch = static_cast<double>(end - start);
      target.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const auto& [pair, entry] = items[order[b]];
        std::vector<AugmentedPair> views;
        for (std::size_t v = 1; v < config.views; ++v) {
          views.push_back(augment(*pair, config.augmentation, aug_rng));
        }
        auto r = refine_step(target, views, *entry, config);
        const auto& probs = r.trace->probs;
        const auto& logits = r.trace->logits;
        const double n = static_cast<double>(probs.size());
        double ce = 0.0, ent = 0.0;
        std::vector<double> dz(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) {
          const double y = r.fine_label[i];
          ce += pixel_cross_entropy(y, probs[i], config.ce_variant);
          ent += pixel_entropy(probs[i], config.entropy_variant);
          dz[i] = (cross_entropy_logit_grad(y, probs[i], config.ce_variant) +
                   config.lambda * entropy_logit_grad(logits[i], probs[i], config.entropy_variant)) /
                  (n * batch);
        }
        ce /= n;
        ent /= n;
        const double total = ce + config.lambda * ent;
        if (!std::isfinite(total)) {
          throw DivergenceError("adapt: non-finite loss at epoch " + std::to_string(epoch + 1));
        }
        rec.ce += ce;
        rec.entropy += ent;
        rec.total += total;
        target.backward(*r.trace, dz);
      }
      opt.step(target.parameters(), target.gradients(), lr);
    }
    const auto count = static_cast<double>(items.size());
    rec.ce /= count;
    rec.entropy /= count;
    rec.total /= count;
    if (options.eval_pairs) rec.eval_entropy = mean_binary_entropy(target, *options.eval_pairs);
    if (options.on_epoch) options.on_epoch(rec);
    result.curve.push_back(rec);
  }

  nlohmann::json curve = nlohmann::json::array();
  for (const auto& r : result.curve) curve.push_back(r.to_json());
  result.checkpoint = snapshot(target, {{"role", "target"},
                                        {"config", config},
                                        {"tau_v", labels.tau_v},
                                        {"loss_curve", curve}});
  return result;
}

}  // namespace davi
