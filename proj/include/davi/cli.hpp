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

// `davi` command-line driver. Each stage reads the artifacts of earlier
// stages from disk and writes its own, plus a resolved configuration
// snapshot <out>/<command>.config.json that can be fed back via --config.
//
// Exit codes: 0 ok, 2 invalid input, 3 upstream artifact missing,
// 4 segmenter backend failure, 1 anything else.

#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "davi/adaptation.hpp"
#include "davi/change_model.hpp"
#include "davi/data_io.hpp"
#include "davi/errors.hpp"
#include "davi/evaluation.hpp"
#include "davi/pipeline.hpp"
#include "davi/segmenter.hpp"
#include "davi/synthetic.hpp"

namespace davi {

inline void to_json(nlohmann::json& j, const SourceTrainingConfig& c) {
  j = {{"channels", c.channels},   {"epochs", c.epochs},
       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay}, {"lr_step", c.lr_step},
       {"lr_gamma", c.lr_gamma},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SourceTrainingConfig& c) {
  SourceTrainingConfig d;
  c.channels = j.value("channels", d.channels);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.lr_step = j.value("lr_step", d.lr_step);
  c.lr_gamma = j.value("lr_gamma", d.lr_gamma);
  c.seed = j.value("seed", d.seed);
}

namespace cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalid = 2,
  kUpstreamMissing = 3,
  kBackendFailure = 4,
};

/// Fully resolved settings for one command.
struct RunConfig {
  std::string command;

  std::string manifest;
  std::string checkpoint;
  std::string out = ".";
  std::string labels;       // default <out>/labels
  std::string predictions;  // default <out>/predictions
  std::string oracle;       // default <manifest dir>/oracle.json
  std::string cache_dir;    // default <out>/segmenter-cache

  std::string segmenter = "oracle";
  std::string segmenter_url = "http://127.0.0.1:8080";
  std::string prompt = kDefaultPrompt;
  std::optional<double> tau_v;
  bool continue_on_error = false;

  AdaptationConfig adaptation;
  std::string ablate;
  SourceTrainingConfig source;

  std::string domain = "target";
  std::size_t pairs = 50;
  std::size_t tile_size = 32;

  bool overlay = false;
  bool allow_missing = false;

  fs::path out_dir() const { return out; }
  fs::path labels_dir() const { return labels.empty() ? out_dir() / "labels" : fs::path(labels); }
  fs::path predictions_dir() const {
    return predictions.empty() ? out_dir() / "predictions" : fs::path(predictions);
  }
  fs::path oracle_path() const {
    if (!oracle.empty()) return oracle;
    return fs::path(manifest).parent_path() / "oracle.json";
  }
  fs::path cache_path() const {
    return cache_dir.empty() ? out_dir() / "segmenter-cache" : fs::path(cache_dir);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["paths"] = {{"manifest", manifest},       {"checkpoint", checkpoint}, {"out", out},
                  {"labels", labels},           {"predictions", predictions},
                  {"oracle", oracle},           {"cache_dir", cache_dir}};
    j["segmenter"] = {{"backend", segmenter},
                      {"url", segmenter_url},
                      {"prompt", prompt},
                      {"tau_v", tau_v ? nlohmann::json(*tau_v) : nlohmann::json(nullptr)},
                      {"continue_on_error", continue_on_error}};
    j["adaptation"] = adaptation;
    j["ablate"] = ablate;
    j["source_training"] = source;
    j["synthetic"] = {{"domain", domain}, {"pairs", pairs}, {"tile_size", tile_size}};
    j["predict"] = {{"overlay", overlay}};
    j["evaluate"] = {{"allow_missing", allow_missing}};
    return j;
  }

  /// Overlays the keys present in `j` onto this configuration.
  void merge(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config: top level must be an object");
    if (auto it = j.find("paths"); it != j.end()) {
      manifest = it->value("manifest", manifest);
      checkpoint = it->value("checkpoint", checkpoint);
      out = it->value("out", out);
      labels = it->value("labels", labels);
      predictions = it->value("predictions", predictions);
      oracle = it->value("oracle", oracle);
      cache_dir = it->value("cache_dir", cache_dir);
    }
    if (auto it = j.find("segmenter"); it != j.end()) {
      segmenter = it->value("backend", segmenter);
      segmenter_url = it->value("url", segmenter_url);
      prompt = it->value("prompt", prompt);
      if (auto t = it->find("tau_v"); t != it->end() && !t->is_null()) tau_v = t->get<double>();
      continue_on_error = it->value("continue_on_error", continue_on_error);
    }
    if (auto it = j.find("adaptation"); it != j.end()) {
      nlohmann::json merged = adaptation;
      merged.merge_patch(*it);
      adaptation = merged.get<AdaptationConfig>();
    }
    ablate = j.value("ablate", ablate);
    if (auto it = j.find("source_training"); it != j.end()) {
      nlohmann::json merged = source;
      merged.merge_patch(*it);
      source = merged.get<SourceTrainingConfig>();
    }
    if (auto it = j.find("synthetic"); it != j.end()) {
      domain = it->value("domain", domain);
      pairs = it->value("pairs", pairs);
      tile_size = it->value("tile_size", tile_size);
    }
    if (auto it = j.find("predict"); it != j.end()) overlay = it->value("overlay", overlay);
    if (auto it = j.find("evaluate"); it != j.end()) allow_missing = it->value("allow_missing", allow_missing);
  }
};

/// Values given on the command line; unset ones fall back to --config and
/// then to defaults.
struct Overrides {
  std::string config;
  std::optional<std::string> manifest, checkpoint, out, labels, predictions, oracle, cache_dir;
  std::optional<std::string> segmenter, segmenter_url, prompt, ablate, domain;
  std::optional<double> tau_v, tau_r, lambda, learning_rate;
  std::optional<std::size_t> epochs, batch_size, pairs, tile_size, views;
  std::optional<std::uint64_t> seed;
  bool continue_on_error = false;
  bool overlay = false;
  bool allow_missing = false;
};

inline RunConfig resolve(const std::string& command, const Overrides& o) {
  RunConfig c;
  c.command = command;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw UpstreamMissing("config file not found: " + o.config);
    try {
      c.merge(nlohmann::json::parse(read_file_bytes(o.config)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config " + o.config + ": " + e.what());
    }
    c.command = command;
  }
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.manifest, o.manifest);
  set(c.checkpoint, o.checkpoint);
  set(c.out, o.out);
  set(c.labels, o.labels);
  set(c.predictions, o.predictions);
  set(c.oracle, o.oracle);
  set(c.cache_dir, o.cache_dir);
  set(c.segmenter, o.segmenter);
  set(c.segmenter_url, o.segmenter_url);
  set(c.prompt, o.prompt);
  set(c.ablate, o.ablate);
  set(c.domain, o.domain);
  set(c.pairs, o.pairs);
  set(c.tile_size, o.tile_size);
  if (o.tau_v) c.tau_v = o.tau_v;
  set(c.adaptation.tau_r, o.tau_r);
  set(c.adaptation.lambda, o.lambda);
  set(c.adaptation.views, o.views);
  // Epochs, batch size, learning rate and seed address whichever model the
  // command trains.
  if (command == "train-source") {
    set(c.source.epochs, o.epochs);
    set(c.source.batch_size, o.batch_size);
    set(c.source.learning_rate, o.learning_rate);
  } else {
    set(c.adaptation.epochs, o.epochs);
    set(c.adaptation.batch_size, o.batch_size);
    set(c.adaptation.learning_rate, o.learning_rate);
  }
  if (o.seed) {
    c.source.seed = *o.seed;
    c.adaptation.seed = *o.seed;
  }
  c.continue_on_error = c.continue_on_error || o.continue_on_error;
  c.overlay = c.overlay || o.overlay;
  c.allow_missing = c.allow_missing || o.allow_missing;
  if (!c.ablate.empty()) c.adaptation.components = ablation_components(c.ablate);
  return c;
}

// --- Stages ----------------------------------------------------------------------

namespace detail {

inline void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw ValidationError(command + ": " + flag + " is required");
}

inline void write_snapshot(const RunConfig& c) {
  write_file_bytes(c.out_dir() / (c.command + ".config.json"), c.to_json().dump(2) + "\n");
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

inline int cmd_synth(const RunConfig& c, std::ostream& out) {
  SceneConfig scene;
  if (c.domain == "source") {
    scene = SceneConfig::source_preset(c.source.seed);
  } else if (c.domain == "target") {
    scene = SceneConfig::target_preset(c.source.seed);
  } else {
    throw ValidationError("synth: --domain must be 'source' or 'target'");
  }
  scene.tile_size = c.tile_size;
  const auto ds = generate_synthetic_dataset(
      scene, c.pairs, c.domain == "source" ? DatasetRole::kSource : DatasetRole::kTarget, c.out_dir());
  detail::write_snapshot(c);
  out << "synth: wrote " << ds.manifest.pairs.size() << " " << c.domain << " pairs to "
      << (c.out_dir() / "manifest.json").string() << "\n";
  return kOk;
}

inline int cmd_train_source(const RunConfig& c, std::ostream& out) {
  detail::require(c.manifest, "--manifest", c.command);
  const auto manifest = load_manifest(c.manifest);
  const auto ckpt = train_source(manifest, c.source);
  const fs::path path = c.checkpoint.empty() ? c.out_dir() / "checkpoint.davi" : fs::path(c.checkpoint);
  save_checkpoint(ckpt, path);
  detail::write_snapshot(c);
  const auto& curve = ckpt.metadata["loss_curve"];
  out << "train-source: " << manifest.pairs.size() << " pairs, " << c.source.epochs
      << " epochs, final loss " << (curve.empty() ? std::string("n/a") : detail::fmt(curve.back().get<double>()))
      << "\n";
  out << "checkpoint: " << path.string() << " sha256 " << sha256_file(path) << "\n";
  return kOk;
}

inline std::unique_ptr<Segmenter> make_segmenter(const RunConfig& c) {
  if (c.segmenter == "oracle") {
    const auto path = c.oracle_path();
    if (!fs::exists(path)) throw UpstreamMissing("oracle segmenter config not found: " + path.string());
    return std::make_unique<OracleSegmenter>(OracleConfig::load(path));
  }
  if (c.segmenter == "external") {
    ExternalSegmenterOptions opt;
    opt.base_url = c.segmenter_url;
    return std::make_unique<ExternalSegmenter>(opt);
  }
  throw ValidationError("--segmenter must be 'oracle' or 'external'");
}

inline int cmd_pseudo_labels(const RunConfig& c, std::ostream& out, std::ostream& err) {
  detail::require(c.manifest, "--manifest", c.command);
  detail::require(c.checkpoint, "--checkpoint", c.command);
  const auto manifest = load_manifest(c.manifest);
  const auto source = clone_for_target(load_checkpoint(c.checkpoint));
  auto backend = make_segmenter(c);
  CachedSegmenter segmenter(*backend, c.cache_path());

  PseudoLabelOptions opt;
  opt.prompt = c.prompt;
  opt.tau_v_override = c.tau_v;
  opt.continue_on_error = c.continue_on_error;
  const auto labels = generate_pseudo_labels(*source, segmenter, load_pairs(manifest), opt);

  const auto dir = c.labels_dir();
  if (fs::exists(dir)) fs::remove_all(dir);
  save_label_store(labels, dir);
  write_file_bytes(c.out_dir() / "threshold.json", threshold_report(labels).dump(2) + "\n");
  detail::write_snapshot(c);

  std::size_t q_present = 0;
  for (const auto& e : labels.entries) q_present += e.q == CoarseLabel::kPresent;
  for (const auto& id : labels.failed) err << "pseudo-labels: segmenter failed on pair " << id << "\n";
  out << "pseudo-labels: " << labels.entries.size() << " pairs, q=1 on " << q_present << ", tau_v "
      << detail::fmt(labels.tau_v) << (labels.search ? " (searched)" : " (override)") << "\n";
  out << "segmenter: backend_calls=" << segmenter.backend_calls() << " cache_hits=" << segmenter.hits()
      << "\n";
  out << "labels: " << dir.string() << " sha256 " << label_store_hash(dir) << "\n";
  return kOk;
}

inline int cmd_adapt(const RunConfig& c, std::ostream& out) {
  detail::require(c.manifest, "--manifest", c.command);
  detail::require(c.checkpoint, "--checkpoint", c.command);
  c.adaptation.validate();
  const auto manifest = load_manifest(c.manifest);
  const auto source = load_checkpoint(c.checkpoint);
  const auto labels = load_label_store(c.labels_dir());
  const auto pairs = load_pairs(manifest);
  auto target = clone_for_target(source);

  const std::vector<ImagePair> eval_batch(pairs.begin(),
                                          pairs.begin() + static_cast<std::ptrdiff_t>(
                                                              std::min<std::size_t>(8, pairs.size())));
  fs::create_directories(c.out_dir());
  const auto log_path = c.out_dir() / "metrics.jsonl";
  AdaptOptions opt;
  opt.eval_pairs = &eval_batch;
  const auto hash_before = label_store_hash(c.labels_dir());
  auto result = adapt(*target, pairs, labels, c.adaptation, opt);
  if (label_store_hash(c.labels_dir()) != hash_before) {
    throw Error("adapt: label store changed during adaptation");
  }
  result.checkpoint.metadata["source_checkpoint_sha256"] = sha256_file(c.checkpoint);
  result.checkpoint.metadata["label_store_sha256"] = hash_before;
  result.checkpoint.metadata["ablate"] = c.ablate;
  // Record 0 holds the eval-batch entropy before any update.
  std::string log = nlohmann::json{{"epoch", 0}, {"eval_entropy", *result.initial_eval_entropy}}.dump() + "\n";
  for (const auto& r : result.curve) log += r.to_json().dump() + "\n";
  write_file_bytes(log_path, log);
  const fs::path ckpt_path = c.out_dir() / "checkpoint.davi";
  save_checkpoint(result.checkpoint, ckpt_path);
  detail::write_snapshot(c);

  const auto& last = result.curve.back();
  out << "adapt: " << pairs.size() << " pairs, " << c.adaptation.epochs << " epochs"
      << (c.ablate.empty() ? "" : ", ablation " + c.ablate) << "\n";
  out << "final: ce " << detail::fmt(last.ce) << " entropy " << detail::fmt(last.entropy) << " total "
      << detail::fmt(last.total) << "\n";
  out << "checkpoint: " << ckpt_path.string() << " sha256 " << sha256_file(ckpt_path) << "\n";
  return kOk;
}

inline int cmd_predict(const RunConfig& c, std::ostream& out) {
  detail::require(c.manifest, "--manifest", c.command);
  detail::require(c.checkpoint, "--checkpoint", c.command);
  const auto manifest = load_manifest(c.manifest);
  const auto model = clone_for_target(load_checkpoint(c.checkpoint));
  const auto s = predict_dataset(*model, manifest, c.out_dir(), c.overlay);
  detail::write_snapshot(c);
  out << "predict: " << s.pairs << " pairs, " << s.positive_pixels << " changed pixels -> "
      << (c.out_dir() / "predictions").string() << (c.overlay ? " (+overlay)" : "") << "\n";
  return kOk;
}

inline int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  detail::require(c.manifest, "--manifest", c.command);
  const auto manifest = load_manifest(c.manifest);
  const auto report = evaluate_run(c.predictions_dir(), manifest, !c.allow_missing);
  write_file_bytes(c.out_dir() / "metrics.json", report.to_json().dump(2) + "\n");
  detail::write_snapshot(c);
  const auto& p = report.pooled_positive;
  out << "evaluate: " << report.pairs.size() << " pairs"
      << (report.missing_predictions.empty()
              ? std::string()
              : ", " + std::to_string(report.missing_predictions.size()) + " missing")
      << "\n";
  out << "pooled: precision " << detail::fmt(p.precision) << " recall " << detail::fmt(p.recall)
      << " f1 " << detail::fmt(p.f1) << " accuracy " << detail::fmt(p.accuracy) << "\n";
  out << "macro: f1 " << detail::fmt(report.pooled_macro.f1) << "\n";
  return kOk;
}

// --- Entry point -----------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Disaster change detection with test-time adaptation"};
  app.name("davi");
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--manifest", o.manifest, "dataset manifest");
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    sub->add_option("--out", o.out, "output / run directory");
    sub->add_option("--seed", o.seed, "random seed");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--epochs", o.epochs, "training epochs (default 50)");
    sub->add_option("--batch-size", o.batch_size, "batch size (default 8)");
    sub->add_option("--lr", o.learning_rate, "base learning rate");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  common(synth);
  synth->add_option("--domain", o.domain, "source | target");
  synth->add_option("--pairs", o.pairs, "number of pairs (default 50)");
  synth->add_option("--tile-size", o.tile_size, "tile edge in pixels (default 32)");

  auto* train = app.add_subcommand("train-source", "train the source model on labeled pairs");
  common(train);
  training(train);

  auto* pseudo = app.add_subcommand("pseudo-labels", "generate frozen pseudo labels for target pairs");
  common(pseudo);
  pseudo->add_option("--prompt", o.prompt, "segmenter prompt (default \"Building\")");
  pseudo->add_option("--tau-v", o.tau_v, "fixed segmenter-difference threshold (skips search)");
  pseudo->add_option("--segmenter", o.segmenter, "oracle | external")
      ->check(CLI::IsMember({"oracle", "external"}));
  pseudo->add_option("--segmenter-url", o.segmenter_url, "external segmenter base URL");
  pseudo->add_option("--oracle", o.oracle, "oracle segmenter config");
  pseudo->add_option("--cache-dir", o.cache_dir, "segmenter response cache");
  pseudo->add_option("--labels", o.labels, "label store directory");
  pseudo->add_flag("--continue-on-error", o.continue_on_error, "skip pairs the segmenter fails on");

  auto* adapt_cmd = app.add_subcommand("adapt", "adapt the source model to the target pairs");
  common(adapt_cmd);
  training(adapt_cmd);
  adapt_cmd->add_option("--labels", o.labels, "label store directory");
  adapt_cmd->add_option("--tau-r", o.tau_r, "consistency threshold (default 0.001)");
  adapt_cmd->add_option("--lambda", o.lambda, "entropy weight (default 0.1)");
  adapt_cmd->add_option("--views", o.views, "prediction views incl. the original (default 2)");
  std::string ablate_help = "label components preset:";
  for (const auto& p : ablation_presets()) ablate_help += std::string(" ") + p.name;
  adapt_cmd->add_option("--ablate", o.ablate, ablate_help);

  auto* predict = app.add_subcommand("predict", "write change maps for a manifest");
  common(predict);
  predict->add_flag("--overlay", o.overlay, "also write pre | post | prediction panels");

  auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  common(evaluate);
  evaluate->add_option("--predictions", o.predictions, "predictions directory");
  evaluate->add_flag("--allow-missing", o.allow_missing, "skip pairs without predictions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const auto cfg = resolve(sub->get_name(), o);
    if (sub == synth) return cmd_synth(cfg, out);
    if (sub == train) return cmd_train_source(cfg, out);
    if (sub == pseudo) return cmd_pseudo_labels(cfg, out, err);
    if (sub == adapt_cmd) return cmd_adapt(cfg, out);
    if (sub == predict) return cmd_predict(cfg, out);
    return cmd_evaluate(cfg, out);
  } catch (const ValidationError& e) {
    err << "davi: invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const UpstreamMissing& e) {
    err << "davi: missing upstream artifact: " << e.what() << "\n";
    return kUpstreamMissing;
  } catch (const BackendError& e) {
    err << "davi: segmenter backend failure: " << e.what() << "\n";
    return kBackendFailure;
  } catch (const std::exception& e) {
    err << "davi: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace cli
}  // namespace davi
