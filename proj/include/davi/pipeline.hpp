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

// On-disk artifacts shared by the command-line stages.
//
//   <run>/labels/<id>.json      frozen Step-1 labels, one file per pair
//   <run>/threshold.json        tau_v and the search grid
//   <run>/metrics.jsonl         one record per adaptation epoch
//   <run>/predictions/<id>.davg dense probability
//   <run>/predictions/<id>.png  binary map at 0.5
//   <run>/overlay/<id>.png      pre | post | prediction over post

#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "davi/adaptation.hpp"
#include "davi/change_model.hpp"
#include "davi/data_io.hpp"
#include "davi/errors.hpp"
#include "davi/raster_io.hpp"
#include "davi/util.hpp"

namespace davi {

// --- Label store ---------------------------------------------------------------

namespace detail {

inline nlohmann::json rows_to_json(const BinaryMap& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.height(); ++r) {
    std::string row(m.width(), '0');
    for (std::size_t c = 0; c < m.width(); ++c) row[c] = m(r, c) ? '1' : '0';
    rows.push_back(std::move(row));
  }
  return rows;
}

inline BinaryMap rows_from_json(const nlohmann::json& rows, std::size_t h, std::size_t w,
                                const std::string& context) {
  if (!rows.is_array() || rows.size() != h) throw ValidationError(context + ": wrong row count");
  BinaryMap m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    const auto& s = rows[r].get_ref<const std::string&>();
    if (s.size() != w) throw ValidationError(context + ": wrong row length");
    for (std::size_t c = 0; c < w; ++c) {
      if (s[c] != '0' && s[c] != '1') throw ValidationError(context + ": row holds non-binary value");
      m(r, c) = s[c] == '1' ? 1 : 0;
    }
  }
  return m;
}

}  // namespace detail

inline nlohmann::json label_entry_to_json(const PseudoLabelEntry& e) {
  return {{"id", e.id},
          {"q", static_cast<int>(e.q)},
          {"tau_v", e.tau_v},
          {"height", e.m0.height()},
          {"width", e.m0.width()},
          {"m0", detail::rows_to_json(e.m0)},
          {"mv", detail::rows_to_json(e.mv)}};
}

inline PseudoLabelEntry label_entry_from_json(const nlohmann::json& j, const std::string& context) {
  try {
    PseudoLabelEntry e;
    e.id = j.at("id").get<std::string>();
    const auto h = j.at("height").get<std::size_t>();
    const auto w = j.at("width").get<std::size_t>();
    e.m0 = detail::rows_from_json(j.at("m0"), h, w, context + " m0");
    e.mv = detail::rows_from_json(j.at("mv"), h, w, context + " mv");
    const int q = j.at("q").get<int>();
    if (q != 0 && q != 1) throw ValidationError(context + ": q must be 0 or 1");
    e.q = q ? CoarseLabel::kPresent : CoarseLabel::kAbsent;
    e.tau_v = j.at("tau_v").get<double>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(context + ": " + ex.what());
  }
}

inline void save_label_store(const PseudoLabelSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& e : set.entries) {
    write_file_bytes(dir / (e.id + ".json"), label_entry_to_json(e).dump() + "\n");
  }
}

inline std::vector<fs::path> label_store_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UpstreamMissing("label store not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (de.is_regular_file() && de.path().extension() == ".json") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline PseudoLabelSet load_label_store(const fs::path& dir) {
  PseudoLabelSet set;
  const auto files = label_store_files(dir);
  if (files.empty()) throw UpstreamMissing("label store is empty: " + dir.string());
  for (const auto& f : files) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file_bytes(f));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(f.string() + ": " + ex.what());
    }
    set.entries.push_back(label_entry_from_json(j, f.string()));
  }
  set.tau_v = set.entries.front().tau_v;
  for (const auto& e : set.entries) {
    if (e.tau_v != set.tau_v) throw ValidationError("label store mixes different tau_v values");
  }
  return set;
}

/// SHA-256 over file names and contents, in sorted order.
inline std::string label_store_hash(const fs::path& dir) {
  Sha256 h;
  for (const auto& f : label_store_files(dir)) {
    const auto name = f.filename().string();
    const auto bytes = read_file_bytes(f);
    h.update(name.data(), name.size()).update("\0", 1).update(bytes.data(), bytes.size());
  }
  return h.hex();
}

inline nlohmann::json threshold_report(const PseudoLabelSet& set) {
  nlohmann::json j = set.search ? set.search->to_json() : nlohmann::json{{"tau_v", set.tau_v}};
  j["source"] = set.search ? "search" : "override";
  j["failed_pairs"] = set.failed;
  return j;
}

// --- Predictions -----------------------------------------------------------------

/// Pre, post, and post with predicted change tinted red, side by side.
inline RawRaster overlay_panel(const ImagePair& pair, const BinaryMap& pred) {
  require_same_shape(Grid<float>(pair.height(), pair.width()), pred, "overlay");
  const std::size_t h = pair.height(), w = pair.width();
  RawRaster r{h, 3 * w, 3, std::vector<std::uint8_t>(h * 3 * w * 3)};
  const auto pre = pair.pre.to_rgb8();
  const auto post = pair.post.to_rgb8();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * w + x) * 3 + c;
        const std::size_t row = y * 3 * w;
        r.pixels[(row + x) * 3 + c] = pre[src];
        r.pixels[(row + w + x) * 3 + c] = post[src];
        std::uint8_t v = post[src];
        if (pred(y, x)) v = c == 0 ? static_cast<std::uint8_t>(128 + v / 2) : static_cast<std::uint8_t>(v / 2);
        r.pixels[(row + 2 * w + x) * 3 + c] = v;
      }
    }
  }
  return r;
}

struct PredictionSummary {
  std::size_t pairs = 0;
  std::size_t positive_pixels = 0;
};

inline PredictionSummary predict_dataset(const ChangeDetector& model, const DatasetManifest& manifest,
                                         const fs::path& out_dir, bool overlay) {
  PredictionSummary s;
  const auto pred_dir = out_dir / "predictions";
  fs::create_directories(pred_dir);
  if (overlay) fs::create_directories(out_dir / "overlay");
  for (const auto& rec : manifest.pairs) {
    const auto pair = load_pair(rec);
    const auto prob = model.predict(pair);
    const auto bin = binarize(prob, 0.5);
    write_probability_map(prob, pred_dir / (rec.id + ".davg"));
    write_binary_map(bin, pred_dir / (rec.id + ".png"));
    if (overlay) write_png(out_dir / "overlay" / (rec.id + ".png"), overlay_panel(pair, bin));
    ++s.pairs;
    s.positive_pixels += count_positive(bin);
  }
  return s;
}

}  // namespace davi
