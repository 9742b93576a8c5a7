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

// Dataset manifests and ground-truth handling.
//
// Manifest schema ("davi-manifest/1"), JSON:
//
//   {
//     "schema": "davi-manifest/1",
//     "role": "source" | "target",
//     "pairs": [
//       {"id": "p000", "pre": "pre/p000.png", "post": "post/p000.png",
//        "gt": "gt/p000.png"},          // "gt" optional for targets
//       ...
//     ]
//   }
//
// Relative paths resolve against the manifest's directory. Ground-truth
// rasters are single-channel 8-bit damage levels in {0,1,2,3}.

#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/raster_io.hpp"
#include "davi/util.hpp"

namespace davi {

namespace fs = std::filesystem;

inline constexpr const char* kManifestSchema = "davi-manifest/1";

enum class DatasetRole { kSource, kTarget };

inline std::string to_string(DatasetRole r) { return r == DatasetRole::kSource ? "source" : "target"; }

struct PairRecord {
  std::string id;
  fs::path pre;
  fs::path post;
  std::optional<fs::path> gt;
};

struct DatasetManifest {
  DatasetRole role = DatasetRole::kTarget;
  std::vector<PairRecord> pairs;
  /// SHA-256 of the manifest document; empty for in-memory manifests.
  std::string content_hash;

  bool any_ground_truth() const {
    for (const auto& p : pairs) {
      if (p.gt) return true;
    }
    return false;
  }
};

namespace detail {
inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}
}  // namespace detail

/// Checks every record and reports all problems at once.
inline void validate_manifest(const DatasetManifest& m, bool check_files = true) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  if (m.pairs.empty()) problems.push_back("manifest has no pairs");
  for (const auto& rec : m.pairs) {
    if (rec.id.empty()) problems.push_back("record with empty id");
    if (!seen.insert(rec.id).second) problems.push_back("duplicate id '" + rec.id + "'");
    if (m.role == DatasetRole::kSource && !rec.gt) {
      problems.push_back("source record '" + rec.id + "' lacks gt (source manifests require gt)");
    }
    if (check_files) {
      for (const fs::path* p : {&rec.pre, &rec.post}) {
        if (!fs::exists(*p)) problems.push_back("record '" + rec.id + "': missing file " + p->string());
      }
      if (rec.gt && !fs::exists(*rec.gt)) {
        problems.push_back("record '" + rec.id + "': missing file " + rec.gt->string());
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid manifest:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

inline DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir,
                                      const std::string& context) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(context + ": " + e.what());
  }
  if (doc.value("schema", "") != kManifestSchema) {
    throw ValidationError(context + ": expected schema \"" + std::string(kManifestSchema) + "\"");
  }
  DatasetManifest m;
  const auto role = doc.value("role", "");
  if (role == "source") {
    m.role = DatasetRole::kSource;
  } else if (role == "target") {
    m.role = DatasetRole::kTarget;
  } else {
    throw ValidationError(context + ": role must be \"source\" or \"target\"");
  }
  if (!doc.contains("pairs") || !doc["pairs"].is_array()) {
    throw ValidationError(context + ": missing \"pairs\" array");
  }
  for (const auto& p : doc["pairs"]) {
    PairRecord rec;
    rec.id = p.value("id", "");
    rec.pre = detail::resolve(base_dir, p.value("pre", ""));
    rec.post = detail::resolve(base_dir, p.value("post", ""));
    if (p.contains("gt") && !p["gt"].is_null()) rec.gt = detail::resolve(base_dir, p["gt"].get<std::string>());
    m.pairs.push_back(std::move(rec));
  }
  m.content_hash = sha256_hex(text);
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw UpstreamMissing("manifest not found: " + path.string());
  auto m = parse_manifest(read_file_bytes(path), path.parent_path(), path.string());
  validate_manifest(m);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const auto base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  nlohmann::json doc;
  doc["schema"] = kManifestSchema;
  doc["role"] = to_string(m.role);
  doc["pairs"] = nlohmann::json::array();
  for (const auto& rec : m.pairs) {
    nlohmann::json p{{"id", rec.id}, {"pre", rel(rec.pre)}, {"post", rel(rec.post)}};
    if (rec.gt) p["gt"] = rel(*rec.gt);
    doc["pairs"].push_back(std::move(p));
  }
  write_file_bytes(path, doc.dump(2) + "\n");
}

/// Four-level damage raster to binary: 0 -> 0, {1,2,3} -> 1.
inline BinaryMap binarize_damage_levels(const Grid<std::uint8_t>& levels) {
  BinaryMap out(levels.height(), levels.width());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] > 3) {
      throw ValidationError("damage level " + std::to_string(levels[i]) + " outside {0,1,2,3}");
    }
    out[i] = levels[i] == 0 ? 0 : 1;
  }
  return out;
}

inline ImagePair load_pair(const PairRecord& rec) {
  ImagePair pair{rec.id, load_tile(rec.pre), load_tile(rec.post)};
  pair.validate();
  return pair;
}

inline BinaryMap load_ground_truth(const PairRecord& rec) {
  if (!rec.gt) throw ValidationError("pair '" + rec.id + "' has no ground truth");
  return binarize_damage_levels(read_gray8(*rec.gt));
}

inline std::vector<ImagePair> load_pairs(const DatasetManifest& m) {
  std::vector<ImagePair> out;
  out.reserve(m.pairs.size());
  for (const auto& rec : m.pairs) out.push_back(load_pair(rec));
  return out;
}

}  // namespace davi
