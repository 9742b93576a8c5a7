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

// Synthetic paired imagery with planted building damage.
//
// A scene is a noisy ground texture with axis-aligned rectangular buildings.
// In the post image, damaged buildings have their roof replaced by a blend of
// roof and debris colour plus random texture. The ground-truth damage raster
// is exactly the union of damaged rectangles. The generator also emits an
// oracle segmenter description: each detected building is reported at the
// "intact" confidence, and at the "damaged" confidence in post images where
// it was damaged.
//
// Two presets model a domain shift: the source domain has dark, high-contrast
// debris; the target domain has a different palette, a global post-image
// illumination offset and soil-coloured, lower-contrast debris.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "davi/data_io.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/raster_io.hpp"
#include "davi/segmenter.hpp"
#include "davi/util.hpp"

namespace davi {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  double operator[](std::size_t c) const { return c == 0 ? r : (c == 1 ? g : b); }
};

inline void to_json(nlohmann::json& j, const Rgb& c) { j = {c.r, c.g, c.b}; }
inline void from_json(const nlohmann::json& j, Rgb& c) {
  c = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

struct DomainStyle {
  Rgb ground{0.42, 0.38, 0.30};
  double ground_noise = 0.035;
  double ground_tint_jitter = 0.03;
  std::vector<Rgb> roofs{{0.75, 0.75, 0.75}, {0.70, 0.35, 0.30}, {0.55, 0.60, 0.70}};
  double roof_noise = 0.02;
  Rgb debris{0.12, 0.11, 0.10};
  double debris_mix = 0.85;
  double debris_noise = 0.10;
  Rgb post_shift{0.0, 0.0, 0.0};
  double acquisition_noise = 0.015;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DomainStyle, ground, ground_noise,
                                                ground_tint_jitter, roofs, roof_noise, debris,
                                                debris_mix, debris_noise, post_shift,
                                                acquisition_noise)

struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t tile_size = 32;
  std::size_t min_buildings = 2;
  std::size_t max_buildings = 5;
  std::size_t min_building_size = 4;
  std::size_t max_building_size = 9;
  /// Probability that a pair contains any damage.
  double damage_fraction = 0.5;
  /// Within a damaged pair, probability that each building is damaged (at
  /// least one always is).
  double building_damage_prob = 0.5;
  DomainStyle style;
  double oracle_intact_confidence = 0.9;
  double oracle_damaged_confidence = 0.2;
  /// Probability the oracle fails to detect a building at all.
  double oracle_miss_rate = 0.0;
  std::string id_prefix = "pair";

  static SceneConfig source_preset(std::uint64_t seed) {
    SceneConfig c;
    c.seed = seed;
    c.id_prefix = "src";
    return c;
  }

  static SceneConfig target_preset(std::uint64_t seed) {
    SceneConfig c;
    c.seed = seed;
    c.id_prefix = "tgt";
    c.style.ground = {0.30, 0.40, 0.26};
    c.style.ground_noise = 0.045;
    c.style.roofs = {{0.85, 0.82, 0.78}, {0.60, 0.30, 0.25}, {0.45, 0.50, 0.62}};
    c.style.debris = {0.34, 0.30, 0.24};
    c.style.debris_mix = 0.70;
    c.style.debris_noise = 0.05;
    c.style.post_shift = {0.04, 0.03, 0.02};
    c.style.acquisition_noise = 0.02;
    c.oracle_miss_rate = 0.25;
    return c;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SceneConfig, seed, tile_size, min_buildings,
                                                max_buildings, min_building_size,
                                                max_building_size, damage_fraction,
                                                building_damage_prob, style,
                                                oracle_intact_confidence,
                                                oracle_damaged_confidence, oracle_miss_rate,
                                                id_prefix)

struct Building {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint8_t level = 0;  // 0 intact, 1..3 damage severity
  bool detected = true;    // visible to the oracle segmenter
};

struct SyntheticSample {
  ImagePair pair;
  Grid<std::uint8_t> levels;
  std::vector<Building> buildings;
  OracleConfig oracle;

  BinaryMap ground_truth() const { return binarize_damage_levels(levels); }
};

namespace detail {

inline bool overlaps(const Building& a, const Building& b) {
  // One pixel of clearance between buildings.
  return a.row < b.row + b.height + 1 && b.row < a.row + a.height + 1 &&
         a.col < b.col + b.width + 1 && b.col < a.col + a.width + 1;
}

inline ImageTile quantize(std::size_t h, std::size_t w, const std::vector<double>& v) {
  std::vector<std::uint8_t> rgb(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  }
  return ImageTile::from_rgb8(h, w, rgb);
}

}  // namespace detail

inline std::string synthetic_pair_id(const SceneConfig& config, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", index);
  return config.id_prefix + buf;
}

/// Deterministic in (config, index).
inline SyntheticSample synthesize_pair(const SceneConfig& config, std::size_t index) {
  const std::size_t n = config.tile_size;
  if (n < config.max_building_size + 2 || config.min_building_size == 0 ||
      config.min_building_size > config.max_building_size ||
      config.min_buildings > config.max_buildings) {
    throw ValidationError("scene config: inconsistent tile/building sizes");
  }
  const auto& st = config.style;
  if (st.roofs.empty()) throw ValidationError("scene config: roof palette is empty");

  Rng rng(mix_seed(config.seed, index));
  const bool damaged_pair = rng.bernoulli(config.damage_fraction);

  // Layout.
  std::vector<Building> buildings;
  std::vector<std::size_t> roof_of;
  const auto wanted = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(config.min_buildings), static_cast<std::int64_t>(config.max_buildings)));
  for (int attempt = 0; attempt < 200 && buildings.size() < wanted; ++attempt) {
    Building b;
    b.height = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config.min_building_size),
                                                        static_cast<std::int64_t>(config.max_building_size)));
    b.width = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config.min_building_size),
                                                       static_cast<std::int64_t>(config.max_building_size)));
    b.row = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n - b.height - 1)));
    b.col = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n - b.width - 1)));
    if (std::any_of(buildings.begin(), buildings.end(),
                    [&](const Building& o) { return detail::overlaps(b, o); })) {
      continue;
    }
    buildings.push_back(b);
    roof_of.push_back(static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(st.roofs.size()) - 1)));
  }

  // Damage and detection.
  if (damaged_pair && !buildings.empty()) {
    bool any = false;
    for (auto& b : buildings) {
      if (rng.bernoulli(config.building_damage_prob)) {
        b.level = static_cast<std::uint8_t>(rng.uniform_int(1, 3));
        any = true;
      }
    }
    if (!any) {
      auto pick = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(buildings.size()) - 1));
      buildings[pick].level = static_cast<std::uint8_t>(rng.uniform_int(1, 3));
    }
  }
  for (auto& b : buildings) b.detected = !rng.bernoulli(config.oracle_miss_rate);

  // Base scene (shared by pre and post).
  std::vector<double> base(n * n * 3);
  const Rgb tint{rng.uniform(-1, 1) * st.ground_tint_jitter, rng.uniform(-1, 1) * st.ground_tint_jitter,
                 rng.uniform(-1, 1) * st.ground_tint_jitter};
  for (std::size_t i = 0; i < n * n; ++i) {
    const double grain = rng.normal() * st.ground_noise;
    for (std::size_t c = 0; c < 3; ++c) base[i * 3 + c] = st.ground[c] + tint[c] + grain;
  }
  for (std::size_t k = 0; k < buildings.size(); ++k) {
    const auto& b = buildings[k];
    const Rgb& roof = st.roofs[roof_of[k]];
    for (std::size_t y = b.row; y < b.row + b.height; ++y) {
      for (std::size_t x = b.col; x < b.col + b.width; ++x) {
        const double grain = rng.normal() * st.roof_noise;
        for (std::size_t c = 0; c < 3; ++c) base[(y * n + x) * 3 + c] = roof[c] + grain;
      }
    }
  }

  // Post: damage, illumination offset.
  std::vector<double> post_scene = base;
  for (std::size_t k = 0; k < buildings.size(); ++k) {
    const auto& b = buildings[k];
    if (b.level == 0) continue;
    const double mix = std::min(1.0, st.debris_mix * (0.6 + 0.2 * b.level));
    const Rgb& roof = st.roofs[roof_of[k]];
    for (std::size_t y = b.row; y < b.row + b.height; ++y) {
      for (std::size_t x = b.col; x < b.col + b.width; ++x) {
        const double texture = rng.normal() * st.debris_noise;
        for (std::size_t c = 0; c < 3; ++c) {
          post_scene[(y * n + x) * 3 + c] = (1.0 - mix) * roof[c] + mix * st.debris[c] + texture;
        }
      }
    }
  }

  std::vector<double> pre = base;
  for (std::size_t i = 0; i < n * n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      pre[i * 3 + c] += rng.normal() * st.acquisition_noise;
      post_scene[i * 3 + c] += st.post_shift[c] + rng.normal() * st.acquisition_noise;
    }
  }

  SyntheticSample s;
  s.pair = ImagePair{synthetic_pair_id(config, index), detail::quantize(n, n, pre),
                     detail::quantize(n, n, post_scene)};
  s.levels = Grid<std::uint8_t>(n, n, std::uint8_t{0});
  for (const auto& b : buildings) {
    for (std::size_t y = b.row; y < b.row + b.height; ++y) {
      for (std::size_t x = b.col; x < b.col + b.width; ++x) s.levels(y, x) = b.level;
    }
  }
  s.buildings = buildings;

  auto& pre_regions = s.oracle.images[image_hash(s.pair.pre)];
  auto& post_regions = s.oracle.images[image_hash(s.pair.post)];
  for (const auto& b : buildings) {
    if (!b.detected) continue;
    pre_regions.push_back({b.row, b.col, b.height, b.width, config.oracle_intact_confidence});
    post_regions.push_back({b.row, b.col, b.height, b.width,
                            b.level > 0 ? config.oracle_damaged_confidence
                                        : config.oracle_intact_confidence});
  }
  return s;
}

inline std::vector<SyntheticSample> synthesize_samples(const SceneConfig& config,
                                                       std::size_t n_pairs) {
  std::vector<SyntheticSample> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) out.push_back(synthesize_pair(config, i));
  return out;
}

struct SyntheticDataset {
  DatasetManifest manifest;
  OracleConfig oracle;
};

/// Writes pre/, post/, gt/ rasters plus manifest.json, oracle.json and
/// scene.json under out_dir.
inline SyntheticDataset generate_synthetic_dataset(const SceneConfig& config, std::size_t n_pairs,
                                                   DatasetRole role, const fs::path& out_dir) {
  if (n_pairs == 0) throw ValidationError("synthetic dataset: n_pairs must be positive");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory '" + out_dir.string() + "': " + ec.message());

  SyntheticDataset ds;
  ds.manifest.role = role;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    auto s = synthesize_pair(config, i);
    PairRecord rec{s.pair.id, out_dir / "pre" / (s.pair.id + ".png"),
                   out_dir / "post" / (s.pair.id + ".png"), out_dir / "gt" / (s.pair.id + ".png")};
    write_tile(rec.pre, s.pair.pre);
    write_tile(rec.post, s.pair.post);
    write_gray8(*rec.gt, s.levels);
    ds.manifest.pairs.push_back(std::move(rec));
    ds.oracle.merge(s.oracle);
  }
  const auto manifest_path = out_dir / "manifest.json";
  save_manifest(ds.manifest, manifest_path);
  ds.manifest.content_hash = sha256_file(manifest_path);
  ds.oracle.save(out_dir / "oracle.json");
  write_file_bytes(out_dir / "scene.json", nlohmann::json(config).dump(2) + "\n");
  return ds;
}

}  // namespace davi
