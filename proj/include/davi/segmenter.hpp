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

// Promptable segmentation as a source of per-pixel object confidence.
//
// Three implementations share the Segmenter interface:
//   OracleSegmenter    answers from a scene description, keyed by image hash
//   ExternalSegmenter  HTTP adapter for a foundation-model service
//   CachedSegmenter    content-addressed disk cache in front of any backend
//
// External service protocol (JSON over HTTP):
//
//   POST <base>/segment
//     {"prompt": "Building", "height": H, "width": W,
//      "image": base64(H*W*3 RGB8 bytes, row-major)}
//   200 OK
//     {"instances": [{"score": 0.93, "mask": base64(H*W bytes, nonzero=inside)}]}
//
// Instance outputs become a dense map by taking, per pixel, the maximum of
// score x membership over all instances.

#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/raster_io.hpp"
#include "davi/util.hpp"

namespace davi {

inline constexpr const char* kDefaultPrompt = "Building";

struct SegmenterRequest {
  ImageTile image;
  std::string prompt = kDefaultPrompt;

  void validate() const {
    if (prompt.empty()) throw ValidationError("segmenter request: prompt must be non-empty");
    if (image.pixels() == 0) throw ValidationError("segmenter request: empty image");
    for (float v : image.values()) {
      if (!std::isfinite(v)) throw ValidationError("segmenter request: non-finite pixel value");
    }
  }
};

/// Content hash of a tile's normalized values (dimensions included).
inline std::string image_hash(const ImageTile& image) {
  Sha256 h;
  h.update("davi-image/1");
  h.update_u64(image.height());
  h.update_u64(image.width());
  h.update(image.values());
  return h.hex();
}

/// Stable key over image content, prompt and backend identity.
inline std::string cache_key(const SegmenterRequest& request, const std::string& backend_id) {
  request.validate();
  Sha256 h;
  h.update("davi-segment/1\n");
  h.update(image_hash(request.image));
  h.update("\n");
  h.update_u64(request.prompt.size());
  h.update(request.prompt);
  h.update_u64(backend_id.size());
  h.update(backend_id);
  return h.hex();
}

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string backend_id() const = 0;
  virtual ConfidenceMap segment(const SegmenterRequest& request) = 0;
};

struct ConfidencePair {
  ConfidenceMap pre;
  ConfidenceMap post;
};

inline ConfidencePair segment_pair(Segmenter& segmenter, const ImageTile& pre,
                                   const ImageTile& post,
                                   const std::string& prompt = kDefaultPrompt) {
  if (!pre.same_shape(post)) throw ShapeMismatch("segment_pair: pre and post differ in shape");
  return {segmenter.segment({pre, prompt}), segmenter.segment({post, prompt})};
}

struct InstanceMask {
  double score = 0.0;
  Grid<std::uint8_t> mask;  // nonzero = member
};

inline ConfidenceMap confidence_from_instances(std::size_t height, std::size_t width,
                                               const std::vector<InstanceMask>& instances,
                                               const std::string& prompt) {
  ConfidenceMap out(Grid<float>(height, width, 0.0f), prompt);
  for (const auto& inst : instances) {
    if (inst.mask.height() != height || inst.mask.width() != width) {
      throw ShapeMismatch("instance mask shape differs from image shape");
    }
    const auto score = static_cast<float>(std::clamp(inst.score, 0.0, 1.0));
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (inst.mask[i] != 0) out[i] = std::max(out[i], score);
    }
  }
  return out;
}

// --- Oracle ---------------------------------------------------------------

struct OracleRegion {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double confidence = 0.0;
};

/// Scene description the oracle answers from: for each known image hash, the
/// rectangles it "detects" and their confidence.
struct OracleConfig {
  std::string object_class = "building";
  std::map<std::string, std::vector<OracleRegion>> images;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["object_class"] = object_class;
    j["images"] = nlohmann::json::object();
    for (const auto& [hash, regions] : images) {
      auto& arr = j["images"][hash] = nlohmann::json::array();
      for (const auto& r : regions) {
        arr.push_back({{"row", r.row}, {"col", r.col}, {"height", r.height},
                       {"width", r.width}, {"confidence", r.confidence}});
      }
    }
    return j;
  }

  static OracleConfig from_json(const nlohmann::json& j) {
    OracleConfig c;
    c.object_class = j.value("object_class", "building");
    if (j.contains("images")) {
      for (const auto& [hash, arr] : j["images"].items()) {
        auto& regions = c.images[hash];
        for (const auto& r : arr) {
          regions.push_back({r.at("row").get<std::size_t>(), r.at("col").get<std::size_t>(),
                             r.at("height").get<std::size_t>(), r.at("width").get<std::size_t>(),
                             r.at("confidence").get<double>()});
        }
      }
    }
    return c;
  }

  void merge(const OracleConfig& other) {
    for (const auto& [hash, regions] : other.images) images[hash] = regions;
  }

  static OracleConfig load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file_bytes(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  void save(const std::filesystem::path& path) const {
    write_file_bytes(path, to_json().dump(1) + "\n");
  }
};

namespace detail {
inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}
}  // namespace detail

/// Pure lookup: unknown images and prompts for other classes give zeros.
class OracleSegmenter final : public Segmenter {
 public:
  explicit OracleSegmenter(OracleConfig config) : config_(std::move(config)) {}

  std::string backend_id() const override { return "oracle/1"; }

  ConfidenceMap segment(const SegmenterRequest& request) override {
    request.validate();
    const auto& img = request.image;
    ConfidenceMap out(Grid<float>(img.height(), img.width(), 0.0f), request.prompt);
    if (detail::lower(request.prompt) != detail::lower(config_.object_class)) return out;
    auto it = config_.images.find(image_hash(img));
    if (it == config_.images.end()) return out;
    for (const auto& r : it->second) {
      const auto conf = static_cast<float>(std::clamp(r.confidence, 0.0, 1.0));
      for (std::size_t y = r.row; y < std::min(r.row + r.height, img.height()); ++y) {
        for (std::size_t x = r.col; x < std::min(r.col + r.width, img.width()); ++x) {
          out(y, x) = std::max(out(y, x), conf);
        }
      }
    }
    return out;
  }

  const OracleConfig& config() const noexcept { return config_; }

 private:
  OracleConfig config_;
};

// --- External service -----------------------------------------------------

struct ExternalSegmenterOptions {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model_id = "remote";
  int timeout_seconds = 60;
  int max_attempts = 3;
  std::chrono::milliseconds retry_backoff{200};
};

class ExternalSegmenter final : public Segmenter {
 public:
  explicit ExternalSegmenter(ExternalSegmenterOptions options) : options_(std::move(options)) {}

  std::string backend_id() const override {
    return "external/" + options_.model_id + "@" + options_.base_url;
  }

  ConfidenceMap segment(const SegmenterRequest& request) override {
    request.validate();
    const auto& img = request.image;
    const auto rgb = img.to_rgb8();
    nlohmann::json body{{"prompt", request.prompt},
                        {"height", img.height()},
                        {"width", img.width()},
                        {"image", base64_encode(std::string_view(
                                      reinterpret_cast<const char*>(rgb.data()), rgb.size()))}};
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < std::max(1, options_.max_attempts); ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(options_.retry_backoff * attempt);
      std::string response;
      {
        // One request in flight per adapter instance.
        std::lock_guard lock(mu_);
        httplib::Client client(options_.base_url);
        client.set_connection_timeout(options_.timeout_seconds, 0);
        client.set_read_timeout(options_.timeout_seconds, 0);
        auto res = client.Post("/segment", payload, "application/json");
        if (!res) {
          last_error = "transport failure: " + httplib::to_string(res.error());
          continue;
        }
        if (res->status >= 500) {
          last_error = "backend returned HTTP " + std::to_string(res->status);
          continue;
        }
        if (res->status != 200) {
          throw BackendError("segmenter backend rejected request: HTTP " +
                                 std::to_string(res->status) + " " + res->body,
                             false);
        }
        response = std::move(res->body);
      }
      return decode_response(response, img.height(), img.width(), request.prompt);
    }
    throw BackendError("segmenter backend unavailable at " + options_.base_url + " (" +
                           last_error + ")",
                       true);
  }

  static ConfidenceMap decode_response(const std::string& body, std::size_t height,
                                       std::size_t width, const std::string& prompt) {
    std::vector<InstanceMask> instances;
    try {
      auto doc = nlohmann::json::parse(body);
      for (const auto& inst : doc.at("instances")) {
        const auto bytes = base64_decode(inst.at("mask").get<std::string>());
        if (bytes.size() != height * width) {
          throw BackendError("segmenter response: mask size does not match image", false);
        }
        InstanceMask m{inst.at("score").get<double>(),
                       Grid<std::uint8_t>(height, width,
                                          std::vector<std::uint8_t>(bytes.begin(), bytes.end()))};
        if (!std::isfinite(m.score)) throw BackendError("segmenter response: non-finite score", false);
        instances.push_back(std::move(m));
      }
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("segmenter response malformed: ") + e.what(), false);
    } catch (const ValidationError& e) {
      throw BackendError(std::string("segmenter response malformed: ") + e.what(), false);
    }
    return confidence_from_instances(height, width, instances, prompt);
  }

 private:
  ExternalSegmenterOptions options_;
  std::mutex mu_;
};

// --- Disk cache -----------------------------------------------------------

/// Cache layout: <dir>/<key>.davg holds the confidence grid, <key>.json the
/// prompt, backend id and image hash. Files are written to a temporary name
/// and renamed, so readers never observe a partial entry.
class CachedSegmenter final : public Segmenter {
 public:
  CachedSegmenter(Segmenter& backend, std::filesystem::path dir)
      : backend_(backend), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string backend_id() const override { return backend_.backend_id(); }

  ConfidenceMap segment(const SegmenterRequest& request) override {
    const auto key = cache_key(request, backend_.backend_id());
    if (auto hit = lookup(key, request)) {
      ++hits_;
      return *hit;
    }
    ++backend_calls_;
    auto map = backend_.segment(request);
    store(key, request, map);
    return map;
  }

  std::size_t backend_calls() const noexcept { return backend_calls_; }
  std::size_t hits() const noexcept { return hits_; }
  const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  std::optional<ConfidenceMap> lookup(const std::string& key, const SegmenterRequest& request) {
    const auto grid_path = dir_ / (key + ".davg");
    const auto meta_path = dir_ / (key + ".json");
    std::lock_guard lock(mu_);
    if (!std::filesystem::exists(grid_path) || !std::filesystem::exists(meta_path)) {
      return std::nullopt;
    }
    auto meta = nlohmann::json::parse(read_file_bytes(meta_path), nullptr, false);
    if (meta.is_discarded() || meta.value("prompt", "") != request.prompt ||
        meta.value("backend", "") != backend_.backend_id()) {
      return std::nullopt;
    }
    auto grid = decode_davg<TaggedGrid<float, ConfidenceTag>>(read_file_bytes(grid_path),
                                                              grid_path.string());
    ConfidenceMap map(static_cast<Grid<float>>(grid), request.prompt);
    return map;
  }

  void store(const std::string& key, const SegmenterRequest& request, const ConfidenceMap& map) {
    nlohmann::json meta{{"prompt", request.prompt},
                        {"backend", backend_.backend_id()},
                        {"image_hash", image_hash(request.image)},
                        {"height", map.height()},
                        {"width", map.width()}};
    std::lock_guard lock(mu_);
    const auto grid_path = dir_ / (key + ".davg");
    const auto meta_path = dir_ / (key + ".json");
    write_atomically(grid_path, encode_davg(map));
    write_atomically(meta_path, meta.dump(2) + "\n");
  }

  static void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    write_file_bytes(tmp, bytes);
    std::filesystem::rename(tmp, path);
  }

  Segmenter& backend_;
  std::filesystem::path dir_;
  std::mutex mu_;
  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> hits_{0};
};

}  // namespace davi
