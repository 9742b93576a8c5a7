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

// On-disk raster formats.
//
//   * 8-bit PNG (RGB tiles, single-channel label rasters), via libpng.
//   * "DAVG" array container for real-valued grids:
//
//       offset  size  field
//       0       4     magic "DAVG"
//       4       4     format version (u32, currently 1)
//       8       4     dtype code (u32, 1 = float32)
//       12      4     height (u32)
//       16      4     width (u32)
//       20      4*h*w row-major float32 payload
//
//     All integers and floats little-endian.

#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "davi/errors.hpp"
#include "davi/grid.hpp"
#include "davi/image.hpp"
#include "davi/util.hpp"

namespace davi {

struct RawRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::string encode_png(const RawRaster& r) {
  if (r.channels != 1 && r.channels != 3) throw ValidationError("png: 1 or 3 channels supported");
  if (r.pixels.size() != r.height * r.width * r.channels) {
    throw ValidationError("png: payload size does not match dimensions");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width);
  image.height = static_cast<png_uint_32>(r.height);
  image.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, r.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, r.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

/// Decodes a PNG keeping its native channel layout (gray or RGB). Alpha and
/// palette images are rejected.
inline RawRaster decode_png(std::string_view bytes, const std::string& context) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ValidationError(context + ": not a readable PNG (" + image.message + ")");
  }
  if ((image.format & PNG_FORMAT_FLAG_ALPHA) != 0) {
    png_image_free(&image);
    throw ValidationError(context + ": alpha channel not supported");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawRaster r;
  r.height = image.height;
  r.width = image.width;
  r.channels = color ? 3 : 1;
  r.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    throw ValidationError(context + ": PNG decode failed (" + image.message + ")");
  }
  return r;
}

inline RawRaster read_png(const std::filesystem::path& path) {
  return decode_png(read_file_bytes(path), path.string());
}

inline void write_png(const std::filesystem::path& path, const RawRaster& r) {
  write_file_bytes(path, encode_png(r));
}

inline ImageTile load_tile(const std::filesystem::path& path) {
  auto r = read_png(path);
  if (r.channels != 3) {
    throw ValidationError(path.string() + ": image tiles must have exactly 3 channels");
  }
  return ImageTile::from_rgb8(r.height, r.width, r.pixels);
}

inline void write_tile(const std::filesystem::path& path, const ImageTile& tile) {
  write_png(path, RawRaster{tile.height(), tile.width(), 3, tile.to_rgb8()});
}

/// Single-channel 8-bit raster as a byte grid.
inline Grid<std::uint8_t> read_gray8(const std::filesystem::path& path) {
  auto r = read_png(path);
  if (r.channels != 1) throw ValidationError(path.string() + ": expected a single-channel raster");
  return Grid<std::uint8_t>(r.height, r.width, std::move(r.pixels));
}

inline void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  write_png(path, RawRaster{g.height(), g.width(), 1, g.storage()});
}

/// Binary maps are stored as {0 -> 0, 1 -> 255}.
inline std::string encode_binary_map(const BinaryMap& m) {
  std::vector<std::uint8_t> px(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) px[i] = m[i] ? 255 : 0;
  return encode_png(RawRaster{m.height(), m.width(), 1, std::move(px)});
}

inline void write_binary_map(const BinaryMap& m, const std::filesystem::path& path) {
  write_file_bytes(path, encode_binary_map(m));
}

inline BinaryMap read_binary_map(const std::filesystem::path& path) {
  auto g = read_gray8(path);
  BinaryMap m(g.height(), g.width());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] == 255) {
      m[i] = 1;
    } else if (g[i] != 0) {
      throw ValidationError(path.string() + ": binary raster holds a value other than 0/255");
    }
  }
  return m;
}

// --- DAVG container -------------------------------------------------------

inline constexpr std::string_view kDavgMagic = "DAVG";
inline constexpr std::uint32_t kDavgVersion = 1;
inline constexpr std::uint32_t kDavgFloat32 = 1;

template <typename Tag>
std::string encode_davg(const TaggedGrid<float, Tag>& g) {
  ByteWriter w;
  w.bytes(kDavgMagic);
  w.put<std::uint32_t>(kDavgVersion);
  w.put<std::uint32_t>(kDavgFloat32);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.height()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.width()));
  for (float v : g) w.put<float>(v);
  return w.str();
}

template <typename GridT>
GridT decode_davg(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.bytes(4) != kDavgMagic) throw ValidationError(context + ": bad DAVG magic");
  if (auto v = r.get<std::uint32_t>(); v != kDavgVersion) {
    throw ValidationError(context + ": unsupported DAVG version " + std::to_string(v));
  }
  if (auto d = r.get<std::uint32_t>(); d != kDavgFloat32) {
    throw ValidationError(context + ": unsupported DAVG dtype " + std::to_string(d));
  }
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (r.remaining() != n * sizeof(float)) throw ValidationError(context + ": payload size mismatch");
  std::vector<float> values(n);
  for (auto& v : values) v = r.get<float>();
  return GridT(h, w, std::move(values));
}

inline void write_probability_map(const ProbabilityMap& m, const std::filesystem::path& path) {
  write_file_bytes(path, encode_davg(m));
}

inline ProbabilityMap read_probability_map(const std::filesystem::path& path) {
  return decode_davg<ProbabilityMap>(read_file_bytes(path), path.string());
}

}  // namespace davi
