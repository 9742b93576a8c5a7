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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "davi/errors.hpp"

namespace davi {

/// Three-channel image, interleaved HWC, values normalized to [0,1].
class ImageTile {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageTile() = default;
  ImageTile(std::size_t height, std::size_t width, float fill = 0.0f)
      : height_(height), width_(width), values_(height * width * kChannels, fill) {
    if (height == 0 || width == 0) throw ValidationError("image dimensions must be positive");
  }
  ImageTile(std::size_t height, std::size_t width, std::vector<float> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (height == 0 || width == 0) throw ValidationError("image dimensions must be positive");
    if (values_.size() != height * width * kChannels) {
      throw ValidationError("image payload size does not match 3-channel dimensions");
    }
  }

  /// 8-bit RGB bytes divided by 255.
  static ImageTile from_rgb8(std::size_t height, std::size_t width,
                             std::span<const std::uint8_t> rgb) {
    if (rgb.size() != height * width * kChannels) {
      throw ValidationError("rgb8 payload size does not match dimensions");
    }
    std::vector<float> v(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) v[i] = static_cast<float>(rgb[i]) / 255.0f;
    return ImageTile(height, width, std::move(v));
  }

  std::vector<std::uint8_t> to_rgb8() const {
    std::vector<std::uint8_t> out(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const float c = values_[i] < 0.0f ? 0.0f : (values_[i] > 1.0f ? 1.0f : values_[i]);
      out[i] = static_cast<std::uint8_t>(std::lround(c * 255.0f));
    }
    return out;
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return height_ * width_; }

  float& at(std::size_t row, std::size_t col, std::size_t ch) {
    return values_[(row * width_ + col) * kChannels + ch];
  }
  float at(std::size_t row, std::size_t col, std::size_t ch) const {
    return values_[(row * width_ + col) * kChannels + ch];
  }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  bool same_shape(const ImageTile& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }

  bool operator==(const ImageTile&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

/// Co-registered pre/post images of one scene.
struct ImagePair {
  std::string id;
  ImageTile pre;
  ImageTile post;

  std::size_t height() const noexcept { return pre.height(); }
  std::size_t width() const noexcept { return pre.width(); }

  void validate() const {
    if (!pre.same_shape(post)) {
      throw ShapeMismatch("image pair '" + id + "': pre and post differ in shape");
    }
  }
};

}  // namespace davi
