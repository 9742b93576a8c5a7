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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "davi/errors.hpp"

namespace davi {

/// Dense row-major 2-D grid with value semantics.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), values_(height * width, fill) {
    check_dims();
  }

  Grid(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    check_dims();
    if (values_.size() != height_ * width_) {
      throw ValidationError("grid payload has " + std::to_string(values_.size()) +
                            " values, expected " + std::to_string(height_ * width_));
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const {
    return values_[row * width_ + col];
  }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  bool operator==(const Grid&) const = default;

 private:
  void check_dims() const {
    if (height_ == 0 || width_ == 0) {
      throw ValidationError("grid dimensions must be positive");
    }
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

/// A Grid with a distinct type per domain role, so a StdMap cannot be passed
/// where a ProbabilityMap is expected.
template <typename T, typename Tag>
class TaggedGrid : public Grid<T> {
 public:
  using Grid<T>::Grid;
  TaggedGrid() = default;
  explicit TaggedGrid(Grid<T> grid) : Grid<T>(std::move(grid)) {}
  bool operator==(const TaggedGrid&) const = default;
};

struct ProbabilityTag;
struct BinaryTag;
struct DiffTag;
struct StdTag;
struct ConfidenceTag;

/// Per-pixel change probability in [0,1].
using ProbabilityMap = TaggedGrid<float, ProbabilityTag>;
/// Per-pixel {0,1} map.
using BinaryMap = TaggedGrid<std::uint8_t, BinaryTag>;
/// Clipped pre-minus-post segmenter confidence, in [0,1].
using DiffMap = TaggedGrid<float, DiffTag>;
/// Per-pixel population standard deviation across prediction views.
using StdMap = TaggedGrid<float, StdTag>;

/// Segmenter confidence for one prompted object class.
struct ConfidenceMap : TaggedGrid<float, ConfidenceTag> {
  using TaggedGrid<float, ConfidenceTag>::TaggedGrid;
  ConfidenceMap() = default;
  ConfidenceMap(Grid<float> grid, std::string prompt_text)
      : TaggedGrid<float, ConfidenceTag>(std::move(grid)), prompt(std::move(prompt_text)) {}

  std::string prompt;

  bool operator==(const ConfidenceMap&) const = default;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) +
                        "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                        "x" + std::to_string(b.width()) + ")");
  }
}

}  // namespace davi
