// Copyright 2026 The grex Authors. All Rights Reserved.
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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/geometry.hpp"

namespace grex {

/// Dense binary mask, row-major, one byte per pixel (0 or 1).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw InvalidArgument("mask dimensions must be positive, got " +
                            std::to_string(height) + "x" + std::to_string(width));
    }
    bits_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int y, int x) const { return bits_[index(y, x)] != 0; }
  void set(int y, int x, bool v = true) { bits_[index(y, x)] = v ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<std::uint8_t> bits() { return bits_; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::accumulate(bits_.begin(), bits_.end(), 0LL));
  }
  bool empty() const { return count() == 0; }

  bool same_shape(const BinaryMask& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  /// In-place union.
  BinaryMask& operator|=(const BinaryMask& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= o.bits_[i];
    return *this;
  }

  void clear() { std::fill(bits_.begin(), bits_.end(), 0); }

  /// Tight bounding box of the foreground; x2/y2 exclusive. Zero box when empty.
  Box bounding_box() const {
    int x1 = width_, y1 = height_, x2 = -1, y2 = -1;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (at(y, x)) {
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x);
          y2 = std::max(y2, y);
        }
    if (x2 < 0) return {};
    return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
  }

  void require_same_shape(const BinaryMask& o) const {
    if (!same_shape(o)) {
      throw DimensionMismatch("mask shapes differ: " + std::to_string(height_) + "x" +
                              std::to_string(width_) + " vs " +
                              std::to_string(o.height_) + "x" + std::to_string(o.width_));
    }
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Uncompressed COCO run-length encoding: column-major, runs alternate
/// starting with background.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

inline RleMask rle_encode(const BinaryMask& mask) {
  RleMask rle{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width(); ++x) {
    for (int y = 0; y < mask.height(); ++y) {
      const std::uint8_t v = mask.at(y, x) ? 1 : 0;
      if (v != current) {
        rle.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

inline BinaryMask rle_decode(const RleMask& rle) {
  if (rle.height < 1 || rle.width < 1) {
    throw MalformedRle("RLE dimensions must be positive");
  }
  const std::uint64_t expected = std::uint64_t(rle.height) * std::uint64_t(rle.width);
  std::uint64_t total = 0;
  for (auto c : rle.counts) total += c;
  if (total != expected) {
    throw MalformedRle("RLE counts sum to " + std::to_string(total) + ", expected " +
                       std::to_string(expected));
  }
  BinaryMask mask(rle.height, rle.width);
  std::uint64_t pos = 0;
  bool fg = false;
  for (auto c : rle.counts) {
    if (fg) {
      for (std::uint64_t i = pos; i < pos + c; ++i) {
        const int x = static_cast<int>(i / rle.height);
        const int y = static_cast<int>(i % rle.height);
        mask.set(y, x);
      }
    }
    pos += c;
    fg = !fg;
  }
  return mask;
}

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

inline OverlapCounts overlap_counts(const BinaryMask& a, const BinaryMask& b) {
  a.require_same_shape(b);
  OverlapCounts c;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    c.intersection += (ab[i] & bb[i]);
    c.union_ += (ab[i] | bb[i]);
  }
  return c;
}

/// |a ∩ b| / |a ∪ b|; two empty masks count as identical (1.0).
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto c = overlap_counts(a, b);
  if (c.union_ == 0) return 1.0;
  return static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

}  // namespace grex
