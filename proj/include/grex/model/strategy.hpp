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
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/geometry.hpp"
#include "grex/core/mask.hpp"
#include "grex/model/config.hpp"
#include "grex/model/rela.hpp"

namespace grex::model {

enum class StrategyKind { kThreshold, kTopK, kCountDriven, kFiftyPixel };

/// Rule that turns per-region outputs into the final mask and box list.
struct Strategy {
  StrategyKind kind = StrategyKind::kCountDriven;
  double tau = 0.7;          // box score threshold
  int k = 1;                 // top-k
  std::size_t min_pixels = 50;  // masks smaller than this are cleared (fifty_pixel)
  /// When set, a box overlapping an already kept box at IoU >= this value is
  /// skipped while ranking. Several regions cover one object and predict
  /// near-identical boxes, so this is on by default.
  std::optional<double> suppress_iou = 0.5;

  static Strategy threshold(double tau) { return {StrategyKind::kThreshold, tau}; }
  static Strategy top_k(int k) {
    Strategy s{StrategyKind::kTopK};
    s.k = k;
    return s;
  }
  static Strategy count_driven(double tau = 0.7) { return {StrategyKind::kCountDriven, tau}; }
  static Strategy fifty_pixel(double tau = 0.7) { return {StrategyKind::kFiftyPixel, tau}; }

  static Strategy parse(std::string_view name) {
    if (name == "threshold") return threshold(0.7);
    if (name == "count" || name == "count_driven") return count_driven();
    if (name == "fifty_pixel" || name == "50pix") return fifty_pixel();
    if (name.starts_with("top-") || name.starts_with("top_")) {
      const std::string num(name.substr(4));
      std::size_t pos = 0;
      int k = -1;
      try {
        k = std::stoi(num, &pos);
      } catch (...) {
        pos = 0;
      }
      if (pos == num.size() && pos > 0 && k >= 1) return top_k(k);
    }
    throw InvalidArgument("unknown strategy '" + std::string(name) +
                          "' (expected threshold, top-<k>, count or fifty_pixel)");
  }
};

struct SelectedOutput {
  BinaryMask mask;
  std::vector<ScoredBox> boxes;  // pixel coordinates, score from box_score()
  int count_class = 0;
};

/// Mean predicted mask probability over the pixels a box covers, after
/// clipping to the image. A box outside the image scores 0.
inline double mask_agreement(const ModelOutput& out, const Box& px) {
  const int n = out.image_size;
  const int x0 = std::max(0, int(std::floor(px.x1))), x1 = std::min(n, int(std::ceil(px.x2)));
  const int y0 = std::max(0, int(std::floor(px.y1))), y1 = std::min(n, int(std::ceil(px.y2)));
  if (x0 >= x1 || y0 >= y1) return 0.0;
  double sum = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) sum += 1.0 / (1.0 + std::exp(-out.image_logits(y, x)));
  return sum / double((x1 - x0) * (y1 - y0));
}

/// Score of region i's box: its region probability times the mask agreement
/// of the box. Regions lying off the targets can carry a high x_r but regress
/// boxes over background, and the agreement term pushes those down.
inline double box_score(const ModelOutput& out, std::size_t i, const Box& px) {
  return out.x_r[i] * mask_agreement(out, px);
}

/// Boxes in pixel space, sorted by descending score (stable on region index).
inline std::vector<ScoredBox> ranked_boxes(const ModelOutput& out, int width, int height) {
  std::vector<ScoredBox> boxes;
  boxes.reserve(out.boxes.size());
  for (std::size_t i = 0; i < out.boxes.size(); ++i) {
    const Box& n = out.boxes[i];
    const Box px{n.x1 * width, n.y1 * height, n.x2 * width, n.y2 * height};
    boxes.push_back({px, box_score(out, i, px)});
  }
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  return boxes;
}

inline BinaryMask binarize(const ModelOutput& out) {
  BinaryMask m(out.image_size, out.image_size);
  for (int y = 0; y < out.image_size; ++y)
    for (int x = 0; x < out.image_size; ++x)
      if (out.image_logits(y, x) > 0) m.set(y, x);
  return m;
}

namespace detail {

// Walks the ranked list, keeping boxes that pass `keep` and are not
// suppressed by an earlier kept box, up to `limit` boxes.
template <typename Keep>
std::vector<ScoredBox> take(const std::vector<ScoredBox>& ranked, std::size_t limit,
                            std::optional<double> suppress_iou, Keep keep) {
  std::vector<ScoredBox> out;
  for (const auto& b : ranked) {
    if (out.size() >= limit) break;
    if (!keep(b)) continue;
    if (suppress_iou && std::any_of(out.begin(), out.end(), [&](const ScoredBox& k) {
          return box_iou(k.box, b.box) >= *suppress_iou;
        }))
      continue;
    out.push_back(b);
  }
  return out;
}

}  // namespace detail

inline SelectedOutput select_outputs(const ModelOutput& out, const Strategy& s) {
  SelectedOutput r;
  r.mask = binarize(out);
  r.count_class = out.predicted_count_class();
  const auto ranked = ranked_boxes(out, out.image_size, out.image_size);
  const auto all = ranked.size();
  auto above = [&](const ScoredBox& b) { return b.score >= s.tau; };
  auto any = [](const ScoredBox&) { return true; };
  auto clear_small = [&] {
    if (r.mask.count() < s.min_pixels) r.mask.clear();
  };
  switch (s.kind) {
    case StrategyKind::kThreshold:
      r.boxes = detail::take(ranked, all, s.suppress_iou, above);
      break;
    case StrategyKind::kTopK:
      if (s.k < 1) throw InvalidArgument("top-k needs k >= 1");
      r.boxes = detail::take(ranked, std::size_t(s.k), s.suppress_iou, any);
      break;
    case StrategyKind::kCountDriven:
      if (r.count_class == 0) {
        r.mask.clear();
      } else if (r.count_class < kCountClasses - 1) {
        r.boxes = detail::take(ranked, std::size_t(r.count_class), s.suppress_iou, any);
      } else {
        r.boxes = detail::take(ranked, all, s.suppress_iou, above);
        clear_small();
      }
      break;
    case StrategyKind::kFiftyPixel:
      clear_small();
      r.boxes = detail::take(ranked, all, s.suppress_iou, above);
      break;
  }
  return r;
}

}  // namespace grex::model
