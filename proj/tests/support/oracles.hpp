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

// Independent brute-force references for the metric and model tests.

#include <functional>
#include <random>
#include <vector>

#include "grex/core/geometry.hpp"

namespace grex::testing {

struct AssignmentScore {
  int tp = 0;
  double total_iou = 0;
};

/// Best one-to-one assignment by enumeration: every prediction is either
/// left unmatched or paired with a free gt at IoU >= threshold. Maximizes the
/// number of pairs, then their summed IoU.
inline AssignmentScore exhaustive_assignment(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                             double threshold) {
  AssignmentScore best;
  std::vector<bool> used(gts.size(), false);
  std::function<void(std::size_t, int, double)> rec = [&](std::size_t p, int tp, double sum) {
    if (p == preds.size()) {
      if (tp > best.tp || (tp == best.tp && sum > best.total_iou)) best = {tp, sum};
      return;
    }
    rec(p + 1, tp, sum);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = box_iou(preds[p], gts[g]);
      if (iou < threshold) continue;
      used[g] = true;
      rec(p + 1, tp + 1, sum + iou);
      used[g] = false;
    }
  };
  rec(0, 0, 0.0);
  return best;
}

/// Boxes with integer corners on a small canvas so that heavy overlaps, ties
/// and exact duplicates all occur often.
inline Box random_small_box(std::mt19937_64& rng, int canvas = 12) {
  std::uniform_int_distribution<int> start(0, canvas - 1);
  const int x1 = start(rng), y1 = start(rng);
  std::uniform_int_distribution<int> w(1, canvas - x1), h(1, canvas - y1);
  return {double(x1), double(y1), double(x1 + w(rng)), double(y1 + h(rng))};
}

/// A prediction that perturbs a gt box by at most `jitter` per corner, or a
/// free box, so fixtures contain many IoU >= 0.5 candidates.
inline Box near_box(std::mt19937_64& rng, const Box& g, int jitter = 2) {
  std::uniform_int_distribution<int> d(-jitter, jitter);
  Box b{g.x1 + d(rng), g.y1 + d(rng), g.x2 + d(rng), g.y2 + d(rng)};
  if (b.x2 <= b.x1) b.x2 = b.x1 + 1;
  if (b.y2 <= b.y1) b.y2 = b.y1 + 1;
  return b;
}

struct MatchFixture {
  std::vector<Box> preds;
  std::vector<Box> gts;
};

inline MatchFixture random_match_fixture(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(0, 4);
  std::bernoulli_distribution near(0.7);
  MatchFixture f;
  const int ng = n(rng), np = n(rng);
  for (int i = 0; i < ng; ++i) f.gts.push_back(random_small_box(rng));
  for (int i = 0; i < np; ++i) {
    if (!f.gts.empty() && near(rng)) {
      std::uniform_int_distribution<std::size_t> pick(0, f.gts.size() - 1);
      f.preds.push_back(near_box(rng, f.gts[pick(rng)]));
    } else {
      f.preds.push_back(random_small_box(rng));
    }
  }
  return f;
}

/// True when no prediction reaches the threshold against two different gts,
/// i.e. every conflict is several predictions competing for one gt.
inline bool predictions_unambiguous(const MatchFixture& f, double threshold) {
  for (const auto& p : f.preds) {
    int hits = 0;
    for (const auto& g : f.gts) hits += box_iou(p, g) >= threshold;
    if (hits > 1) return false;
  }
  return true;
}

}  // namespace grex::testing
