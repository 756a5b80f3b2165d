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

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/geometry.hpp"

namespace grex::model {

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// O(rows^2 * cols) shortest augmenting path form of the Hungarian method.
/// Returns the column chosen for each row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost[0].size();
  if (m < n) throw InvalidArgument("hungarian: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j;
  for (auto& c : row_to_col) c -= 1;
  return row_to_col;
}

/// L1 distance on (cx, cy, w, h) plus (1 - GIoU).
inline double box_match_cost(const Box& pred, const Box& gt) {
  const double l1 = std::abs((pred.x1 + pred.x2) / 2 - (gt.x1 + gt.x2) / 2) +
                    std::abs((pred.y1 + pred.y2) / 2 - (gt.y1 + gt.y2) / 2) +
                    std::abs(pred.width() - gt.width()) + std::abs(pred.height() - gt.height());
  return l1 + (1.0 - box_giou(pred, gt));
}

struct BoxAssignment {
  std::size_t gt = 0;
  std::size_t pred = 0;
  double cost = 0;
};

/// Optimal one-to-one assignment of ground-truth boxes to predicted region
/// boxes for the box loss. Unassigned predictions get no box loss.
inline std::vector<BoxAssignment> match_for_box_loss(const std::vector<Box>& preds,
                                                     const std::vector<Box>& gts) {
  if (gts.size() > preds.size())
    throw InvalidArgument("more ground-truth boxes (" + std::to_string(gts.size()) +
                          ") than regions (" + std::to_string(preds.size()) + ")");
  if (gts.empty()) return {};
  std::vector<std::vector<double>> cost(gts.size(), std::vector<double>(preds.size()));
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (std::size_t p = 0; p < preds.size(); ++p) cost[g][p] = box_match_cost(preds[p], gts[g]);
  const auto cols = hungarian(cost);
  std::vector<BoxAssignment> out;
  for (std::size_t g = 0; g < gts.size(); ++g) out.push_back({g, cols[g], cost[g][cols[g]]});
  return out;
}

}  // namespace grex::model
