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
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/mask.hpp"
#include "grex/core/parallel.hpp"
#include "grex/dataset/sample.hpp"

namespace grex::metrics {

inline constexpr std::array<double, 5> kPrecisionThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

struct SegPrediction {
  Id ref_id = 0;
  BinaryMask mask;
  std::optional<bool> declared_no_target;
};

/// Honors a declared no-target verdict by clearing the mask.
inline SegPrediction apply_declared_no_target(SegPrediction p) {
  if (p.declared_no_target.value_or(false)) p.mask.clear();
  return p;
}

struct SegReport {
  double giou = 0;
  double ciou = 0;
  /// Set when the dataset has zero total union; `ciou` is then reported as 0.
  bool ciou_degenerate = false;
  std::map<double, double> pr_at;
  std::optional<double> n_acc;  // empty when there are no no-target samples
  std::optional<double> t_acc;  // empty when there are no target samples
  std::vector<double> per_sample_iou;
  std::size_t no_target_samples = 0;
  std::size_t target_samples = 0;
  std::size_t total_intersection = 0;
  std::size_t total_union = 0;
};

/// IoU of one sample with the no-target rules applied: an empty prediction
/// on a no-target sample scores 1, any foreground scores 0.
inline double per_sample_iou(const SegPrediction& pred, const GrexSample& gt) {
  pred.mask.require_same_shape(gt.gt_mask);
  if (gt.no_target) return pred.mask.empty() ? 1.0 : 0.0;
  return mask_iou(pred.mask, gt.gt_mask);
}

using SegPair = std::pair<SegPrediction, GrexSample>;

inline SegReport evaluate_gres(const std::vector<SegPair>& pairs, std::size_t workers = 1) {
  if (pairs.empty()) throw InvalidArgument("evaluate_gres: no samples");
  for (const auto& [pred, gt] : pairs)
    if (pred.ref_id != gt.ref_id)
      throw InvalidArgument("prediction ref_id " + std::to_string(pred.ref_id) +
                            " paired with sample ref_id " + std::to_string(gt.ref_id));

  struct PerSample {
    double iou = 0;
    OverlapCounts counts;
    bool pred_empty = true;
  };
  std::vector<PerSample> per(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const auto& [pred, gt] = pairs[i];
    per[i].iou = per_sample_iou(pred, gt);
    per[i].counts = overlap_counts(pred.mask, gt.gt_mask);
    per[i].pred_empty = pred.mask.empty();
  });

  SegReport r;
  std::size_t n_tp = 0, t_tn = 0;
  std::map<double, std::size_t> hits;
  double iou_sum = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& gt = pairs[i].second;
    const auto& p = per[i];
    r.per_sample_iou.push_back(p.iou);
    iou_sum += p.iou;
    // no-target samples add their false-positive pixels to the union only
    r.total_intersection += p.counts.intersection;
    r.total_union += p.counts.union_;
    for (double x : kPrecisionThresholds)
      if (p.iou > x) ++hits[x];
    if (gt.no_target) {
      ++r.no_target_samples;
      if (p.pred_empty) ++n_tp;
    } else {
      ++r.target_samples;
      if (!p.pred_empty) ++t_tn;
    }
  }
  const double n = static_cast<double>(pairs.size());
  r.giou = iou_sum / n;
  if (r.total_union == 0) {
    r.ciou = 0;
    r.ciou_degenerate = true;
  } else {
    r.ciou = static_cast<double>(r.total_intersection) / static_cast<double>(r.total_union);
  }
  for (double x : kPrecisionThresholds) r.pr_at[x] = static_cast<double>(hits[x]) / n;
  if (r.no_target_samples)
    r.n_acc = static_cast<double>(n_tp) / static_cast<double>(r.no_target_samples);
  if (r.target_samples)
    r.t_acc = static_cast<double>(t_tn) / static_cast<double>(r.target_samples);
  return r;
}

}  // namespace grex::metrics
