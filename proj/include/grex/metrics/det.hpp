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
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/geometry.hpp"
#include "grex/dataset/sample.hpp"

namespace grex::metrics {

struct DetPrediction {
  Id ref_id = 0;
  std::vector<ScoredBox> boxes;
};

struct MatchedPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0;
};

struct MatchResult {
  std::vector<MatchedPair> tp_pairs;
  std::vector<std::size_t> fp_preds;
  std::vector<std::size_t> fn_gts;
};

/// One-to-one matching by descending IoU. Every (pred, gt) pair with
/// IoU >= threshold is a candidate; a pair is accepted when neither end is
/// taken yet. Ties go to the lower prediction index, then the lower gt index.
inline MatchResult match_boxes(std::span<const Box> preds, std::span<const Box> gts,
                               double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold <= 1))
    throw InvalidArgument("IoU threshold must lie in (0, 1]");
  std::vector<MatchedPair> cands;
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = box_iou(preds[p], gts[g]);
      if (iou >= iou_threshold) cands.push_back({p, g, iou});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const MatchedPair& a, const MatchedPair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.pred, a.gt) < std::tie(b.pred, b.gt);
  });
  std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
  MatchResult r;
  for (const auto& c : cands) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = true;
    r.tp_pairs.push_back(c);
  }
  for (std::size_t p = 0; p < preds.size(); ++p)
    if (!pred_used[p]) r.fp_preds.push_back(p);
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!gt_used[g]) r.fn_gts.push_back(g);
  return r;
}

inline std::vector<Box> boxes_of(const std::vector<ScoredBox>& scored) {
  std::vector<Box> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.box);
  return out;
}

/// F1 = 1 for this sample: no FP and no FN. A no-target sample succeeds only
/// with an empty prediction.
inline bool sample_success(const DetPrediction& pred, const GrexSample& gt,
                           double iou_threshold = 0.5) {
  if (gt.no_target) return pred.boxes.empty();
  const auto boxes = boxes_of(pred.boxes);
  const auto m = match_boxes(boxes, gt.gt_boxes, iou_threshold);
  return m.fp_preds.empty() && m.fn_gts.empty();
}

struct DetReport {
  double pr_f1 = 0;
  std::optional<double> n_acc;
  std::optional<double> t_acc;
  std::optional<double> ap;
  std::size_t no_target_samples = 0;
  std::size_t target_samples = 0;
  std::vector<bool> success;
};

using DetPair = std::pair<DetPrediction, GrexSample>;

namespace detail {
inline void check_aligned(const std::vector<DetPair>& pairs) {
  for (const auto& [pred, gt] : pairs)
    if (pred.ref_id != gt.ref_id)
      throw InvalidArgument("prediction ref_id " + std::to_string(pred.ref_id) +
                            " paired with sample ref_id " + std::to_string(gt.ref_id));
}
}  // namespace detail

/// Pr@(F1=1, IoU>=0.5), N-acc and T-acc over already-selected predictions.
inline DetReport evaluate_grec(const std::vector<DetPair>& pairs, double iou_threshold = 0.5) {
  if (pairs.empty()) throw InvalidArgument("evaluate_grec: no samples");
  detail::check_aligned(pairs);
  DetReport r;
  std::size_t ok = 0, n_tp = 0, t_tn = 0;
  for (const auto& [pred, gt] : pairs) {
    const bool s = sample_success(pred, gt, iou_threshold);
    r.success.push_back(s);
    ok += s;
    if (gt.no_target) {
      ++r.no_target_samples;
      n_tp += pred.boxes.empty();
    } else {
      ++r.target_samples;
      t_tn += !pred.boxes.empty();
    }
  }
  r.pr_f1 = static_cast<double>(ok) / static_cast<double>(pairs.size());
  if (r.no_target_samples)
    r.n_acc = static_cast<double>(n_tp) / static_cast<double>(r.no_target_samples);
  if (r.target_samples)
    r.t_acc = static_cast<double>(t_tn) / static_cast<double>(r.target_samples);
  return r;
}

/// Area under the precision-recall curve at one IoU threshold, all-point
/// interpolation. Within a sample, predictions are matched in descending
/// score order to the best still-free gt box.
inline double average_precision_at(const std::vector<DetPair>& pairs, double iou_threshold) {
  struct Ranked {
    double score;
    std::size_t sample;
    std::size_t index;
    bool tp;
  };
  std::vector<Ranked> ranked;
  std::size_t n_gt = 0;
  for (std::size_t s = 0; s < pairs.size(); ++s) {
    const auto& [pred, gt] = pairs[s];
    n_gt += gt.gt_boxes.size();
    std::vector<std::size_t> order(pred.boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pred.boxes[a].score > pred.boxes[b].score;
    });
    std::vector<bool> taken(gt.gt_boxes.size(), false);
    for (std::size_t p : order) {
      double best = iou_threshold;
      std::optional<std::size_t> best_g;
      for (std::size_t g = 0; g < gt.gt_boxes.size(); ++g) {
        if (taken[g]) continue;
        const double iou = box_iou(pred.boxes[p].box, gt.gt_boxes[g]);
        if (iou >= best && (!best_g || iou > best)) {
          best = iou;
          best_g = g;
        }
      }
      if (best_g) taken[*best_g] = true;
      ranked.push_back({pred.boxes[p].score, s, p, best_g.has_value()});
    }
  }
  if (n_gt == 0 || ranked.empty()) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<double> precision(ranked.size()), recall(ranked.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  // precision envelope, then sum of rectangles at each recall step
  for (std::size_t i = ranked.size() - 1; i > 0; --i)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

/// Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95 on raw scored boxes.
inline double average_precision(const std::vector<DetPair>& pairs) {
  detail::check_aligned(pairs);
  for (const auto& [pred, gt] : pairs)
    for (const auto& b : pred.boxes)
      if (std::isnan(b.score))
        throw InvalidArgument("average precision needs a score on every box (ref_id " +
                              std::to_string(pred.ref_id) + ")");
  double sum = 0;
  for (int k = 0; k < 10; ++k) sum += average_precision_at(pairs, 0.5 + 0.05 * k);
  return sum / 10.0;
}

}  // namespace grex::metrics
