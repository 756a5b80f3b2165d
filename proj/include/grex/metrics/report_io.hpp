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
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grex/core/error.hpp"
#include "grex/dataset/io.hpp"
#include "grex/metrics/det.hpp"
#include "grex/metrics/gen.hpp"
#include "grex/metrics/seg.hpp"

namespace grex::metrics {

using json = nlohmann::json;

// Prediction files ----------------------------------------------------------
//
//   segmentation: [{"ref_id", "mask": {"size": [h, w], "counts": [...]}, "no_target"?}]
//   detection:    [{"ref_id", "boxes": [{"bbox": [x, y, w, h], "score"?}]}]
//   generation:   [{"ref_id", "expression"}]
//
// A top-level object with a "predictions" array is accepted as well.

namespace detail {

inline const json& prediction_array(const json& doc, const std::string& file) {
  const json& arr = doc.is_object() && doc.contains("predictions") ? doc.at("predictions") : doc;
  if (!arr.is_array()) throw SchemaError(file + ": expected an array of predictions");
  return arr;
}

inline Id ref_of(const json& rec, const std::string& where) {
  if (!rec.is_object() || !rec.contains("ref_id") || !rec.at("ref_id").is_number_integer())
    throw SchemaError(where + ": missing integer 'ref_id'");
  return rec.at("ref_id").get<Id>();
}

}  // namespace detail

inline std::vector<SegPrediction> parse_seg_predictions(const json& doc, const std::string& file = "predictions") {
  std::vector<SegPrediction> out;
  const auto& arr = detail::prediction_array(doc, file);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = file + ": [" + std::to_string(i) + "]";
    SegPrediction p;
    p.ref_id = detail::ref_of(arr[i], where);
    if (!arr[i].contains("mask")) throw SchemaError(where + ": missing 'mask'");
    try {
      p.mask = rle_decode(rle_from_json(arr[i].at("mask"), where + ".mask"));
    } catch (const MalformedRle& e) {
      throw SchemaError(where + ".mask: " + e.what());
    }
    if (arr[i].contains("no_target")) p.declared_no_target = arr[i].at("no_target").get<bool>();
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<DetPrediction> parse_det_predictions(const json& doc, const std::string& file = "predictions") {
  std::vector<DetPrediction> out;
  const auto& arr = detail::prediction_array(doc, file);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = file + ": [" + std::to_string(i) + "]";
    DetPrediction p;
    p.ref_id = detail::ref_of(arr[i], where);
    if (!arr[i].contains("boxes") || !arr[i].at("boxes").is_array())
      throw SchemaError(where + ": missing 'boxes' array");
    const auto& boxes = arr[i].at("boxes");
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const std::string bw = where + ".boxes[" + std::to_string(k) + "]";
      if (!boxes[k].contains("bbox")) throw SchemaError(bw + ": missing 'bbox'");
      ScoredBox sb;
      sb.box = box_from_json(boxes[k].at("bbox"), bw + ".bbox");
      // A missing score is recorded as NaN so AP can refuse it explicitly.
      sb.score = boxes[k].contains("score") ? boxes[k].at("score").get<double>()
                                             : std::numeric_limits<double>::quiet_NaN();
      if (!std::isnan(sb.score) && (sb.score < 0 || sb.score > 1))
        throw SchemaError(bw + ": score outside [0, 1]");
      p.boxes.push_back(sb);
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct Candidate {
  Id ref_id = 0;
  std::string expression;
};

inline std::vector<Candidate> parse_candidates(const json& doc, const std::string& file = "candidates") {
  std::vector<Candidate> out;
  const auto& arr = detail::prediction_array(doc, file);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = file + ": [" + std::to_string(i) + "]";
    const Id id = detail::ref_of(arr[i], where);
    if (!arr[i].contains("expression") || !arr[i].at("expression").is_string())
      throw SchemaError(where + ": missing string 'expression'");
    out.push_back({id, arr[i].at("expression").get<std::string>()});
  }
  return out;
}

/// Pairs predictions with samples by ref_id. Every sample needs exactly one
/// prediction and every prediction must name a sample; otherwise the error
/// lists the offending ref_ids.
template <typename P>
std::vector<std::pair<P, GrexSample>> align(std::vector<P> preds, const std::vector<GrexSample>& samples) {
  std::map<Id, P> by_id;
  std::vector<Id> dup, unknown, missing;
  std::set<Id> known;
  for (const auto& s : samples) known.insert(s.ref_id);
  for (auto& p : preds) {
    const Id id = p.ref_id;
    if (!known.count(id)) unknown.push_back(id);
    else if (!by_id.emplace(id, std::move(p)).second) dup.push_back(id);
  }
  std::vector<std::pair<P, GrexSample>> out;
  for (const auto& s : samples) {
    auto it = by_id.find(s.ref_id);
    if (it == by_id.end()) missing.push_back(s.ref_id);
    else out.push_back({std::move(it->second), s});
  }
  auto list = [](const std::vector<Id>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + std::to_string(ids[i]);
    if (ids.size() > 20) s += ", ... (" + std::to_string(ids.size()) + " total)";
    return s;
  };
  std::string msg;
  if (!missing.empty()) msg += "missing predictions for ref_ids: " + list(missing) + "\n";
  if (!unknown.empty()) msg += "predictions for unknown ref_ids: " + list(unknown) + "\n";
  if (!dup.empty()) msg += "duplicate predictions for ref_ids: " + list(dup) + "\n";
  if (!msg.empty()) {
    msg.pop_back();
    throw InvalidArgument(msg);
  }
  return out;
}

// Box selection on prediction files -------------------------------------------

enum class BoxSelection { kAsGiven, kThreshold, kTopK, kCount };

struct BoxSelectionOptions {
  BoxSelection mode = BoxSelection::kAsGiven;
  double tau = 0.7;
  int k = 1;
  std::map<Id, int> counts;  // for kCount
};

/// Applies the selection rule to one prediction's raw boxes. Threshold and
/// top-k need scores; ties in top-k keep the earlier box.
inline std::vector<ScoredBox> select_boxes(const DetPrediction& p, const BoxSelectionOptions& o) {
  if (o.mode == BoxSelection::kAsGiven) return p.boxes;
  for (const auto& b : p.boxes)
    if (std::isnan(b.score))
      throw InvalidArgument("ref_id " + std::to_string(p.ref_id) + ": box selection needs scores");
  std::vector<ScoredBox> sorted = p.boxes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::size_t keep = 0;
  switch (o.mode) {
    case BoxSelection::kThreshold:
      keep = std::size_t(std::count_if(sorted.begin(), sorted.end(),
                                       [&](const ScoredBox& b) { return b.score >= o.tau; }));
      break;
    case BoxSelection::kTopK:
      if (o.k < 1) throw InvalidArgument("top-k needs k >= 1");
      keep = std::size_t(o.k);
      break;
    case BoxSelection::kCount: {
      const auto it = o.counts.find(p.ref_id);
      if (it == o.counts.end()) throw InvalidArgument("no count for ref_id " + std::to_string(p.ref_id));
      if (it->second < 0) throw InvalidArgument("negative count for ref_id " + std::to_string(p.ref_id));
      keep = std::size_t(it->second);
      break;
    }
    case BoxSelection::kAsGiven: break;
  }
  sorted.resize(std::min(keep, sorted.size()));
  return sorted;
}

// Reports ---------------------------------------------------------------------

inline std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const SegReport& r) {
  json pr = json::object();
  for (const auto& [t, v] : r.pr_at) pr[threshold_key(t)] = v;
  return {{"giou", r.giou},
          {"ciou", r.ciou},
          {"ciou_degenerate", r.ciou_degenerate},
          {"pr_at", pr},
          {"n_acc", optional_json(r.n_acc)},
          {"t_acc", optional_json(r.t_acc)},
          {"no_target_samples", r.no_target_samples},
          {"target_samples", r.target_samples},
          {"total_intersection", r.total_intersection},
          {"total_union", r.total_union}};
}

inline json to_json(const DetReport& r) {
  return {{"pr_f1", r.pr_f1},
          {"n_acc", optional_json(r.n_acc)},
          {"t_acc", optional_json(r.t_acc)},
          {"ap", optional_json(r.ap)},
          {"no_target_samples", r.no_target_samples},
          {"target_samples", r.target_samples}};
}

inline json to_json(const GregSubset& s) {
  return {{"count", s.count}, {"meteor", s.meteor}, {"cider", s.cider}};
}

inline json to_json(const GregReport& r) {
  return {{"single_target", to_json(r.single_target)},
          {"multi_target", to_json(r.multi_target)},
          {"overall", to_json(r.overall)}};
}

/// Builds generation items: the references of a sample are every
/// expression in the split that refers to the same image and target set.
/// No-target samples have nothing to describe and are left out, together
/// with any candidate written for them.
inline std::vector<GregItem> greg_items(const std::vector<Candidate>& candidates,
                                        const std::vector<GrexSample>& all_samples) {
  std::vector<GrexSample> samples;
  std::set<Id> skipped;
  for (const auto& s : all_samples) {
    if (s.no_target) skipped.insert(s.ref_id);
    else samples.push_back(s);
  }
  std::map<std::pair<Id, std::vector<Id>>, std::vector<std::string>> refs;
  auto key = [](const GrexSample& s) {
    std::vector<Id> t = s.target_ids;
    std::sort(t.begin(), t.end());
    return std::make_pair(s.image_id, t);
  };
  for (const auto& s : samples) refs[key(s)].push_back(s.expression);
  std::vector<Candidate> cands;
  for (const auto& c : candidates)
    if (!skipped.count(c.ref_id)) cands.push_back(c);
  const auto pairs = align(std::move(cands), samples);
  std::vector<GregItem> items;
  for (const auto& [c, s] : pairs) items.push_back({s.ref_id, c.expression, refs.at(key(s)), classify_sample(s)});
  return items;
}

}  // namespace grex::metrics
