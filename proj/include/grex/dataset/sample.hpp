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
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/geometry.hpp"
#include "grex/core/mask.hpp"

namespace grex {

using Id = std::int64_t;

enum class Split { kTrain, kVal, kTestA, kTestB };

inline constexpr std::array<Split, 4> kAllSplits{Split::kTrain, Split::kVal, Split::kTestA,
                                                 Split::kTestB};

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTestA: return "testA";
    case Split::kTestB: return "testB";
  }
  return "?";
}

inline Split parse_split(std::string_view name) {
  for (auto s : kAllSplits)
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown split '" + std::string(name) +
                        "' (expected train, val, testA or testB)");
}

enum class SampleKind { kSingleTarget, kMultiTarget, kNoTarget };

inline std::string_view to_string(SampleKind k) {
  switch (k) {
    case SampleKind::kSingleTarget: return "single_target";
    case SampleKind::kMultiTarget: return "multi_target";
    case SampleKind::kNoTarget: return "no_target";
  }
  return "?";
}

struct ImageInfo {
  Id id = 0;
  int height = 0;
  int width = 0;
  std::string file_name;
};

/// One annotated object instance, COCO style.
struct InstanceRecord {
  Id ann_id = 0;
  Id image_id = 0;
  RleMask mask;
  Box box;
  std::string category;
};

/// One (image, expression, targets) record. `gt_mask` is the union of the
/// target instance masks; no-target samples carry an all-zero mask.
struct GrexSample {
  Id ref_id = 0;
  Id image_id = 0;
  int height = 0;
  int width = 0;
  std::string expression;
  std::vector<Id> target_ids;
  BinaryMask gt_mask;
  std::vector<Box> gt_boxes;
  bool no_target = false;
  Split split = Split::kTrain;
};

inline SampleKind classify_count(std::size_t n_targets) {
  if (n_targets == 0) return SampleKind::kNoTarget;
  if (n_targets == 1) return SampleKind::kSingleTarget;
  return SampleKind::kMultiTarget;
}

inline SampleKind classify_sample(const GrexSample& s) {
  return classify_count(s.target_ids.size());
}

/// Checks the sample-level invariants; returns an empty string when they hold.
inline std::string sample_invariant_violation(const GrexSample& s) {
  const bool empty_targets = s.target_ids.empty();
  if (s.no_target != empty_targets) return "no_target flag disagrees with target_ids";
  if (s.gt_boxes.size() != s.target_ids.size()) return "one gt box per target required";
  if (s.gt_mask.height() != s.height || s.gt_mask.width() != s.width)
    return "gt_mask size differs from image size";
  if (empty_targets && !s.gt_mask.empty()) return "no-target sample with foreground pixels";
  for (const auto& b : s.gt_boxes)
    if (!b.valid()) return "inverted gt box";
  return {};
}

}  // namespace grex
