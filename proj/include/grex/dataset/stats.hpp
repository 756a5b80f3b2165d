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
#include <array>
#include <map>
#include <string>
#include <vector>

#include "grex/dataset/sample.hpp"
#include "grex/text/tokenize.hpp"

namespace grex {

struct WordFrequency {
  std::string word;
  std::size_t count = 0;
  double frequency = 0;  // count / total tokens
};

/// Word histogram over the expressions, most frequent first (ties broken
/// alphabetically).
inline std::vector<WordFrequency> vocab_stats(const std::vector<GrexSample>& samples) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : samples)
    for (auto& tok : text::tokenize(s.expression)) {
      ++counts[tok];
      ++total;
    }
  std::vector<WordFrequency> out;
  out.reserve(counts.size());
  for (const auto& [w, c] : counts)
    out.push_back({w, c, static_cast<double>(c) / static_cast<double>(total)});
  std::stable_sort(out.begin(), out.end(),
                   [](const WordFrequency& a, const WordFrequency& b) { return a.count > b.count; });
  return out;
}

struct TaxonomyCounts {
  std::size_t single_target = 0;
  std::size_t multi_target = 0;
  std::size_t no_target = 0;

  std::size_t total() const { return single_target + multi_target + no_target; }
};

inline TaxonomyCounts taxonomy_counts(const std::vector<GrexSample>& samples) {
  TaxonomyCounts c;
  for (const auto& s : samples) {
    switch (classify_sample(s)) {
      case SampleKind::kSingleTarget: ++c.single_target; break;
      case SampleKind::kMultiTarget: ++c.multi_target; break;
      case SampleKind::kNoTarget: ++c.no_target; break;
    }
  }
  return c;
}

}  // namespace grex
