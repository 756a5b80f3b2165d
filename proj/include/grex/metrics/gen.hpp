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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/dataset/sample.hpp"
#include "grex/text/porter_stemmer.hpp"
#include "grex/text/tokenize.hpp"

namespace grex::metrics {

using Tokens = std::vector<std::string>;

struct CaptionPair {
  Tokens candidate;
  std::vector<Tokens> references;
};

// METEOR -------------------------------------------------------------------

/// Parameters of the original METEOR scoring function.
struct MeteorParams {
  double alpha = 0.9;   // F_mean = PR / (alpha P + (1 - alpha) R)
  double gamma = 0.5;   // penalty weight
  double beta = 3.0;    // penalty exponent
};

struct MeteorDetail {
  double score = 0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0;
  double recall = 0;
};

namespace detail {

// Aligns candidate positions to reference positions in two stages (exact,
// then Porter stem). Within a stage a candidate word prefers the reference
// slot right after its predecessor's slot, which keeps chunks long.
inline std::vector<int> align_unigrams(const Tokens& cand, const Tokens& ref) {
  std::vector<int> to_ref(cand.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  std::vector<std::string> cand_stem, ref_stem;
  for (const auto& w : cand) cand_stem.push_back(text::porter_stem(w));
  for (const auto& w : ref) ref_stem.push_back(text::porter_stem(w));

  auto stage = [&](const std::vector<std::string>& cs, const std::vector<std::string>& rs) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (to_ref[i] >= 0) continue;
      int choice = -1;
      if (i > 0 && to_ref[i - 1] >= 0) {
        const auto next = static_cast<std::size_t>(to_ref[i - 1] + 1);
        if (next < ref.size() && !ref_used[next] && rs[next] == cs[i]) choice = int(next);
      }
      for (std::size_t j = 0; choice < 0 && j < ref.size(); ++j)
        if (!ref_used[j] && rs[j] == cs[i]) choice = int(j);
      if (choice >= 0) {
        to_ref[i] = choice;
        ref_used[std::size_t(choice)] = true;
      }
    }
  };
  stage(cand, ref);
  stage(cand_stem, ref_stem);
  return to_ref;
}

}  // namespace detail

inline MeteorDetail meteor_single(const Tokens& cand, const Tokens& ref,
                                  const MeteorParams& p = {}) {
  MeteorDetail d;
  if (cand.empty() || ref.empty()) return d;
  const auto to_ref = detail::align_unigrams(cand, ref);
  int prev_c = -2, prev_r = -2;
  for (std::size_t i = 0; i < to_ref.size(); ++i) {
    if (to_ref[i] < 0) continue;
    ++d.matches;
    if (!(int(i) == prev_c + 1 && to_ref[i] == prev_r + 1)) ++d.chunks;
    prev_c = int(i);
    prev_r = to_ref[i];
  }
  if (d.matches == 0) return d;
  const double m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(cand.size());
  d.recall = m / static_cast<double>(ref.size());
  const double fmean =
      d.precision * d.recall / (p.alpha * d.precision + (1 - p.alpha) * d.recall);
  const double penalty = p.gamma * std::pow(static_cast<double>(d.chunks) / m, p.beta);
  d.score = fmean * (1 - penalty);
  return d;
}

/// Best score over the references.
inline double meteor(const CaptionPair& pair, const MeteorParams& p = {}) {
  double best = 0;
  for (const auto& r : pair.references) best = std::max(best, meteor_single(pair.candidate, r, p).score);
  return best;
}

// CIDEr --------------------------------------------------------------------

using NGramCounts = std::map<Tokens, double>;

inline NGramCounts ngram_counts(const Tokens& tokens, std::size_t n) {
  NGramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    out[Tokens(tokens.begin() + long(i), tokens.begin() + long(i + n))] += 1.0;
  return out;
}

/// TF-IDF weighted n-gram vector of order n.
struct NGramVector {
  std::size_t n = 1;
  std::map<Tokens, double> weights;
  double norm = 0;
};

/// Document frequencies over reference sets (one document per item).
class CiderScorer {
 public:
  static constexpr std::size_t kMaxN = 4;

  explicit CiderScorer(const std::vector<std::vector<Tokens>>& reference_sets)
      : refs_(reference_sets) {
    if (reference_sets.size() < 2)
      throw InvalidArgument("CIDEr needs at least two reference sets to estimate IDF");
    for (const auto& set : reference_sets) {
      std::set<Tokens> seen;
      for (const auto& ref : set)
        for (std::size_t n = 1; n <= kMaxN; ++n)
          for (const auto& [g, c] : ngram_counts(ref, n)) seen.insert(g);
      for (const auto& g : seen) df_[g] += 1.0;
    }
    log_docs_ = std::log(static_cast<double>(reference_sets.size()));
  }

  NGramVector vectorize(const Tokens& tokens, std::size_t n) const {
    NGramVector v{n, {}, 0};
    for (const auto& [g, tf] : ngram_counts(tokens, n)) {
      const auto it = df_.find(g);
      const double df = it == df_.end() ? 1.0 : std::max(1.0, it->second);
      const double w = tf * (log_docs_ - std::log(df));
      v.weights[g] = w;
      v.norm += w * w;
    }
    v.norm = std::sqrt(v.norm);
    return v;
  }

  static double cosine(const NGramVector& a, const NGramVector& b) {
    if (a.norm == 0 || b.norm == 0) return 0;
    double dot = 0;
    for (const auto& [g, w] : a.weights) {
      const auto it = b.weights.find(g);
      if (it != b.weights.end()) dot += w * it->second;
    }
    return dot / (a.norm * b.norm);
  }

  /// Score of a candidate against reference set `item`.
  double score(const Tokens& candidate, std::size_t item) const {
    const auto& refs = refs_.at(item);
    if (refs.empty()) return 0;
    double total = 0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto cv = vectorize(candidate, n);
      double sim = 0;
      for (const auto& r : refs) sim += cosine(cv, vectorize(r, n));
      total += sim / static_cast<double>(refs.size());
    }
    return 10.0 * total / static_cast<double>(kMaxN);
  }

 private:
  std::vector<std::vector<Tokens>> refs_;
  std::map<Tokens, double> df_;
  double log_docs_ = 0;
};

struct CiderResult {
  std::vector<double> per_item;
  double mean = 0;
};

inline CiderResult cider(const std::vector<Tokens>& candidates,
                         const std::vector<std::vector<Tokens>>& reference_sets) {
  if (candidates.size() != reference_sets.size())
    throw InvalidArgument("CIDEr: candidate and reference counts differ");
  const CiderScorer scorer(reference_sets);
  CiderResult r;
  for (std::size_t i = 0; i < candidates.size(); ++i) r.per_item.push_back(scorer.score(candidates[i], i));
  double sum = 0;
  for (double s : r.per_item) sum += s;
  r.mean = r.per_item.empty() ? 0 : sum / static_cast<double>(r.per_item.size());
  return r;
}

// Report -------------------------------------------------------------------

struct GregItem {
  Id ref_id = 0;
  std::string candidate;
  std::vector<std::string> references;
  SampleKind kind = SampleKind::kSingleTarget;
};

struct GregSubset {
  std::size_t count = 0;
  double meteor = 0;
  double cider = 0;
};

struct GregReport {
  GregSubset single_target;
  GregSubset multi_target;
  GregSubset overall;
  std::vector<double> per_item_meteor;
  std::vector<double> per_item_cider;
};

/// METEOR and CIDEr per item, averaged over the single-target subset, the
/// multi-target subset and everything.
inline GregReport evaluate_greg(const std::vector<GregItem>& items) {
  GregReport r;
  if (items.empty()) return r;
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& it : items) {
    if (it.references.empty())
      throw InvalidArgument("item " + std::to_string(it.ref_id) + " has no references");
    cands.push_back(text::tokenize(it.candidate));
    std::vector<Tokens> rs;
    for (const auto& s : it.references) rs.push_back(text::tokenize(s));
    refs.push_back(std::move(rs));
  }
  std::vector<double> cider_scores(items.size(), 0.0);
  if (refs.size() >= 2) cider_scores = cider(cands, refs).per_item;
  auto add = [](GregSubset& s, double m, double c) {
    ++s.count;
    s.meteor += m;
    s.cider += c;
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double m = meteor({cands[i], refs[i]});
    r.per_item_meteor.push_back(m);
    r.per_item_cider.push_back(cider_scores[i]);
    add(r.overall, m, cider_scores[i]);
    if (items[i].kind == SampleKind::kSingleTarget) add(r.single_target, m, cider_scores[i]);
    if (items[i].kind == SampleKind::kMultiTarget) add(r.multi_target, m, cider_scores[i]);
  }
  for (auto* s : {&r.single_target, &r.multi_target, &r.overall}) {
    if (s->count) {
      s->meteor /= static_cast<double>(s->count);
      s->cider /= static_cast<double>(s->count);
    }
  }
  return r;
}

}  // namespace grex::metrics
