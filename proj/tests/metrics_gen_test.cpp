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

#include <random>

#include <gtest/gtest.h>

#include "grex/metrics/gen.hpp"
#include "grex/metrics/report_io.hpp"
#include "grex/text/tokenize.hpp"
#include "support/fixtures.hpp"

namespace grex::metrics {
namespace {

Tokens tok(const std::string& s) { return text::tokenize(s); }

TEST(Meteor, SelfMatchOfThreeWordsIsOneMinusPenalty) {
  const auto d = meteor_single(tok("the red box"), tok("the red box"));
  EXPECT_EQ(d.matches, 3u);
  EXPECT_EQ(d.chunks, 1u);
  // F_mean = 1, penalty = 0.5 (1/3)^3 = 1/54
  EXPECT_NEAR(d.score, 1.0 - 1.0 / 54.0, 1e-12);
  EXPECT_NEAR(d.score, 0.981481, 1e-6);
}

TEST(Meteor, StemStageMatchesInflections) {
  const auto d = meteor_single(tok("the red boxes"), tok("the red box"));
  EXPECT_EQ(d.matches, 3u);
  EXPECT_EQ(d.chunks, 1u);
}

TEST(Meteor, FragmentationRaisesThePenalty) {
  // "box red the" vs "the red box": 3 matches in 3 chunks
  const auto d = meteor_single(tok("box red the"), tok("the red box"));
  EXPECT_EQ(d.matches, 3u);
  EXPECT_EQ(d.chunks, 3u);
  EXPECT_NEAR(d.score, 0.5, 1e-12);
}

TEST(Meteor, HandWorkedPartialMatch) {
  // cand 4 words, ref 3 words, matches "the red" as one chunk:
  // P = 2/4, R = 2/3, F = P R / (0.9 P + 0.1 R), penalty 0.5 (1/2)^3
  const auto d = meteor_single(tok("the red big circle"), tok("the red box"));
  const double p = 0.5, r = 2.0 / 3.0;
  const double f = p * r / (0.9 * p + 0.1 * r);
  EXPECT_NEAR(d.score, f * (1 - 0.5 * 0.125), 1e-12);
}

TEST(Meteor, MultipleReferencesTakeTheMaximum) {
  const CaptionPair pair{tok("the red box"), {tok("a blue circle"), tok("the red box"), tok("red")}};
  double best = 0;
  for (const auto& r : pair.references) best = std::max(best, meteor_single(pair.candidate, r).score);
  EXPECT_EQ(meteor(pair), best);
  EXPECT_NEAR(meteor(pair), 1.0 - 1.0 / 54.0, 1e-12);
}

TEST(Meteor, StaysInUnitIntervalAndGrowsWithMatches) {
  std::mt19937_64 rng(41);
  const std::vector<std::string> vocab{"the", "red", "blue", "box", "circle", "left", "two", "and"};
  std::uniform_int_distribution<std::size_t> w(0, vocab.size() - 1), len(1, 7);
  for (int i = 0; i < 2000; ++i) {
    Tokens c, r;
    for (std::size_t k = len(rng); k; --k) c.push_back(vocab[w(rng)]);
    for (std::size_t k = len(rng); k; --k) r.push_back(vocab[w(rng)]);
    const double s = meteor_single(c, r).score;
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
  }
  // One chunk held fixed, more matched words score higher.
  const Tokens ref = tok("a b c d e f");
  double prev = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    const Tokens cand(ref.begin(), ref.begin() + long(n));
    const auto d = meteor_single(cand, ref);
    ASSERT_EQ(d.chunks, 1u);
    EXPECT_GT(d.score, prev);
    prev = d.score;
  }
}

TEST(Cider, TwoDocumentToyCorpusGivesSevenAndAHalf) {
  // Item 0 echoes its sole reference; item 1 shares no words with it. Every
  // 1-3 gram of item 0 has df 1 of 2 documents, so its cosines are 1, 1, 1
  // and the 4-gram vector is empty (cosine 0): 10 * 3 / 4.
  const std::vector<Tokens> cands{tok("a red box"), tok("green circles here now")};
  const std::vector<std::vector<Tokens>> refs{{tok("a red box")}, {tok("green circles here now")}};
  const auto r = cider(cands, refs);
  EXPECT_NEAR(r.per_item[0], 7.5, 1e-6);
  EXPECT_NEAR(r.per_item[1], 10.0, 1e-6);
}

// Duplicating every document doubles N and every document frequency, so
// log N - log df is unchanged for each gram seen in some reference. Grams
// seen nowhere get log N instead, so both corpora keep candidate grams
// inside the references.
void expect_duplication_invariant(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
  const auto once = cider(cands, refs);
  auto cands2 = cands;
  auto refs2 = refs;
  cands2.insert(cands2.end(), cands.begin(), cands.end());
  refs2.insert(refs2.end(), refs.begin(), refs.end());
  const auto twice = cider(cands2, refs2);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_NEAR(twice.per_item[i], once.per_item[i], 1e-9);
    EXPECT_NEAR(twice.per_item[i + cands.size()], once.per_item[i], 1e-9);
  }
}

TEST(Cider, DuplicatingTheCorpusLeavesScoresUnchanged) {
  expect_duplication_invariant({tok("a red box"), tok("green circles here now")},
                               {{tok("a red box")}, {tok("green circles here now")}});
  expect_duplication_invariant({tok("the red box"), tok("blue box left")},
                               {{tok("a red box"), tok("the red box")}, {tok("the blue box left"), tok("green circle")}});
}

TEST(Cider, NeedsTwoReferenceSets) {
  EXPECT_THROW(cider({tok("a")}, {{tok("a")}}), InvalidArgument);
  EXPECT_THROW(cider({tok("a")}, {{tok("a")}, {tok("b")}}), InvalidArgument);
}

GregItem item(Id id, std::string cand, std::vector<std::string> refs, SampleKind k) {
  return {id, std::move(cand), std::move(refs), k};
}

TEST(GregReport, PerfectEchoScoresTheFormulaMaximum) {
  const auto r = evaluate_greg({item(1, "the red box", {"the red box"}, SampleKind::kSingleTarget),
                                item(2, "two green circles", {"two green circles"}, SampleKind::kMultiTarget)});
  EXPECT_NEAR(r.overall.meteor, 1.0 - 1.0 / 54.0, 1e-12);
  EXPECT_NEAR(r.single_target.cider, 7.5, 1e-9);
  EXPECT_NEAR(r.multi_target.cider, 7.5, 1e-9);
}

TEST(GregReport, EmptyInputGivesZeros) {
  const auto r = evaluate_greg({});
  EXPECT_EQ(r.overall.count, 0u);
  EXPECT_EQ(r.overall.meteor, 0.0);
  EXPECT_EQ(r.overall.cider, 0.0);
}

TEST(GregReport, FourItemSubsetMeansMatchHandAggregation) {
  const std::vector<GregItem> items{
      item(1, "the red box", {"the red box"}, SampleKind::kSingleTarget),
      item(2, "box red the", {"the red box"}, SampleKind::kSingleTarget),
      item(3, "two blue circles", {"two blue circles", "the blue circles"}, SampleKind::kMultiTarget),
      item(4, "green", {"all yellow shapes"}, SampleKind::kMultiTarget)};
  const auto r = evaluate_greg(items);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& it : items) {
    cands.push_back(tok(it.candidate));
    std::vector<Tokens> rs;
    for (const auto& s : it.references) rs.push_back(tok(s));
    refs.push_back(rs);
  }
  const auto c = cider(cands, refs).per_item;
  std::vector<double> m;
  for (std::size_t i = 0; i < items.size(); ++i) m.push_back(meteor({cands[i], refs[i]}));
  EXPECT_NEAR(r.single_target.meteor, (m[0] + m[1]) / 2, 1e-12);
  EXPECT_NEAR(r.multi_target.meteor, (m[2] + m[3]) / 2, 1e-12);
  EXPECT_NEAR(r.overall.meteor, (m[0] + m[1] + m[2] + m[3]) / 4, 1e-12);
  EXPECT_NEAR(r.single_target.cider, (c[0] + c[1]) / 2, 1e-12);
  EXPECT_NEAR(r.overall.cider, (c[0] + c[1] + c[2] + c[3]) / 4, 1e-12);
  // Hand values for the parts that need no IDF.
  EXPECT_NEAR(m[0], 53.0 / 54.0, 1e-12);
  EXPECT_NEAR(m[1], 0.5, 1e-12);
  EXPECT_EQ(m[3], 0.0);
  EXPECT_EQ(c[3], 0.0);
}

TEST(GregItems, ReferencesAreAllExpressionsForTheSameTargets) {
  auto s1 = testing::box_sample(1, {{0, 0, 2, 2}}, 8, "the box");
  auto s2 = s1;
  s2.ref_id = 2;
  s2.expression = "the small box";
  auto s3 = testing::box_sample(3, {}, 8, "the cat");
  const auto items = greg_items({{1, "a box"}, {2, "a box"}}, {s1, s2, s3});
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].references, (std::vector<std::string>{"the box", "the small box"}));
  EXPECT_THROW(greg_items({{1, "a box"}}, {s1, s2}), InvalidArgument);
  // A candidate for a no-target sample is dropped, not an error.
  EXPECT_EQ(greg_items({{1, "a box"}, {2, "a box"}, {3, "a cat"}}, {s1, s2, s3}).size(), 2u);
}

}  // namespace
}  // namespace grex::metrics
