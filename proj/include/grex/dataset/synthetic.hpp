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
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/core/mask.hpp"
#include "grex/dataset/image.hpp"
#include "grex/dataset/io.hpp"
#include "grex/dataset/sample.hpp"
#include "grex/text/tokenize.hpp"

namespace grex::synthetic {

/// Scenes of axis-aligned colored shapes laid out on a `grid` x `grid` slot
/// lattice, each paired with one templated expression.
struct SceneConfig {
  int image_size = 64;
  int grid = 4;
  int shape_size = 12;
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"square", "circle", "triangle"};
  int min_objects = 3;
  int max_objects = 6;
  int n_single = 0;
  int n_multi = 0;
  int n_no_target = 0;
  Split split = Split::kTrain;
  Id first_image_id = 1;
  Id first_ann_id = 1;
  Id first_ref_id = 1;
  int max_attempts = 5000;
};

struct SceneObject {
  Id ann_id = 0;
  std::string color;
  std::string shape;
  int slot_x = 0;
  int slot_y = 0;
};

struct Scene {
  Id image_id = 0;
  std::vector<SceneObject> objects;
};

struct SyntheticDataset {
  Dataset data;
  std::map<Id, Scene> scenes;
};

enum class MultiKind { kCounting, kCompound, kSharedAttribute, kExclusion };

inline const std::map<std::string, std::array<std::uint8_t, 3>>& palette() {
  static const std::map<std::string, std::array<std::uint8_t, 3>> p{
      {"red", {220, 40, 40}},     {"green", {40, 180, 60}},  {"blue", {40, 80, 220}},
      {"yellow", {230, 200, 40}}, {"purple", {150, 60, 190}}, {"white", {235, 235, 235}},
      {"orange", {240, 140, 30}}};
  return p;
}

inline const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> s{"square", "circle", "triangle"};
  return s;
}

inline constexpr std::array<std::string_view, 4> kNumberWords{"zero", "one", "two", "three"};

inline std::string plural(const std::string& shape) { return shape + "s"; }

namespace detail {

inline bool in_shape(const std::string& shape, double px, double py, double size) {
  if (shape == "square") return true;
  if (shape == "circle") {
    const double r = size / 2, dx = px - r, dy = py - r;
    return dx * dx + dy * dy <= r * r;
  }
  // triangle: apex at top center, base along the bottom edge
  return std::abs(px - size / 2) <= py / 2;
}

inline BinaryMask rasterize(const SceneConfig& cfg, const SceneObject& o) {
  BinaryMask m(cfg.image_size, cfg.image_size);
  const int slot = cfg.image_size / cfg.grid;
  const int ox = o.slot_x * slot + (slot - cfg.shape_size) / 2;
  const int oy = o.slot_y * slot + (slot - cfg.shape_size) / 2;
  for (int y = 0; y < cfg.shape_size; ++y)
    for (int x = 0; x < cfg.shape_size; ++x)
      if (in_shape(o.shape, x + 0.5, y + 0.5, cfg.shape_size)) m.set(oy + y, ox + x);
  return m;
}

inline bool left_of(const SceneObject& a, const SceneObject& b) {
  if (a.slot_x != b.slot_x) return a.slot_x < b.slot_x;
  if (a.slot_y != b.slot_y) return a.slot_y < b.slot_y;
  return a.ann_id < b.ann_id;
}

inline std::vector<const SceneObject*> filter(const Scene& s, const std::string* color,
                                              const std::string* shape) {
  std::vector<const SceneObject*> out;
  for (const auto& o : s.objects)
    if ((!color || o.color == *color) && (!shape || o.shape == *shape)) out.push_back(&o);
  return out;
}

inline std::vector<Id> ids_of(const std::vector<const SceneObject*>& objs) {
  std::vector<Id> ids;
  for (const auto* o : objs) ids.push_back(o->ann_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Objects ordered left to right (or right to left), returning the first k.
inline std::vector<const SceneObject*> take_side(std::vector<const SceneObject*> objs,
                                                 bool left, std::size_t k) {
  std::sort(objs.begin(), objs.end(), [left](const SceneObject* a, const SceneObject* b) {
    if (a->slot_x != b->slot_x) return left ? a->slot_x < b->slot_x : a->slot_x > b->slot_x;
    return left_of(*a, *b);
  });
  if (objs.size() < k) return {};
  objs.resize(k);
  return objs;
}

inline int number_value(std::string_view w) {
  for (std::size_t i = 0; i < kNumberWords.size(); ++i)
    if (kNumberWords[i] == w) return static_cast<int>(i);
  return -1;
}

inline std::string singular(const std::string& w) {
  if (w.size() > 1 && w.back() == 's') return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace detail

/// Grounds an expression in a scene symbolically. This is the reference the
/// generator is checked against: it re-parses the expression text instead of
/// reusing the generator's choices.
inline std::vector<Id> resolve(const Scene& scene, std::string_view expression) {
  const auto t = text::tokenize(expression);
  auto fail = [&]() -> std::vector<Id> {
    throw InvalidArgument("unrecognized expression: '" + std::string(expression) + "'");
  };
  // the <color> <shape>
  if (t.size() == 3 && t[0] == "the") {
    return detail::ids_of(detail::filter(scene, &t[1], &t[2]));
  }
  // the <n> <shapes> on the <left|right>
  if (t.size() == 6 && t[0] == "the" && t[3] == "on" && t[4] == "the" &&
      (t[5] == "left" || t[5] == "right")) {
    const int k = detail::number_value(t[1]);
    if (k < 0) return fail();
    const std::string shape = detail::singular(t[2]);
    return detail::ids_of(
        detail::take_side(detail::filter(scene, nullptr, &shape), t[5] == "left", std::size_t(k)));
  }
  // the <shapes> and the <color> <shape>
  if (t.size() == 6 && t[0] == "the" && t[2] == "and" && t[3] == "the") {
    const std::string shape_a = detail::singular(t[1]);
    auto ids = detail::ids_of(detail::filter(scene, nullptr, &shape_a));
    const auto more = detail::ids_of(detail::filter(scene, &t[4], &t[5]));
    ids.insert(ids.end(), more.begin(), more.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }
  // all <color> shapes
  if (t.size() == 3 && t[0] == "all" && t[2] == "shapes") {
    return detail::ids_of(detail::filter(scene, &t[1], nullptr));
  }
  // all shapes except the <color> one
  if (t.size() == 6 && t[0] == "all" && t[1] == "shapes" && t[2] == "except" && t[3] == "the" &&
      t[5] == "one") {
    std::vector<const SceneObject*> rest;
    for (const auto& o : scene.objects)
      if (o.color != t[4]) rest.push_back(&o);
    return detail::ids_of(rest);
  }
  return fail();
}

namespace detail {

struct Candidate {
  std::string expression;
  std::vector<Id> targets;
};

using Rng = std::mt19937_64;

inline int uniform(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[static_cast<std::size_t>(uniform(rng, 0, int(v.size()) - 1))];
}

inline std::optional<Candidate> single_target(Rng& rng, const Scene& s) {
  std::vector<const SceneObject*> unique;
  for (const auto& o : s.objects)
    if (filter(s, &o.color, &o.shape).size() == 1) unique.push_back(&o);
  if (unique.empty()) return std::nullopt;
  const auto* o = pick(rng, unique);
  return Candidate{"the " + o->color + " " + o->shape, {o->ann_id}};
}

inline std::optional<Candidate> no_target(Rng& rng, const Scene& s) {
  std::set<std::string> colors, shapes;
  for (const auto& o : s.objects) {
    colors.insert(o.color);
    shapes.insert(o.shape);
  }
  std::vector<std::pair<std::string, std::string>> absent;
  for (const auto& c : colors)
    for (const auto& sh : shapes)
      if (filter(s, &c, &sh).empty()) absent.emplace_back(c, sh);
  if (absent.empty()) return std::nullopt;
  const auto& [c, sh] = pick(rng, absent);
  return Candidate{"the " + c + " " + sh, {}};
}

inline std::optional<Candidate> multi_target(Rng& rng, const Scene& s, MultiKind kind) {
  std::set<std::string> colors, shapes;
  for (const auto& o : s.objects) {
    colors.insert(o.color);
    shapes.insert(o.shape);
  }
  std::vector<Candidate> options;
  switch (kind) {
    case MultiKind::kCounting:
      for (const auto& sh : shapes) {
        const auto objs = filter(s, nullptr, &sh);
        for (int k = 2; k <= 3; ++k) {
          if (int(objs.size()) <= k) continue;
          for (bool left : {true, false}) {
            // the k-th and (k+1)-th objects must sit in different columns
            const auto first = take_side(objs, left, std::size_t(k) + 1);
            if (first[std::size_t(k) - 1]->slot_x == first[std::size_t(k)]->slot_x) continue;
            options.push_back({"the " + std::string(kNumberWords[std::size_t(k)]) + " " +
                                   plural(sh) + " on the " + (left ? "left" : "right"),
                               ids_of(take_side(objs, left, std::size_t(k)))});
          }
        }
      }
      break;
    case MultiKind::kCompound:
      for (const auto& a : shapes) {
        const auto group = filter(s, nullptr, &a);
        if (group.size() < 2) continue;
        for (const auto& o : s.objects) {
          if (o.shape == a || filter(s, &o.color, &o.shape).size() != 1) continue;
          auto ids = ids_of(group);
          ids.push_back(o.ann_id);
          std::sort(ids.begin(), ids.end());
          options.push_back({"the " + plural(a) + " and the " + o.color + " " + o.shape, ids});
        }
      }
      break;
    case MultiKind::kSharedAttribute:
      for (const auto& c : colors) {
        const auto group = filter(s, &c, nullptr);
        if (group.size() >= 2) options.push_back({"all " + c + " shapes", ids_of(group)});
      }
      break;
    case MultiKind::kExclusion:
      for (const auto& c : colors) {
        if (filter(s, &c, nullptr).size() != 1 || s.objects.size() < 3) continue;
        std::vector<const SceneObject*> rest;
        for (const auto& o : s.objects)
          if (o.color != c) rest.push_back(&o);
        options.push_back({"all shapes except the " + c + " one", ids_of(rest)});
      }
      break;
  }
  if (options.empty()) return std::nullopt;
  return pick(rng, options);
}

}  // namespace detail

/// Deterministic for a given (config, seed) pair.
inline SyntheticDataset generate_synthetic(const SceneConfig& cfg, std::uint64_t seed) {
  const int slots = cfg.grid * cfg.grid;
  if (cfg.image_size < 1 || cfg.grid < 1 || cfg.image_size % cfg.grid != 0)
    throw InvalidArgument("image_size must be a positive multiple of grid");
  if (cfg.shape_size < 1 || cfg.shape_size > cfg.image_size / cfg.grid)
    throw InvalidArgument("shape_size must fit inside one grid slot");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw InvalidArgument("object count range is empty");
  if (cfg.max_objects > slots)
    throw InvalidArgument("max_objects " + std::to_string(cfg.max_objects) +
                          " exceeds grid capacity " + std::to_string(slots));
  if (cfg.n_single < 0 || cfg.n_multi < 0 || cfg.n_no_target < 0)
    throw InvalidArgument("sample counts must be non-negative");
  if (cfg.n_multi > 0 && cfg.max_objects < 2)
    throw InvalidArgument("multi-target samples need max_objects >= 2");
  if (cfg.n_no_target > 0 && cfg.max_objects < 2)
    throw InvalidArgument("deceptive no-target samples need max_objects >= 2");
  if (cfg.colors.empty() || cfg.shapes.empty())
    throw InvalidArgument("color and shape vocabularies must be non-empty");
  for (const auto& c : cfg.colors)
    if (!palette().contains(c)) throw InvalidArgument("unknown color '" + c + "'");
  for (const auto& s : cfg.shapes)
    if (std::find(known_shapes().begin(), known_shapes().end(), s) == known_shapes().end())
      throw InvalidArgument("unknown shape '" + s + "'");

  detail::Rng rng(seed);
  std::vector<SampleKind> plan;
  plan.insert(plan.end(), std::size_t(cfg.n_single), SampleKind::kSingleTarget);
  plan.insert(plan.end(), std::size_t(cfg.n_multi), SampleKind::kMultiTarget);
  plan.insert(plan.end(), std::size_t(cfg.n_no_target), SampleKind::kNoTarget);
  std::shuffle(plan.begin(), plan.end(), rng);

  SyntheticDataset out;
  Id image_id = cfg.first_image_id;
  Id ann_id = cfg.first_ann_id;
  Id ref_id = cfg.first_ref_id;
  int multi_index = 0;

  for (const auto kind : plan) {
    std::optional<detail::Candidate> cand;
    Scene scene;
    for (int attempt = 0; attempt < cfg.max_attempts && !cand; ++attempt) {
      scene = Scene{image_id, {}};
      std::vector<int> cells(static_cast<std::size_t>(slots));
      std::iota(cells.begin(), cells.end(), 0);
      std::shuffle(cells.begin(), cells.end(), rng);
      const int n = detail::uniform(rng, cfg.min_objects, cfg.max_objects);
      for (int i = 0; i < n; ++i) {
        scene.objects.push_back({ann_id + i, detail::pick(rng, cfg.colors),
                                 detail::pick(rng, cfg.shapes), cells[std::size_t(i)] % cfg.grid,
                                 cells[std::size_t(i)] / cfg.grid});
      }
      switch (kind) {
        case SampleKind::kSingleTarget: cand = detail::single_target(rng, scene); break;
        case SampleKind::kNoTarget: cand = detail::no_target(rng, scene); break;
        case SampleKind::kMultiTarget:
          cand = detail::multi_target(rng, scene, static_cast<MultiKind>(multi_index % 4));
          break;
      }
    }
    if (!cand)
      throw InvalidArgument("could not place a " + std::string(to_string(kind)) +
                            " sample within max_attempts; relax the scene config");
    if (kind == SampleKind::kMultiTarget) ++multi_index;

    ImageInfo info{image_id, cfg.image_size, cfg.image_size, std::to_string(image_id) + ".ppm"};
    RgbImage img(cfg.image_size, cfg.image_size);
    std::map<Id, InstanceRecord> by_id;
    for (const auto& o : scene.objects) {
      const BinaryMask m = detail::rasterize(cfg, o);
      const auto& rgb = palette().at(o.color);
      for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x)
          if (m.at(y, x))
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[std::size_t(c)];
      InstanceRecord rec{o.ann_id, image_id, rle_encode(m), m.bounding_box(),
                         o.color + " " + o.shape};
      out.data.instances.push_back(rec);
      by_id.emplace(o.ann_id, rec);
    }
    std::vector<const InstanceRecord*> targets;
    for (Id t : cand->targets) targets.push_back(&by_id.at(t));
    out.data.samples.push_back(make_sample(ref_id++, info, cand->expression, targets, cfg.split));
    out.data.images.push_back(info);
    out.data.pixels.emplace(image_id, std::move(img));
    ann_id += static_cast<Id>(scene.objects.size());
    out.scenes.emplace(image_id, std::move(scene));
    ++image_id;
  }
  return out;
}

}  // namespace grex::synthetic
