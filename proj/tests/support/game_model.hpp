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

// Reference model of the annotate/validate game and a random-sequence
// driver that checks AnnotationService against it. No test framework
// dependency, so the acceptance binary can run it too.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grex/annotation/service.hpp"
#include "grex/dataset/synthetic.hpp"

namespace grex::testing {

using annotation::AnnotationService;
using annotation::Selection;
using annotation::TaskState;

inline constexpr Id kEmptyImage = 999;

/// Four 32x32 synthetic images with 2-4 instances each, plus one image
/// without any instance.
inline Dataset scene_dataset() {
  synthetic::SceneConfig sc;
  sc.image_size = 32;
  sc.grid = 2;
  sc.shape_size = 10;
  sc.min_objects = 2;
  sc.max_objects = 4;
  sc.n_single = 4;
  auto ds = synthetic::generate_synthetic(sc, 17).data;
  ds.samples.clear();
  ds.images.push_back({kEmptyImage, 32, 32, ""});
  ds.pixels.emplace(kEmptyImage, RgbImage(32, 32));
  return ds;
}

inline InstanceIndex catalog_of(const Dataset& ds) {
  InstanceIndex idx;
  for (const auto& im : ds.images) idx.images.emplace(im.id, im);
  for (const auto& inst : ds.instances) idx.instances.emplace(inst.ann_id, inst);
  return idx;
}

inline std::vector<Id> image_ids(const InstanceIndex& idx) {
  std::vector<Id> out;
  for (const auto& [id, _] : idx.images) out.push_back(id);
  return out;
}

inline bool contains_key(const json& j, const std::string& key) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      if (k == key || contains_key(v, key)) return true;
  } else if (j.is_array()) {
    for (const auto& v : j)
      if (contains_key(v, key)) return true;
  }
  return false;
}

/// The transition relation, written out independently of the service.
inline bool allowed(TaskState from, TaskState to) {
  using S = TaskState;
  static const std::set<std::pair<S, S>> edges = {
      {S::kPendingAnnotation, S::kPendingValidation}, {S::kPendingValidation, S::kValid},
      {S::kPendingValidation, S::kSecondCheck},       {S::kPendingValidation, S::kRejected},
      {S::kSecondCheck, S::kValid},                   {S::kSecondCheck, S::kDiscarded},
      {S::kSecondCheck, S::kRejected}};
  return edges.count({from, to}) > 0;
}

enum class Outcome { kOk, kNotFound, kState, kInvalid };

struct ModelTask {
  Id image = 0;
  TaskState state = TaskState::kPendingAnnotation;
  std::string annotator;
  Selection hidden;
  Selection candidates;
  std::set<std::string> judged;
  int attempts = 0;
};

// Each op returns the set of errors that may legitimately be raised; an
// empty set means the op must succeed.
class GameModel {
 public:
  explicit GameModel(const InstanceIndex& idx) : idx_(idx) {}

  std::map<Id, ModelTask> tasks;
  Id next_id = 1;

  std::set<Outcome> create(const std::vector<Id>& images) {
    for (Id i : images)
      if (!idx_.images.count(i)) return {Outcome::kNotFound};
    for (Id i : images) {
      ModelTask t;
      t.image = i;
      for (const auto& [a, inst] : idx_.instances)
        if (inst.image_id == i) t.candidates.insert(a);
      tasks.emplace(next_id++, t);
    }
    return {};
  }

  std::set<Outcome> annotate(Id id, const std::string& who, const Selection& sel, const std::string& expr) {
    auto it = tasks.find(id);
    if (it == tasks.end()) return {Outcome::kNotFound};
    std::set<Outcome> errs;
    auto& t = it->second;
    if (t.state != TaskState::kPendingAnnotation) errs.insert(Outcome::kState);
    if (who.empty() || blank(expr) || !subset(sel, t.candidates)) errs.insert(Outcome::kInvalid);
    if (errs.empty()) {
      t.state = TaskState::kPendingValidation;
      t.annotator = who;
      t.hidden = sel;
    }
    return errs;
  }

  std::set<Outcome> validate(Id id, const std::string& who, const Selection& sel) {
    auto errs = judge_errors(id, who, &sel);
    if (!errs.empty()) return errs;
    auto& t = tasks.at(id);
    const bool first = t.state == TaskState::kPendingValidation;
    t.state = sel == t.hidden ? TaskState::kValid : first ? TaskState::kSecondCheck : TaskState::kDiscarded;
    t.judged.insert(who);
    ++t.attempts;
    return {};
  }

  std::set<Outcome> reject(Id id, const std::string& who) {
    auto errs = judge_errors(id, who, nullptr);
    if (!errs.empty()) return errs;
    auto& t = tasks.at(id);
    t.state = TaskState::kRejected;
    t.judged.insert(who);
    return {};
  }

  std::set<Outcome> recreate(Id id) {
    auto it = tasks.find(id);
    if (it == tasks.end()) return {Outcome::kNotFound};
    if (it->second.state != TaskState::kDiscarded && it->second.state != TaskState::kRejected)
      return {Outcome::kState};
    return create({it->second.image});
  }

  std::optional<Id> next_for(const std::string& who) const {
    for (const auto& [id, t] : tasks)
      if ((t.state == TaskState::kPendingValidation || t.state == TaskState::kSecondCheck) &&
          t.annotator != who && !t.judged.count(who))
        return id;
    return std::nullopt;
  }

 private:
  static bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) || std::ispunct(c); });
  }
  static bool subset(const Selection& a, const Selection& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
  }

  std::set<Outcome> judge_errors(Id id, const std::string& who, const Selection* sel) const {
    auto it = tasks.find(id);
    if (it == tasks.end()) return {Outcome::kNotFound};
    const auto& t = it->second;
    std::set<Outcome> errs;
    if (t.state != TaskState::kPendingValidation && t.state != TaskState::kSecondCheck)
      errs.insert(Outcome::kState);
    if (who.empty() || who == t.annotator || t.judged.count(who) || (sel && !subset(*sel, t.candidates)))
      errs.insert(Outcome::kInvalid);
    return errs;
  }

  const InstanceIndex& idx_;
};

template <typename F>
Outcome outcome_of(F&& f) {
  try {
    f();
    return Outcome::kOk;
  } catch (const NotFound&) {
    return Outcome::kNotFound;
  } catch (const StateError&) {
    return Outcome::kState;
  } catch (const InvalidArgument&) {
    return Outcome::kInvalid;
  }
}

struct SequenceReport {
  std::string failure;  // empty when every check held
  std::size_t sequences = 0;
  std::size_t ops = 0;
  std::size_t successes = 0;
  std::map<TaskState, int> reached;
};

/// Runs `n` random sequences of 5-30 operations, each on a fresh service,
/// against GameModel. After every op it checks the outcome, that each state
/// change is an edge of `allowed`, that no task has more than two
/// validation attempts, and that the served validation view is the one the
/// model expects and hides the annotator's selection. `on_finish` sees each
/// service once its sequence is done.
template <typename OnFinish>
SequenceReport play_random_sequences(const InstanceIndex& idx, int n, std::uint64_t seed, OnFinish&& on_finish) {
  const auto images = image_ids(idx);
  const std::vector<std::string> people{"p1", "p2", "p3", "p4", ""};
  const std::vector<std::string> exprs{"the red square", "all blue shapes", "  ", "left circle"};
  std::mt19937_64 rng(seed);
  auto pick = [&](auto const& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  SequenceReport rep;
  auto fail = [&](int seq, int k, const std::string& what) {
    std::ostringstream os;
    os << "sequence " << seq << " op " << k << ": " << what;
    rep.failure = os.str();
    return rep;
  };
  for (int seq = 0; seq < n; ++seq, ++rep.sequences) {
    AnnotationService svc(idx, std::uint64_t(seq));
    GameModel model(idx);
    const int n_ops = std::uniform_int_distribution<int>(5, 30)(rng);
    for (int k = 0; k < n_ops; ++k, ++rep.ops) {
      std::map<Id, TaskState> before;
      for (const auto& t : svc.tasks()) before[t.task_id] = t.state;
      // Task ids: mostly existing ones, sometimes unknown.
      const Id task = std::uniform_int_distribution<Id>(1, model.next_id)(rng);
      auto random_selection = [&](Id tid) {
        Selection s;
        const auto it = model.tasks.find(tid);
        if (it != model.tasks.end()) {
          if (coin(0.5)) return it->second.hidden;  // the right answer, or a stale one
          for (Id a : it->second.candidates)
            if (coin(0.4)) s.insert(a);
        }
        if (coin(0.05)) s.insert(424242);
        return s;
      };

      std::set<Outcome> allowed_errors;
      Outcome got = Outcome::kOk;
      switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
        case 0: {
          std::vector<Id> imgs{pick(images)};
          if (coin(0.3)) imgs.push_back(pick(images));
          if (coin(0.05)) imgs.push_back(31337);
          allowed_errors = model.create(imgs);
          got = outcome_of([&] { svc.create_tasks(imgs); });
          break;
        }
        case 1:
        case 2: {
          const auto who = pick(people);
          const auto expr = pick(exprs);
          const auto sel = random_selection(task);
          allowed_errors = model.annotate(task, who, sel, expr);
          got = outcome_of([&] { svc.submit_annotation(task, who, sel, expr); });
          break;
        }
        case 3: {
          const auto who = pick(people);
          const auto sel = random_selection(task);
          allowed_errors = model.validate(task, who, sel);
          got = outcome_of([&] { svc.submit_validation(task, who, sel); });
          break;
        }
        case 4: {
          const auto who = pick(people);
          allowed_errors = model.reject(task, who);
          got = outcome_of([&] { svc.reject(task, who, "quality"); });
          break;
        }
        case 5: {
          allowed_errors = model.recreate(task);
          got = outcome_of([&] { svc.recreate_task(task); });
          break;
        }
      }
      if (allowed_errors.empty()) {
        if (got != Outcome::kOk) return fail(seq, k, "legal operation refused");
        ++rep.successes;
      } else if (!allowed_errors.count(got)) {
        return fail(seq, k, "unexpected outcome " + std::to_string(int(got)));
      }

      const auto now = svc.tasks();
      if (now.size() != model.tasks.size()) return fail(seq, k, "task count differs from the model");
      for (const auto& t : now) {
        const auto& m = model.tasks.at(t.task_id);
        if (t.state != m.state) return fail(seq, k, "state of task " + std::to_string(t.task_id) + " differs");
        if (t.validation_attempts.size() > 2) return fail(seq, k, "more than two validation attempts");
        if (int(t.validation_attempts.size()) != m.attempts) return fail(seq, k, "attempt count differs");
        if (const auto it = before.find(t.task_id); it != before.end() && it->second != t.state &&
                                                     !allowed(it->second, t.state))
          return fail(seq, k,
                      "illegal transition " + std::string(to_string(it->second)) + " -> " +
                          std::string(to_string(t.state)));
        rep.reached[t.state]++;
      }

      const auto who = pick(people);
      if (who.empty()) continue;
      const auto view = svc.next_validation(who);
      const auto expect = model.next_for(who);
      if (view.has_value() != expect.has_value()) return fail(seq, k, "validation queue differs");
      if (view) {
        if ((*view)["task_id"].template get<Id>() != *expect) return fail(seq, k, "wrong task served for validation");
        if (contains_key(*view, "annotator_selection")) return fail(seq, k, "validation view is not blind");
      }
    }
    on_finish(svc);
  }
  return rep;
}

inline SequenceReport play_random_sequences(const InstanceIndex& idx, int n, std::uint64_t seed) {
  return play_random_sequences(idx, n, seed, [](const AnnotationService&) {});
}

/// Compares a loaded export with the service's VALID tasks. Returns an empty
/// string when they agree: same ids, images, expressions, target sets and
/// union masks, and nothing for tasks in any other state.
inline std::string export_mismatch(const AnnotationService& svc, const std::vector<GrexSample>& loaded) {
  std::map<Id, GrexSample> by_id;
  for (const auto& x : loaded) by_id.emplace(x.ref_id, x);
  std::size_t valid = 0;
  for (const auto& t : svc.tasks()) {
    const auto it = by_id.find(t.task_id);
    const std::string tag = "task " + std::to_string(t.task_id) + ": ";
    if (t.state != TaskState::kValid) {
      if (it != by_id.end()) return tag + "exported although not VALID";
      continue;
    }
    ++valid;
    if (it == by_id.end()) return tag + "VALID but missing from the export";
    const GrexSample& got = it->second;
    if (got.image_id != t.image_id) return tag + "image differs";
    if (got.expression != t.expression) return tag + "expression differs";
    if (Selection(got.target_ids.begin(), got.target_ids.end()) != t.annotator_selection)
      return tag + "targets differ";
    if (got.no_target != t.annotator_selection.empty()) return tag + "no-target flag differs";
    BinaryMask expect(got.height, got.width);
    for (const auto& c : t.candidate_instances)
      if (t.annotator_selection.count(c.ann_id)) expect |= rle_decode(c.mask);
    if (!(got.gt_mask == expect)) return tag + "union mask differs";
  }
  if (valid != loaded.size()) return "export holds " + std::to_string(loaded.size()) + " samples for " +
                                     std::to_string(valid) + " VALID tasks";
  return {};
}

}  // namespace grex::testing
