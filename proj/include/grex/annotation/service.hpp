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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grex/annotation/task.hpp"
#include "grex/core/error.hpp"
#include "grex/dataset/io.hpp"
#include "grex/text/tokenize.hpp"

namespace grex::annotation {

namespace fs = std::filesystem;

struct NoTargetSuggestion {
  std::string expression;
  Id source_image_id = 0;
};

struct ExportSummary {
  std::size_t samples = 0;
  std::size_t images = 0;
};

/// Server side of the annotate/validate game. Every mutation is appended to
/// `log.jsonl` in the project directory before it is acknowledged, and a
/// full snapshot is written every `snapshot_every` records. Opening a
/// project loads the snapshot and replays the log tail.
///
/// All operations take one service-wide lock, which serializes mutations of
/// any task and gives readers a consistent view.
class AnnotationService {
 public:
  static constexpr const char* kLogFile = "log.jsonl";
  static constexpr const char* kSnapshotFile = "snapshot.json";

  /// In-memory service over a given instance catalog; nothing is persisted.
  explicit AnnotationService(InstanceIndex catalog, std::uint64_t seed = 0)
      : catalog_(std::move(catalog)), seed_(seed) {}

  /// Opens (or starts) a project. `instances.json` and `images/` under the
  /// directory form the catalog; a missing `instances.json` gives an empty one.
  static AnnotationService open(const fs::path& project_dir, std::uint64_t seed = 0,
                                std::size_t snapshot_every = 200) {
    std::error_code ec;
    fs::create_directories(project_dir, ec);
    if (ec || !fs::is_directory(project_dir))
      throw Error("project directory " + project_dir.string() + " is not writable");
    {
      std::ofstream probe(project_dir / kLogFile, std::ios::app);
      if (!probe) throw Error("project directory " + project_dir.string() + " is not writable");
    }
    InstanceIndex catalog;
    if (fs::exists(project_dir / kInstanceFile)) catalog = load_instances(project_dir);
    AnnotationService s(std::move(catalog), seed);
    s.dir_ = project_dir;
    s.snapshot_every_ = std::max<std::size_t>(1, snapshot_every);
    s.recover();
    return s;
  }

  AnnotationService(AnnotationService&& o) noexcept
      : catalog_(std::move(o.catalog_)),
        seed_(o.seed_),
        dir_(std::move(o.dir_)),
        snapshot_every_(o.snapshot_every_),
        tasks_(std::move(o.tasks_)),
        pool_(std::move(o.pool_)),
        next_task_id_(o.next_task_id_),
        seq_(o.seq_),
        suggestion_calls_(std::move(o.suggestion_calls_)) {}

  const InstanceIndex& catalog() const { return catalog_; }
  const std::optional<fs::path>& project_dir() const { return dir_; }

  // ---- mutations -------------------------------------------------------

  std::vector<AnnotationTask> create_tasks(const std::vector<Id>& image_ids, Split split = Split::kTrain) {
    std::lock_guard lock(mu_);
    for (Id id : image_ids)
      if (!catalog_.images.count(id)) throw NotFound("unknown image " + std::to_string(id));
    log({{"op", "create_tasks"}, {"image_ids", image_ids}, {"split", std::string(to_string(split))}});
    auto out = apply_create(image_ids, split);
    maybe_snapshot();
    return out;
  }

  TaskState submit_annotation(Id task_id, const std::string& annotator_id, const Selection& selection,
                              const std::string& expression) {
    std::lock_guard lock(mu_);
    AnnotationTask& t = task_mut(task_id);
    if (t.state != TaskState::kPendingAnnotation)
      throw StateError("task " + std::to_string(task_id) + " is " + std::string(to_string(t.state)) +
                       ", not PENDING_ANNOTATION");
    if (annotator_id.empty()) throw InvalidArgument("annotator id is empty");
    if (text::tokenize(expression).empty()) throw InvalidArgument("expression is empty");
    for (Id a : selection)
      if (!t.has_candidate(a))
        throw InvalidArgument("instance " + std::to_string(a) + " is not a candidate of task " +
                              std::to_string(task_id));
    log({{"op", "submit_annotation"},
         {"task_id", task_id},
         {"annotator_id", annotator_id},
         {"selection", selection},
         {"expression", expression}});
    apply_annotation(t, annotator_id, selection, expression);
    maybe_snapshot();
    return t.state;
  }

  TaskState submit_validation(Id task_id, const std::string& validator_id, const Selection& selection) {
    std::lock_guard lock(mu_);
    AnnotationTask& t = task_mut(task_id);
    require_validation(t, validator_id);
    for (Id a : selection)
      if (!t.has_candidate(a))
        throw InvalidArgument("instance " + std::to_string(a) + " is not a candidate of task " +
                              std::to_string(task_id));
    log({{"op", "submit_validation"}, {"task_id", task_id}, {"validator_id", validator_id}, {"selection", selection}});
    apply_validation(t, validator_id, selection);
    maybe_snapshot();
    return t.state;
  }

  TaskState reject(Id task_id, const std::string& validator_id, const std::string& reason) {
    std::lock_guard lock(mu_);
    AnnotationTask& t = task_mut(task_id);
    require_validation(t, validator_id);
    log({{"op", "reject"}, {"task_id", task_id}, {"validator_id", validator_id}, {"reason", reason}});
    apply_reject(t, validator_id, reason);
    maybe_snapshot();
    return t.state;
  }

  /// Opens a fresh task on the image of a discarded or rejected task. The
  /// old task stays terminal.
  AnnotationTask recreate_task(Id task_id) {
    std::lock_guard lock(mu_);
    const AnnotationTask& t = task_ref(task_id);
    if (t.state != TaskState::kDiscarded && t.state != TaskState::kRejected)
      throw StateError("only DISCARDED or REJECTED tasks can be re-created");
    const Id image_id = t.image_id;
    const Split split = t.split;
    log({{"op", "create_tasks"}, {"image_ids", std::vector<Id>{image_id}}, {"split", std::string(to_string(split))}});
    auto out = apply_create({image_id}, split);
    maybe_snapshot();
    return out.front();
  }

  /// Adds an expression written for `image_id` to the no-target suggestion
  /// pool of `split`. Submitted annotations join the pool automatically.
  void add_pool_expression(Split split, Id image_id, const std::string& expression) {
    std::lock_guard lock(mu_);
    if (text::tokenize(expression).empty()) throw InvalidArgument("expression is empty");
    log({{"op", "add_pool_expression"},
         {"split", std::string(to_string(split))},
         {"image_id", image_id},
         {"expression", expression}});
    pool_.push_back({split, image_id, expression});
    maybe_snapshot();
  }

  // ---- queries ---------------------------------------------------------

  AnnotationTask task(Id task_id) const {
    std::lock_guard lock(mu_);
    return task_ref(task_id);
  }

  std::vector<AnnotationTask> tasks() const {
    std::lock_guard lock(mu_);
    std::vector<AnnotationTask> out;
    for (const auto& [_, t] : tasks_) out.push_back(t);
    return out;
  }

  /// Lowest-numbered task waiting for annotation, if any.
  std::optional<AnnotationTask> next_annotation() const {
    std::lock_guard lock(mu_);
    for (const auto& [_, t] : tasks_)
      if (t.state == TaskState::kPendingAnnotation) return t;
    return std::nullopt;
  }

  /// Lowest-numbered task awaiting validation that this validator neither
  /// annotated nor already judged, returned as the blind view.
  std::optional<json> next_validation(const std::string& validator_id) const {
    std::lock_guard lock(mu_);
    for (const auto& [_, t] : tasks_) {
      if (!is_validation_state(t.state)) continue;
      if (t.annotator_id == validator_id || t.validated_by(validator_id)) continue;
      return blind_view(t);
    }
    return std::nullopt;
  }

  /// Up to k expressions written for other images of the task's split,
  /// drawn without replacement. Repeated calls on a task give fresh draws;
  /// the sequence is fixed by the service seed.
  std::vector<NoTargetSuggestion> suggest_no_target(Id task_id, std::size_t k) {
    std::lock_guard lock(mu_);
    const AnnotationTask& t = task_ref(task_id);
    std::vector<const PoolEntry*> candidates;
    for (const auto& e : pool_)
      if (e.split == t.split && e.image_id != t.image_id) candidates.push_back(&e);
    if (candidates.empty())
      throw NotFound("no expressions from other images of split " + std::string(to_string(t.split)));
    std::seed_seq ss{std::uint64_t(seed_), std::uint64_t(task_id), std::uint64_t(suggestion_calls_[task_id]++)};
    std::mt19937_64 rng(ss);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::vector<NoTargetSuggestion> out;
    for (std::size_t i = 0; i < std::min(k, candidates.size()); ++i)
      out.push_back({candidates[i]->expression, candidates[i]->image_id});
    return out;
  }

  /// Writes the VALID tasks as a gRefCOCO-format corpus under `out_root`.
  /// Each task becomes one reference whose id is the task id.
  ExportSummary export_dataset(const fs::path& out_root) const {
    std::lock_guard lock(mu_);
    Dataset ds;
    std::map<Id, InstanceRecord> instances;
    std::set<Id> image_ids;
    for (const auto& [id, t] : tasks_) {
      if (t.state != TaskState::kValid) continue;
      const ImageInfo& info = catalog_.images.at(t.image_id);
      std::vector<const InstanceRecord*> targets;
      for (const auto& c : t.candidate_instances) {
        instances.emplace(c.ann_id, c);
        if (t.annotator_selection.count(c.ann_id)) targets.push_back(&c);
      }
      ds.samples.push_back(make_sample(t.task_id, info, t.expression, targets, t.split));
      image_ids.insert(t.image_id);
    }
    for (Id id : image_ids) {
      const ImageInfo& info = catalog_.images.at(id);
      ds.images.push_back(info);
      if (dir_) {
        const std::string name = info.file_name.empty() ? std::to_string(id) + ".ppm" : info.file_name;
        if (fs::exists(*dir_ / "images" / name)) ds.pixels.emplace(id, load_image(*dir_, info));
      }
    }
    for (auto& [_, inst] : instances) ds.instances.push_back(inst);
    try {
      write_dataset(out_root, ds);
    } catch (const fs::filesystem_error& e) {
      throw Error(std::string("export failed: ") + e.what());
    }
    return {ds.samples.size(), ds.images.size()};
  }

 private:
  struct PoolEntry {
    Split split;
    Id image_id;
    std::string expression;
  };

  AnnotationTask& task_mut(Id id) {
    const auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFound("unknown task " + std::to_string(id));
    return it->second;
  }
  const AnnotationTask& task_ref(Id id) const {
    const auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFound("unknown task " + std::to_string(id));
    return it->second;
  }

  static void require_validation(const AnnotationTask& t, const std::string& validator_id) {
    if (!is_validation_state(t.state))
      throw StateError("task " + std::to_string(t.task_id) + " is " + std::string(to_string(t.state)) +
                       ", not awaiting validation");
    if (validator_id.empty()) throw InvalidArgument("validator id is empty");
    if (validator_id == t.annotator_id)
      throw InvalidArgument("validator " + validator_id + " annotated task " + std::to_string(t.task_id));
    if (t.validated_by(validator_id))
      throw InvalidArgument("validator " + validator_id + " already judged task " + std::to_string(t.task_id));
  }

  static void move_to(AnnotationTask& t, TaskState to) {
    if (!legal_transition(t.state, to))
      throw StateError("illegal transition " + std::string(to_string(t.state)) + " -> " +
                       std::string(to_string(to)));
    t.state = to;
  }

  std::vector<AnnotationTask> apply_create(const std::vector<Id>& image_ids, Split split) {
    std::vector<AnnotationTask> out;
    for (Id id : image_ids) {
      AnnotationTask t;
      t.task_id = next_task_id_++;
      t.image_id = id;
      t.split = split;
      for (const auto& [_, inst] : catalog_.instances)
        if (inst.image_id == id) t.candidate_instances.push_back(inst);
      out.push_back(t);
      tasks_.emplace(t.task_id, std::move(t));
    }
    return out;
  }

  void apply_annotation(AnnotationTask& t, const std::string& who, const Selection& sel, const std::string& expr) {
    move_to(t, TaskState::kPendingValidation);
    t.annotator_id = who;
    t.annotator_selection = sel;
    t.expression = expr;
    pool_.push_back({t.split, t.image_id, expr});
  }

  static void apply_validation(AnnotationTask& t, const std::string& who, const Selection& sel) {
    const bool matched = sel == t.annotator_selection;
    const TaskState next = matched ? TaskState::kValid
                                   : (t.state == TaskState::kSecondCheck ? TaskState::kDiscarded
                                                                         : TaskState::kSecondCheck);
    move_to(t, next);
    t.validation_attempts.push_back({who, sel, matched});
  }

  static void apply_reject(AnnotationTask& t, const std::string& who, const std::string& reason) {
    move_to(t, TaskState::kRejected);
    t.rejection = Rejection{who, reason};
  }

  void apply_record(const json& r) {
    const std::string op = r.at("op").get<std::string>();
    if (op == "create_tasks") {
      apply_create(r.at("image_ids").get<std::vector<Id>>(), parse_split(r.at("split").get<std::string>()));
    } else if (op == "submit_annotation") {
      apply_annotation(task_mut(r.at("task_id").get<Id>()), r.at("annotator_id").get<std::string>(),
                       r.at("selection").get<Selection>(), r.at("expression").get<std::string>());
    } else if (op == "submit_validation") {
      apply_validation(task_mut(r.at("task_id").get<Id>()), r.at("validator_id").get<std::string>(),
                       r.at("selection").get<Selection>());
    } else if (op == "reject") {
      apply_reject(task_mut(r.at("task_id").get<Id>()), r.at("validator_id").get<std::string>(),
                   r.at("reason").get<std::string>());
    } else if (op == "add_pool_expression") {
      pool_.push_back({parse_split(r.at("split").get<std::string>()), r.at("image_id").get<Id>(),
                       r.at("expression").get<std::string>()});
    } else {
      throw SchemaError("log: unknown op '" + op + "'");
    }
  }

  json state_json() const {
    json tasks = json::array();
    for (const auto& [_, t] : tasks_) tasks.push_back(task_to_json(t));
    json pool = json::array();
    for (const auto& e : pool_)
      pool.push_back({{"split", std::string(to_string(e.split))}, {"image_id", e.image_id}, {"expression", e.expression}});
    return {{"seq", seq_}, {"next_task_id", next_task_id_}, {"tasks", tasks}, {"pool", pool}};
  }

  void log(json record) {
    if (!dir_) {
      ++seq_;
      return;
    }
    record["seq"] = seq_ + 1;
    {
      std::ofstream f(*dir_ / kLogFile, std::ios::app);
      f << record.dump() << '\n';
      f.flush();
      if (!f) throw Error("cannot append to " + (*dir_ / kLogFile).string());
    }
    ++seq_;
  }

  // Called after a logged mutation has been applied.
  void maybe_snapshot() {
    if (dir_ && seq_ % snapshot_every_ == 0) write_snapshot();
  }

  void write_snapshot() const {
    const fs::path tmp = *dir_ / (std::string(kSnapshotFile) + ".tmp");
    {
      std::ofstream f(tmp);
      f << state_json().dump();
      if (!f) throw Error("cannot write snapshot in " + dir_->string());
    }
    fs::rename(tmp, *dir_ / kSnapshotFile);
  }

  void recover() {
    const fs::path snap = *dir_ / kSnapshotFile;
    if (fs::exists(snap)) {
      std::ifstream f(snap);
      const json j = json::parse(f);
      seq_ = j.at("seq").get<std::uint64_t>();
      next_task_id_ = j.at("next_task_id").get<Id>();
      for (const auto& t : j.at("tasks")) {
        auto task = task_from_json(t);
        tasks_.emplace(task.task_id, std::move(task));
      }
      for (const auto& e : j.at("pool"))
        pool_.push_back({parse_split(e.at("split").get<std::string>()), e.at("image_id").get<Id>(),
                         e.at("expression").get<std::string>()});
    }
    std::ifstream f(*dir_ / kLogFile);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      json r;
      try {
        r = json::parse(line);
      } catch (const json::parse_error&) {
        // A crash can leave a partial final record; anything earlier is corruption.
        if (f.peek() == std::char_traits<char>::eof()) break;
        throw SchemaError("log.jsonl line " + std::to_string(lineno) + ": unparsable record");
      }
      const auto seq = r.at("seq").get<std::uint64_t>();
      if (seq <= seq_) continue;
      if (seq != seq_ + 1) throw SchemaError("log.jsonl line " + std::to_string(lineno) + ": sequence gap");
      apply_record(r);
      seq_ = seq;
    }
  }

  InstanceIndex catalog_;
  std::uint64_t seed_ = 0;
  std::optional<fs::path> dir_;
  std::size_t snapshot_every_ = 200;
  std::map<Id, AnnotationTask> tasks_;
  std::vector<PoolEntry> pool_;
  Id next_task_id_ = 1;
  std::uint64_t seq_ = 0;
  std::map<Id, std::uint64_t> suggestion_calls_;
  mutable std::mutex mu_;
};

}  // namespace grex::annotation
