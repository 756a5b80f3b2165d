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

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "grex/annotation/http.hpp"
#include "grex/annotation/service.hpp"
#include "grex/dataset/synthetic.hpp"
#include "support/fixtures.hpp"
#include "support/game_model.hpp"

namespace grex::annotation {
namespace {

using testing::catalog_of;
using testing::contains_key;
using testing::image_ids;
using testing::kEmptyImage;
using testing::scene_dataset;

Selection all_candidates(const AnnotationTask& t) {
  Selection s;
  for (const auto& c : t.candidate_instances) s.insert(c.ann_id);
  return s;
}

// ---------------------------------------------------------------- basics

class ServiceTest : public ::testing::Test {
 protected:
  ServiceTest() : ds_(scene_dataset()), svc_(catalog_of(ds_), 5) {}

  Id annotated(Selection sel, const std::string& expr = "the red square") {
    const auto t = svc_.create_tasks({ds_.images.front().id}).front();
    EXPECT_EQ(svc_.submit_annotation(t.task_id, "ann", sel, expr), TaskState::kPendingValidation);
    return t.task_id;
  }

  Selection first_two() const {
    const auto& inst = ds_.instances;
    Selection s;
    for (const auto& i : inst)
      if (i.image_id == ds_.images.front().id && s.size() < 2) s.insert(i.ann_id);
    return s;
  }

  Dataset ds_;
  AnnotationService svc_;
};

TEST_F(ServiceTest, CreateTasksPopulatesCandidates) {
  const auto ids = image_ids(svc_.catalog());
  const auto tasks = svc_.create_tasks({ids[0], ids[1], ids[2]});
  ASSERT_EQ(tasks.size(), 3u);
  std::set<Id> task_ids;
  for (const auto& t : tasks) {
    EXPECT_EQ(t.state, TaskState::kPendingAnnotation);
    EXPECT_FALSE(t.candidate_instances.empty());
    for (const auto& c : t.candidate_instances) EXPECT_EQ(c.image_id, t.image_id);
    task_ids.insert(t.task_id);
  }
  EXPECT_EQ(task_ids.size(), 3u);
  // Duplicates give distinct tasks; an image without instances still gets one.
  const auto dup = svc_.create_tasks({ids[0], ids[0], kEmptyImage});
  EXPECT_NE(dup[0].task_id, dup[1].task_id);
  EXPECT_TRUE(dup[2].candidate_instances.empty());
  EXPECT_THROW(svc_.create_tasks({12345}), NotFound);
  EXPECT_EQ(svc_.tasks().size(), 6u);
}

TEST_F(ServiceTest, MatchingValidationMakesTaskValid) {
  const Id id = annotated(first_two());
  EXPECT_EQ(svc_.submit_validation(id, "val1", first_two()), TaskState::kValid);
  EXPECT_EQ(svc_.task(id).validation_attempts.size(), 1u);
  EXPECT_TRUE(svc_.task(id).validation_attempts[0].matched);
}

TEST_F(ServiceTest, TwoMismatchesDiscard) {
  const Id id = annotated(first_two());
  EXPECT_EQ(svc_.submit_validation(id, "val1", {}), TaskState::kSecondCheck);
  // The validator who failed it is not served it again.
  EXPECT_FALSE(svc_.next_validation("val1").has_value());
  EXPECT_THROW(svc_.submit_validation(id, "val1", first_two()), InvalidArgument);
  EXPECT_EQ(svc_.submit_validation(id, "val2", {*first_two().begin()}), TaskState::kDiscarded);
  EXPECT_EQ(svc_.task(id).validation_attempts.size(), 2u);
}

TEST_F(ServiceTest, MismatchThenMatchIsValid) {
  const Id id = annotated(first_two());
  EXPECT_EQ(svc_.submit_validation(id, "val1", {}), TaskState::kSecondCheck);
  EXPECT_EQ(svc_.submit_validation(id, "val2", first_two()), TaskState::kValid);
}

TEST_F(ServiceTest, EmptySelectionConfirmsNoTarget) {
  const Id id = annotated({}, "the purple star");
  EXPECT_EQ(svc_.submit_validation(id, "val1", {}), TaskState::kValid);
}

TEST_F(ServiceTest, AnnotationErrors) {
  const auto t = svc_.create_tasks({ds_.images.front().id}).front();
  EXPECT_THROW(svc_.submit_annotation(t.task_id, "ann", {}, "  "), InvalidArgument);
  EXPECT_THROW(svc_.submit_annotation(t.task_id, "", {}, "the box"), InvalidArgument);
  EXPECT_THROW(svc_.submit_annotation(t.task_id, "ann", {424242}, "the box"), InvalidArgument);
  EXPECT_THROW(svc_.submit_annotation(777, "ann", {}, "the box"), NotFound);
  EXPECT_EQ(svc_.task(t.task_id).state, TaskState::kPendingAnnotation);
  svc_.submit_annotation(t.task_id, "ann", {}, "the box");
  svc_.submit_validation(t.task_id, "val", {});
  EXPECT_THROW(svc_.submit_annotation(t.task_id, "ann", {}, "again"), StateError);
}

TEST_F(ServiceTest, ValidatorRulesAndRejection) {
  const Id id = annotated(first_two());
  EXPECT_THROW(svc_.submit_validation(id, "ann", first_two()), InvalidArgument);
  EXPECT_THROW(svc_.reject(id, "ann", "mine"), InvalidArgument);
  EXPECT_THROW(svc_.submit_validation(id, "val", {424242}), InvalidArgument);
  EXPECT_EQ(svc_.reject(id, "val", "expression does not fit the image"), TaskState::kRejected);
  EXPECT_EQ(svc_.task(id).rejection->reason, "expression does not fit the image");
  EXPECT_THROW(svc_.reject(id, "val2", "again"), StateError);
  EXPECT_THROW(svc_.submit_validation(id, "val2", {}), StateError);

  const Id valid = annotated({});
  svc_.submit_validation(valid, "val", {});
  EXPECT_THROW(svc_.reject(valid, "val2", "late"), StateError);
  const Id pending = svc_.create_tasks({ds_.images.front().id}).front().task_id;
  EXPECT_THROW(svc_.reject(pending, "val", "early"), StateError);
}

TEST_F(ServiceTest, RecreateOpensFreshTask) {
  const Id id = annotated(first_two());
  EXPECT_THROW(svc_.recreate_task(id), StateError);
  svc_.reject(id, "val", "bad");
  const auto fresh = svc_.recreate_task(id);
  EXPECT_NE(fresh.task_id, id);
  EXPECT_EQ(fresh.image_id, svc_.task(id).image_id);
  EXPECT_EQ(fresh.state, TaskState::kPendingAnnotation);
  EXPECT_EQ(svc_.task(id).state, TaskState::kRejected);
}

TEST_F(ServiceTest, NextValidationIsBlindAndFair) {
  EXPECT_FALSE(svc_.next_validation("val").has_value());
  const Id id = annotated(first_two());
  EXPECT_FALSE(svc_.next_validation("ann").has_value());
  const auto view = svc_.next_validation("val");
  ASSERT_TRUE(view.has_value());
  EXPECT_EQ((*view)["task_id"].get<Id>(), id);
  EXPECT_EQ((*view)["expression"], "the red square");
  EXPECT_FALSE(contains_key(*view, "annotator_selection"));
  EXPECT_FALSE(contains_key(*view, "validation_attempts"));
  EXPECT_FALSE(contains_key(*view, "annotator_id"));
  EXPECT_EQ((*view)["candidate_instances"].size(), svc_.task(id).candidate_instances.size());
}

TEST_F(ServiceTest, SuggestionsComeFromOtherImagesOfTheSplit) {
  const auto ids = image_ids(svc_.catalog());
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int k = 0; k < 3; ++k) svc_.add_pool_expression(Split::kTrain, ids[i], "expr " + std::to_string(i * 10 + k));
  svc_.add_pool_expression(Split::kVal, ids[1], "from val");
  const auto t = svc_.create_tasks({ids[0]}).front();
  const auto s = svc_.suggest_no_target(t.task_id, 5);
  ASSERT_EQ(s.size(), 5u);
  std::set<std::string> seen;
  for (const auto& x : s) {
    EXPECT_NE(x.source_image_id, ids[0]);
    EXPECT_NE(x.expression, "from val");
    seen.insert(x.expression);
  }
  EXPECT_EQ(seen.size(), 5u) << "drawn without replacement";
  // Capped by the pool size.
  EXPECT_EQ(svc_.suggest_no_target(t.task_id, 100).size(), 3 * (ids.size() - 1));

  // Same seed and call sequence, same draws.
  AnnotationService other(catalog_of(ds_), 5);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int k = 0; k < 3; ++k) other.add_pool_expression(Split::kTrain, ids[i], "expr " + std::to_string(i * 10 + k));
  const auto t2 = other.create_tasks({ids[0]}).front();
  const auto s2 = other.suggest_no_target(t2.task_id, 5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(s2[i].expression, s[i].expression);
}

TEST_F(ServiceTest, SuggestionsNeedOtherImages) {
  const auto ids = image_ids(svc_.catalog());
  svc_.add_pool_expression(Split::kTrain, ids[0], "only here");
  const auto t = svc_.create_tasks({ids[0]}).front();
  EXPECT_THROW(svc_.suggest_no_target(t.task_id, 5), NotFound);
  EXPECT_THROW(svc_.suggest_no_target(4242, 5), NotFound);
}

// ---------------------------------------------------------------- state machine

TEST(StateMachine, RandomOperationSequencesStayLegal) {
  const auto rep = testing::play_random_sequences(catalog_of(scene_dataset()), 10000, 2024);
  ASSERT_EQ(rep.failure, "");
  EXPECT_EQ(rep.sequences, 10000u);
  // The generator should not be dominated by rejected operations.
  EXPECT_GT(rep.successes, rep.ops / 5);
  for (auto s : {TaskState::kPendingAnnotation, TaskState::kPendingValidation, TaskState::kSecondCheck,
                 TaskState::kValid, TaskState::kDiscarded, TaskState::kRejected}) {
    const auto it = rep.reached.find(s);
    EXPECT_TRUE(it != rep.reached.end() && it->second > 0) << "state never reached: " << to_string(s);
  }
}

// ---------------------------------------------------------------- persistence

class ProjectTest : public ::testing::Test {
 protected:
  ProjectTest() : ds_(scene_dataset()) { write_dataset(dir_.path(), ds_); }

  // A small history touching every kind of record.
  void play(AnnotationService& s) {
    const auto ids = image_ids(s.catalog());
    const auto tasks = s.create_tasks({ids[0], ids[1], ids[2], kEmptyImage});
    s.submit_annotation(tasks[0].task_id, "a", all_candidates(tasks[0]), "every shape");
    s.submit_annotation(tasks[1].task_id, "a", {}, "the purple star");
    s.submit_annotation(tasks[2].task_id, "b", {tasks[2].candidate_instances[0].ann_id}, "the first one");
    s.submit_annotation(tasks[3].task_id, "b", {}, "the green circle");
    s.submit_validation(tasks[0].task_id, "v", all_candidates(tasks[0]));
    s.submit_validation(tasks[1].task_id, "v", {});
    s.submit_validation(tasks[2].task_id, "v", {});
    s.submit_validation(tasks[2].task_id, "w", {});
    s.reject(tasks[3].task_id, "v", "irrelevant");
    s.recreate_task(tasks[2].task_id);
    s.add_pool_expression(Split::kTrain, ids[3], "a lonely square");
  }

  static std::vector<json> dump(const AnnotationService& s) {
    std::vector<json> out;
    for (const auto& t : s.tasks()) out.push_back(task_to_json(t));
    return out;
  }

  testing::TempDir dir_;
  Dataset ds_;
};

TEST_F(ProjectTest, ReopenReplaysTheLog) {
  std::vector<json> before;
  {
    auto s = AnnotationService::open(dir_.path(), 1);
    play(s);
    before = dump(s);
  }
  EXPECT_FALSE(fs::exists(dir_ / AnnotationService::kSnapshotFile));
  auto s = AnnotationService::open(dir_.path(), 1);
  EXPECT_EQ(dump(s), before);
  // Ids continue after the replayed ones.
  EXPECT_EQ(s.create_tasks({kEmptyImage}).front().task_id, Id(before.size()) + 1);
}

TEST_F(ProjectTest, SnapshotPlusTailMatchesFullReplay) {
  std::vector<json> before;
  {
    auto s = AnnotationService::open(dir_.path(), 1, 4);
    play(s);
    before = dump(s);
  }
  EXPECT_TRUE(fs::exists(dir_ / AnnotationService::kSnapshotFile));
  auto s = AnnotationService::open(dir_.path(), 1, 4);
  EXPECT_EQ(dump(s), before);
  // The suggestion pool survives too.
  const auto t = s.create_tasks({image_ids(s.catalog())[0]}).front();
  bool saw_pool_entry = false;
  for (const auto& x : s.suggest_no_target(t.task_id, 100)) saw_pool_entry |= x.expression == "a lonely square";
  EXPECT_TRUE(saw_pool_entry);
}

TEST_F(ProjectTest, PartialLastRecordIsDropped) {
  std::vector<json> before;
  {
    auto s = AnnotationService::open(dir_.path(), 1);
    play(s);
    before = dump(s);
  }
  {
    std::ofstream f(dir_ / AnnotationService::kLogFile, std::ios::app);
    f << R"({"op":"reject","task_id":1,"valid)";
  }
  auto s = AnnotationService::open(dir_.path(), 1);
  EXPECT_EQ(dump(s), before);
}

TEST_F(ProjectTest, CorruptOrGappedLogIsRefused) {
  {
    auto s = AnnotationService::open(dir_.path(), 1);
    play(s);
  }
  const auto log = dir_ / AnnotationService::kLogFile;
  const std::string text = testing::slurp(log);
  std::vector<std::string> lines;
  for (std::size_t pos = 0, nl; (nl = text.find('\n', pos)) != std::string::npos; pos = nl + 1)
    lines.push_back(text.substr(pos, nl - pos));
  ASSERT_GT(lines.size(), 4u);

  auto write_lines = [&](std::vector<std::string> ls) {
    std::string out;
    for (const auto& l : ls) out += l + "\n";
    testing::spit(log, out);
  };
  auto gapped = lines;
  gapped.erase(gapped.begin() + 2);
  write_lines(gapped);
  EXPECT_THROW(AnnotationService::open(dir_.path(), 1), SchemaError);

  auto garbled = lines;
  garbled[1] = "{not json";
  write_lines(garbled);
  EXPECT_THROW(AnnotationService::open(dir_.path(), 1), SchemaError);
}

TEST_F(ProjectTest, UnwritableProjectIsReported) {
  testing::spit(dir_ / "plain_file", "x");
  EXPECT_THROW(AnnotationService::open(dir_ / "plain_file" / "project"), Error);
}

// ---------------------------------------------------------------- export

TEST_F(ProjectTest, ExportLoadRoundTripKeepsOnlyValidTasks) {
  auto s = AnnotationService::open(dir_.path(), 1);
  play(s);
  testing::TempDir out;
  const auto summary = s.export_dataset(out.path());
  EXPECT_EQ(summary.samples, 2u);  // tasks 1 and 2 are VALID
  EXPECT_EQ(summary.images, 2u);

  const auto loaded = load_dataset(out.path(), Split::kTrain);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(testing::export_mismatch(s, loaded), "");
  EXPECT_TRUE(load_dataset(out.path(), Split::kVal).empty());
  EXPECT_TRUE(fs::exists(out / "images"));
}

TEST(Export, NoValidTasksGivesLoadableEmptyFiles) {
  const Dataset ds = scene_dataset();
  AnnotationService s(catalog_of(ds));
  s.create_tasks({kEmptyImage});
  testing::TempDir out;
  const auto summary = s.export_dataset(out.path());
  EXPECT_EQ(summary.samples, 0u);
  EXPECT_TRUE(load_dataset(out.path(), Split::kTrain).empty());
  EXPECT_TRUE(load_instances(out.path()).images.empty());
}

// ---------------------------------------------------------------- HTTP

class HttpTest : public ProjectTest {
 protected:
  HttpTest()
      : svc_(AnnotationService::open(dir_.path(), 3)), http_(svc_), port_(http_.bind("127.0.0.1", 0)),
        client_("127.0.0.1", port_) {
    http_.start();
  }
  ~HttpTest() override { http_.stop(); }

  std::pair<int, json> post(const std::string& path, const json& body) {
    auto r = client_.Post(path, body.dump(), "application/json");
    if (!r) return {-1, nullptr};
    return {r->status, json::parse(r->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    auto r = client_.Get(path);
    if (!r) return {-1, nullptr};
    return {r->status, json::parse(r->body)};
  }

  AnnotationService svc_;
  AnnotationHttp http_;
  int port_;
  httplib::Client client_;
};

TEST_F(HttpTest, FullGameOverTheWire) {
  const Id img = ds_.images.front().id;
  auto [st, created] = post("/api/v1/create-tasks", {{"image_ids", {img, kEmptyImage}}});
  ASSERT_EQ(st, 200) << created.dump();
  ASSERT_EQ(created["tasks"].size(), 2u);
  EXPECT_EQ(created["tasks"][0]["state"], "PENDING_ANNOTATION");
  const Id id = created["tasks"][0]["task_id"].get<Id>();

  auto [st2, task] = get("/api/v1/annotation-task?task_id=" + std::to_string(id));
  ASSERT_EQ(st2, 200);
  const auto& cands = task["task"]["candidate_instances"];
  ASSERT_FALSE(cands.empty());
  const Id target = cands[0]["ann_id"].get<Id>();
  auto [st2b, next] = get("/api/v1/annotation-task");
  EXPECT_EQ(next["task"]["task_id"].get<Id>(), id);

  auto [st3, sub] = post("/api/v1/submit-annotation",
                         {{"task_id", id}, {"annotator_id", "ann"}, {"selection", {target}}, {"expression", "that one"}});
  ASSERT_EQ(st3, 200) << sub.dump();
  EXPECT_EQ(sub["state"], "PENDING_VALIDATION");

  auto [st4, none] = get("/api/v1/next-validation?validator_id=ann");
  EXPECT_EQ(st4, 200);
  EXPECT_TRUE(none["task"].is_null());
  auto [st5, blind] = get("/api/v1/next-validation?validator_id=val");
  ASSERT_EQ(st5, 200);
  EXPECT_EQ(blind["task"]["task_id"].get<Id>(), id);
  EXPECT_EQ(blind["task"]["expression"], "that one");
  EXPECT_FALSE(contains_key(blind, "annotator_selection"));

  auto [st6, v] = post("/api/v1/submit-validation", {{"task_id", id}, {"validator_id", "val"}, {"selection", json::array()}});
  ASSERT_EQ(st6, 200);
  EXPECT_EQ(v["state"], "SECOND_CHECK");
  auto [st7, v2] = post("/api/v1/submit-validation", {{"task_id", id}, {"validator_id", "val2"}, {"selection", {target}}});
  EXPECT_EQ(v2["state"], "VALID");
  auto [st8, state] = get("/api/v1/task-state?task_id=" + std::to_string(id));
  EXPECT_EQ(state["state"], "VALID");

  // Second task: no-target annotation, then rejection and re-creation.
  const Id id2 = created["tasks"][1]["task_id"].get<Id>();
  post("/api/v1/submit-annotation",
       {{"task_id", id2}, {"annotator_id", "ann"}, {"selection", json::array()}, {"expression", "a blue cat"}});
  auto [st9, rej] = post("/api/v1/reject", {{"task_id", id2}, {"validator_id", "val"}, {"reason", "irrelevant"}});
  EXPECT_EQ(rej["state"], "REJECTED");
  auto [st10, re] = post("/api/v1/recreate-task", {{"task_id", id2}});
  ASSERT_EQ(st10, 200);
  EXPECT_EQ(re["task"]["state"], "PENDING_ANNOTATION");

  auto [st11, sug] = get("/api/v1/suggest-no-target?task_id=" + std::to_string(re["task"]["task_id"].get<Id>()) + "&k=3");
  ASSERT_EQ(st11, 200) << sug.dump();
  ASSERT_EQ(sug["suggestions"].size(), 1u);  // only "that one" comes from another image
  EXPECT_EQ(sug["suggestions"][0]["source_image_id"].get<Id>(), img);

  testing::TempDir out;
  auto [st12, ex] = post("/api/v1/export", {{"out_dir", out.path().string()}});
  ASSERT_EQ(st12, 200) << ex.dump();
  EXPECT_EQ(ex["samples"], 1);
  EXPECT_EQ(load_dataset(out.path(), Split::kTrain).size(), 1u);

  auto img_res = client_.Get("/api/v1/images/" + std::to_string(img));
  ASSERT_TRUE(img_res);
  EXPECT_EQ(img_res->status, 200);
  EXPECT_EQ(img_res->body.substr(0, 2), "P6");
}

TEST_F(HttpTest, ErrorsMapToStatusCodes) {
  EXPECT_EQ(get("/api/v1/task-state?task_id=99").first, 404);
  EXPECT_EQ(get("/api/v1/task-state").first, 400);
  EXPECT_EQ(get("/api/v1/task-state?task_id=abc").first, 400);
  EXPECT_EQ(post("/api/v1/create-tasks", {{"image_ids", {31337}}}).first, 404);
  EXPECT_EQ(post("/api/v1/create-tasks", {{"images", {1}}}).first, 400);
  EXPECT_EQ(client_.Post("/api/v1/create-tasks", "{oops", "application/json")->status, 400);
  EXPECT_EQ(client_.Post("/api/v1/create-tasks", "[1]", "application/json")->status, 400);
  const Id id = post("/api/v1/create-tasks", {{"image_ids", {kEmptyImage}}}).second["tasks"][0]["task_id"].get<Id>();
  EXPECT_EQ(post("/api/v1/reject", {{"task_id", id}, {"validator_id", "v"}}).first, 409);
  EXPECT_EQ(post("/api/v1/submit-annotation",
                 {{"task_id", id}, {"annotator_id", "a"}, {"selection", json::array()}, {"expression", ""}})
                .first,
            400);
  EXPECT_EQ(get("/api/v1/suggest-no-target?task_id=" + std::to_string(id)).first, 404);
  EXPECT_EQ(get("/api/v1/next-validation").first, 400);
  EXPECT_EQ(client_.Get("/api/v1/images/31337")->status, 404);
}

TEST_F(HttpTest, BusyPortIsReported) {
  AnnotationHttp second(svc_);
  EXPECT_THROW(second.bind("127.0.0.1", port_), Error);
}

}  // namespace
}  // namespace grex::annotation
