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

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "grex/core/error.hpp"
#include "grex/dataset/io.hpp"
#include "grex/dataset/sample.hpp"

namespace grex::annotation {

using json = nlohmann::json;
using Selection = std::set<Id>;

enum class TaskState {
  kPendingAnnotation,
  kPendingValidation,
  kSecondCheck,
  kValid,
  kDiscarded,
  kRejected,
};

inline std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::kPendingAnnotation: return "PENDING_ANNOTATION";
    case TaskState::kPendingValidation: return "PENDING_VALIDATION";
    case TaskState::kSecondCheck: return "SECOND_CHECK";
    case TaskState::kValid: return "VALID";
    case TaskState::kDiscarded: return "DISCARDED";
    case TaskState::kRejected: return "REJECTED";
  }
  return "?";
}

inline TaskState parse_task_state(std::string_view s) {
  for (auto t : {TaskState::kPendingAnnotation, TaskState::kPendingValidation, TaskState::kSecondCheck,
                 TaskState::kValid, TaskState::kDiscarded, TaskState::kRejected})
    if (to_string(t) == s) return t;
  throw SchemaError("unknown task state '" + std::string(s) + "'");
}

inline bool is_terminal(TaskState s) {
  return s == TaskState::kValid || s == TaskState::kDiscarded || s == TaskState::kRejected;
}

inline bool is_validation_state(TaskState s) {
  return s == TaskState::kPendingValidation || s == TaskState::kSecondCheck;
}

/// The transition relation of the game. Anything not listed is illegal.
inline bool legal_transition(TaskState from, TaskState to) {
  using S = TaskState;
  switch (from) {
    case S::kPendingAnnotation: return to == S::kPendingValidation;
    case S::kPendingValidation: return to == S::kValid || to == S::kSecondCheck || to == S::kRejected;
    case S::kSecondCheck: return to == S::kValid || to == S::kDiscarded || to == S::kRejected;
    default: return false;
  }
}

struct ValidationAttempt {
  std::string validator_id;
  Selection selection;
  bool matched = false;
};

struct Rejection {
  std::string validator_id;
  std::string reason;
};

struct AnnotationTask {
  Id task_id = 0;
  Id image_id = 0;
  Split split = Split::kTrain;
  std::vector<InstanceRecord> candidate_instances;
  TaskState state = TaskState::kPendingAnnotation;
  std::string annotator_id;
  Selection annotator_selection;  // never leaves the service toward a validator
  std::string expression;
  std::vector<ValidationAttempt> validation_attempts;
  std::optional<Rejection> rejection;

  bool has_candidate(Id ann_id) const {
    for (const auto& c : candidate_instances)
      if (c.ann_id == ann_id) return true;
    return false;
  }
  bool validated_by(std::string_view who) const {
    for (const auto& a : validation_attempts)
      if (a.validator_id == who) return true;
    return rejection && rejection->validator_id == who;
  }
};

inline json instance_to_json(const InstanceRecord& r) {
  return {{"ann_id", r.ann_id},
          {"image_id", r.image_id},
          {"category", r.category},
          {"bbox", box_to_json(r.box)},
          {"segmentation", rle_to_json(r.mask)}};
}

inline InstanceRecord instance_from_json(const json& j, const std::string& where) {
  InstanceRecord r;
  r.ann_id = j.at("ann_id").get<Id>();
  r.image_id = j.at("image_id").get<Id>();
  r.category = j.value("category", std::string{});
  r.box = box_from_json(j.at("bbox"), where + ".bbox");
  r.mask = rle_from_json(j.at("segmentation"), where + ".segmentation");
  return r;
}

/// Full task record, used for the log and snapshots only.
inline json task_to_json(const AnnotationTask& t) {
  json cands = json::array();
  for (const auto& c : t.candidate_instances) cands.push_back(instance_to_json(c));
  json attempts = json::array();
  for (const auto& a : t.validation_attempts)
    attempts.push_back({{"validator_id", a.validator_id}, {"selection", a.selection}, {"matched", a.matched}});
  json j{{"task_id", t.task_id},
         {"image_id", t.image_id},
         {"split", std::string(to_string(t.split))},
         {"candidate_instances", cands},
         {"state", std::string(to_string(t.state))},
         {"annotator_id", t.annotator_id},
         {"annotator_selection", t.annotator_selection},
         {"expression", t.expression},
         {"validation_attempts", attempts}};
  if (t.rejection) j["rejection"] = {{"validator_id", t.rejection->validator_id}, {"reason", t.rejection->reason}};
  return j;
}

inline AnnotationTask task_from_json(const json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<Id>();
  t.image_id = j.at("image_id").get<Id>();
  t.split = parse_split(j.at("split").get<std::string>());
  const auto& cands = j.at("candidate_instances");
  for (std::size_t i = 0; i < cands.size(); ++i)
    t.candidate_instances.push_back(instance_from_json(cands[i], "candidate_instances[" + std::to_string(i) + "]"));
  t.state = parse_task_state(j.at("state").get<std::string>());
  t.annotator_id = j.at("annotator_id").get<std::string>();
  t.annotator_selection = j.at("annotator_selection").get<Selection>();
  t.expression = j.at("expression").get<std::string>();
  for (const auto& a : j.at("validation_attempts"))
    t.validation_attempts.push_back(
        {a.at("validator_id").get<std::string>(), a.at("selection").get<Selection>(), a.at("matched").get<bool>()});
  if (j.contains("rejection"))
    t.rejection = Rejection{j["rejection"].at("validator_id").get<std::string>(),
                            j["rejection"].at("reason").get<std::string>()};
  return t;
}

/// What an annotator sees: the image and its instances. There is no
/// selection yet, so nothing is withheld.
inline json annotation_view(const AnnotationTask& t) {
  json cands = json::array();
  for (const auto& c : t.candidate_instances) cands.push_back(instance_to_json(c));
  return {{"task_id", t.task_id},
          {"image_id", t.image_id},
          {"split", std::string(to_string(t.split))},
          {"state", std::string(to_string(t.state))},
          {"candidate_instances", cands}};
}

/// What a validator sees. Built field by field so that the annotator's
/// selection (and the attempts of earlier validators) cannot leak.
inline json blind_view(const AnnotationTask& t) {
  json cands = json::array();
  for (const auto& c : t.candidate_instances) cands.push_back(instance_to_json(c));
  return {{"task_id", t.task_id},
          {"image_id", t.image_id},
          {"expression", t.expression},
          {"candidate_instances", cands}};
}

}  // namespace grex::annotation
