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

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
// <resolv.h>, pulled in by httplib, defines _res, which collides with
// identifiers inside Eigen headers included later.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "grex/annotation/service.hpp"
#include "grex/core/error.hpp"

namespace grex::annotation {

/// JSON-over-HTTP front end for AnnotationService. All routes live under
/// /api/v1/. When `ui_dir` exists it is served at "/"; the API works the
/// same without it.
///
///   POST /api/v1/create-tasks        {image_ids, split?}            -> {tasks}
///   GET  /api/v1/annotation-task     ?task_id=                       -> {task}
///   POST /api/v1/submit-annotation   {task_id, annotator_id, selection, expression} -> {task_id, state}
///   GET  /api/v1/suggest-no-target   ?task_id=&k=                    -> {suggestions}
///   GET  /api/v1/next-validation     ?validator_id=                  -> {task} (blind, or null)
///   POST /api/v1/submit-validation   {task_id, validator_id, selection} -> {task_id, state}
///   POST /api/v1/reject              {task_id, validator_id, reason} -> {task_id, state}
///   POST /api/v1/recreate-task       {task_id}                       -> {task}
///   GET  /api/v1/task-state          ?task_id=                       -> {task_id, state}
///   POST /api/v1/export              {out_dir}                       -> {samples, images, out_dir}
///   GET  /api/v1/images/<image_id>                                   -> PPM bytes
///
/// Errors come back as {error} with 400 (bad input), 404 (unknown id) or
/// 409 (wrong state).
class AnnotationHttp {
 public:
  AnnotationHttp(AnnotationService& service, std::optional<std::filesystem::path> ui_dir = std::nullopt)
      : svc_(service) {
    // The library default adds SO_REUSEPORT, which lets a second server
    // silently share a busy port. Only SO_REUSEADDR is wanted here.
    server_.set_socket_options([](auto sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    if (ui_dir && std::filesystem::is_directory(*ui_dir)) server_.set_mount_point("/", ui_dir->string());
    routes();
  }

  ~AnnotationHttp() { stop(); }

  AnnotationHttp(const AnnotationHttp&) = delete;
  AnnotationHttp& operator=(const AnnotationHttp&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      const int p = server_.bind_to_any_port(host);
      if (p < 0) throw Error("cannot bind " + host);
      return p;
    }
    if (!server_.bind_to_port(host, port))
      throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    return port;
  }

  /// Serves until stop(); blocks the caller.
  void run() { server_.listen_after_bind(); }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Server& server() { return server_; }

 private:
  using Handler = std::function<json(const httplib::Request&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void route(const std::string& method, const std::string& path, Handler h) {
    auto wrapped = [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, 200, h(req));
      } catch (const NotFound& e) {
        reply(res, 404, {{"error", e.what()}});
      } catch (const StateError& e) {
        reply(res, 409, {{"error", e.what()}});
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
      } catch (const Error& e) {
        const bool client = dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const SchemaError*>(&e);
        reply(res, client ? 400 : 500, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
    if (method == "GET") server_.Get(path, wrapped);
    else server_.Post(path, wrapped);
  }

  static json body(const httplib::Request& req) {
    json j = json::parse(req.body);
    if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
    return j;
  }

  static Id id_param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) throw InvalidArgument(std::string("missing query parameter '") + name + "'");
    try {
      return std::stoll(req.get_param_value(name));
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("query parameter '") + name + "' is not an integer");
    }
  }

  static json state_reply(Id task_id, TaskState s) {
    return {{"task_id", task_id}, {"state", std::string(to_string(s))}};
  }

  void routes() {
    route("POST", "/api/v1/create-tasks", [this](const httplib::Request& req) {
      const json j = body(req);
      const Split split = parse_split(j.value("split", std::string("train")));
      json tasks = json::array();
      for (const auto& t : svc_.create_tasks(j.at("image_ids").get<std::vector<Id>>(), split))
        tasks.push_back(state_reply(t.task_id, t.state));
      return json{{"tasks", tasks}};
    });
    route("GET", "/api/v1/annotation-task", [this](const httplib::Request& req) {
      if (req.has_param("task_id")) {
        const auto t = svc_.task(id_param(req, "task_id"));
        if (t.state != TaskState::kPendingAnnotation)
          throw StateError("task " + std::to_string(t.task_id) + " is not awaiting annotation");
        return json{{"task", annotation_view(t)}};
      }
      const auto t = svc_.next_annotation();
      return json{{"task", t ? annotation_view(*t) : json(nullptr)}};
    });
    route("POST", "/api/v1/submit-annotation", [this](const httplib::Request& req) {
      const json j = body(req);
      const Id id = j.at("task_id").get<Id>();
      return state_reply(id, svc_.submit_annotation(id, j.at("annotator_id").get<std::string>(),
                                                    j.at("selection").get<Selection>(),
                                                    j.at("expression").get<std::string>()));
    });
    route("GET", "/api/v1/suggest-no-target", [this](const httplib::Request& req) {
      const Id id = id_param(req, "task_id");
      const std::size_t k = req.has_param("k") ? std::size_t(id_param(req, "k")) : 5;
      json out = json::array();
      for (const auto& s : svc_.suggest_no_target(id, k))
        out.push_back({{"expression", s.expression}, {"source_image_id", s.source_image_id}});
      return json{{"suggestions", out}};
    });
    route("GET", "/api/v1/next-validation", [this](const httplib::Request& req) {
      if (!req.has_param("validator_id")) throw InvalidArgument("missing query parameter 'validator_id'");
      const auto v = svc_.next_validation(req.get_param_value("validator_id"));
      return json{{"task", v ? *v : json(nullptr)}};
    });
    route("POST", "/api/v1/submit-validation", [this](const httplib::Request& req) {
      const json j = body(req);
      const Id id = j.at("task_id").get<Id>();
      return state_reply(id, svc_.submit_validation(id, j.at("validator_id").get<std::string>(),
                                                    j.at("selection").get<Selection>()));
    });
    route("POST", "/api/v1/reject", [this](const httplib::Request& req) {
      const json j = body(req);
      const Id id = j.at("task_id").get<Id>();
      return state_reply(id, svc_.reject(id, j.at("validator_id").get<std::string>(),
                                         j.value("reason", std::string{})));
    });
    route("POST", "/api/v1/recreate-task", [this](const httplib::Request& req) {
      const auto t = svc_.recreate_task(body(req).at("task_id").get<Id>());
      return json{{"task", state_reply(t.task_id, t.state)}};
    });
    route("GET", "/api/v1/task-state", [this](const httplib::Request& req) {
      const auto t = svc_.task(id_param(req, "task_id"));
      return state_reply(t.task_id, t.state);
    });
    route("POST", "/api/v1/export", [this](const httplib::Request& req) {
      const json j = body(req);
      const std::string out = j.at("out_dir").get<std::string>();
      const auto s = svc_.export_dataset(out);
      return json{{"samples", s.samples}, {"images", s.images}, {"out_dir", out}};
    });
    server_.Get(R"(/api/v1/images/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const Id id = std::stoll(req.matches[1].str());
      const auto& images = svc_.catalog().images;
      const auto it = images.find(id);
      const auto& dir = svc_.project_dir();
      if (it == images.end() || !dir) return reply(res, 404, {{"error", "unknown image " + std::to_string(id)}});
      const std::string name = it->second.file_name.empty() ? std::to_string(id) + ".ppm" : it->second.file_name;
      std::ifstream f(*dir / "images" / name, std::ios::binary);
      if (!f) return reply(res, 404, {{"error", "no pixels for image " + std::to_string(id)}});
      std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      res.set_content(bytes, "image/x-portable-pixmap");
    });
  }

  AnnotationService& svc_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace grex::annotation
