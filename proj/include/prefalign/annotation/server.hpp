// Copyright 2026 The Prefalign Authors.
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


#ifndef PREFALIGN_ANNOTATION_SERVER_HPP_
#define PREFALIGN_ANNOTATION_SERVER_HPP_

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "prefalign/annotation/guidelines.hpp"
#include "prefalign/annotation/store.hpp"
#include "prefalign/data/records.hpp"
#include "prefalign/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace prefalign::annotation {

enum class UserRole { kAnnotator, kExpert };

inline const char* role_name(UserRole r) { return r == UserRole::kExpert ? "expert" : "annotator"; }

struct Principal {
  std::string user;
  UserRole role = UserRole::kAnnotator;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

// Service settings from a key=value file:
//
//   host = 127.0.0.1
//   port = 8080
//   log = annotations.log
//   seed = 7
//   role.alice = annotator
//   token.alice = ...
//
// PREFALIGN_TOKEN_<USER> (upper-cased, non-alphanumerics as '_') overrides
// token.<user>, so secrets can stay out of the file.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string log_path = "annotations.log";
  std::uint64_t seed = 0;
  std::string cors_origin;
  std::map<std::string, UserRole> roles;
  std::map<std::string, std::string> tokens;  // user -> token

  std::optional<Principal> authenticate(const std::string& token) const {
    std::optional<Principal> found;
    for (const auto& [user, t] : tokens) {
      // Full scan with a length-independent compare.
      bool same = t.size() == token.size();
      unsigned char diff = 0;
      for (std::size_t i = 0; i < t.size(); ++i) diff |= static_cast<unsigned char>(t[i] ^ (i < token.size() ? token[i] : 0));
      if (same && diff == 0) found = Principal{user, roles.at(user)};
    }
    return found;
  }
};

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::string token_env_name(const std::string& user) {
  std::string out = "PREFALIGN_TOKEN_";
  for (char c : user) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : '_');
  return out;
}

inline ServiceConfig parse_service_config(const std::string& text, const EnvLookup& env = process_env) {
  ServiceConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto bad = [&](const std::string& what) {
    fail(ErrorCode::kParse, "service config line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) bad("expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    try {
      if (key == "host") cfg.host = value;
      else if (key == "port") cfg.port = std::stoi(value);
      else if (key == "log") cfg.log_path = value;
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "cors_origin") cfg.cors_origin = value;
      else if (key.rfind("role.", 0) == 0) {
        if (value != "annotator" && value != "expert") bad("role must be annotator or expert");
        cfg.roles[key.substr(5)] = value == "expert" ? UserRole::kExpert : UserRole::kAnnotator;
      } else if (key.rfind("token.", 0) == 0) {
        cfg.tokens[key.substr(6)] = value;
      } else {
        bad("unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      bad("bad value for '" + key + "'");
    }
  }
  if (cfg.port < 0 || cfg.port > 65535) fail(ErrorCode::kParse, "service config: port out of range (0 picks a free port)");
  for (const auto& [user, role] : cfg.roles) {
    if (auto v = env(token_env_name(user))) cfg.tokens[user] = *v;
  }
  for (const auto& [user, token] : cfg.tokens) {
    if (!cfg.roles.count(user)) fail(ErrorCode::kParse, "service config: token for user '" + user + "' without a role");
    if (token.size() < 8) fail(ErrorCode::kParse, "service config: token for '" + user + "' shorter than 8 characters");
  }
  for (auto it = cfg.tokens.begin(); it != cfg.tokens.end(); ++it) {
    for (auto jt = std::next(it); jt != cfg.tokens.end(); ++jt) {
      if (it->second == jt->second) fail(ErrorCode::kParse, "service config: users '" + it->first + "' and '" + jt->first + "' share a token");
    }
  }
  return cfg;
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kParse:
    case ErrorCode::kLengthOverflow: return 400;
    case ErrorCode::kUnauthenticated: return 401;
    case ErrorCode::kPermissionDenied: return 403;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kUnavailable: return 503;
    default: return 500;
  }
}

inline nlohmann::json error_body(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", std::string(error_code_name(code))}, {"message", message}}}};
}

// JSON-over-HTTP front end for an AnnotationStore.
//
//   POST /tasks                 expert     {"pairs":[...]} and/or {"dialogues":[...]}
//   GET  /tasks/next            annotator  next assigned task, presentation order
//   POST /votes                 annotator  {"task_id","preferred":"A|B|tie","decisive_dimension","rationale"?}
//   POST /resolutions           expert     {"task_id","preferred","decisive_dimension","note"}
//   GET  /tasks/conflicted      expert
//   GET  /tasks/{id}            any        experts see the canonical record
//   GET  /export                expert     preference records as JSON lines
//   GET  /guidelines            any
//   GET  /healthz               none
//
// Votes name the labels as presented; resolutions use the canonical labels
// shown in the expert view.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServiceConfig cfg) : store_(store), cfg_(std::move(cfg)) { routes(); }

  // Binds to the configured host; port 0 picks a free port. Returns the port.
  int bind() {
    const int port = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host) : (server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port < 0) fail(ErrorCode::kUnavailable, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    return port;
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  const ServiceConfig& config() const { return cfg_; }

 private:
  using Handler = std::function<nlohmann::json(const Principal&, const httplib::Request&)>;

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  std::optional<Principal> principal_of(const httplib::Request& req) const {
    const std::string h = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    return cfg_.authenticate(h.substr(prefix.size()));
  }

  httplib::Server::Handler wrap(std::optional<UserRole> needed, Handler h) {
    return [this, needed, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      if (!cfg_.cors_origin.empty()) res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
      try {
        const auto who = principal_of(req);
        if (!who) fail(ErrorCode::kUnauthenticated, "missing or unknown bearer token");
        if (needed && who->role != *needed) {
          fail(ErrorCode::kPermissionDenied, std::string("requires role ") + role_name(*needed));
        }
        send(res, 200, h(*who, req));
      } catch (const Error& e) {
        send(res, http_status(e.code()), error_body(e.code(), e.what()));
      } catch (const nlohmann::json::exception& e) {
        send(res, 400, error_body(ErrorCode::kParse, e.what()));
      } catch (const std::exception& e) {
        send(res, 500, error_body(ErrorCode::kIo, e.what()));
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("request body is not JSON: ") + e.what());
    }
  }

  static TaskId task_id_of(const nlohmann::json& j) {
    if (!j.contains("task_id") || !j["task_id"].is_number_unsigned()) {
      fail(ErrorCode::kInvalidArgument, "task_id must be a positive integer");
    }
    return j["task_id"].get<TaskId>();
  }

  nlohmann::json create(const nlohmann::json& body) {
    nlohmann::json ids = nlohmann::json::array(), rejected = nlohmann::json::array();
    if (body.contains("pairs")) {
      std::vector<PairInput> pairs;
      for (const auto& p : body.at("pairs")) {
        pairs.push_back({p.at("context").get<std::string>(), p.at("response_a").get<std::string>(),
                         p.at("response_b").get<std::string>(), std::nullopt,
                         p.value("source", std::string("in_distribution"))});
      }
      const auto r = store_.create_tasks(pairs);
      for (auto id : r.created) ids.push_back(id);
      for (const auto& [i, why] : r.rejected) rejected.push_back({{"pair", i}, {"error", why}});
    }
    if (body.contains("dialogues")) {
      std::size_t d = 0;
      for (const auto& dj : body.at("dialogues")) {
        std::vector<AnnotationStore::DialogueTurn> turns;
        for (const auto& tj : dj.at("turns")) {
          AnnotationStore::DialogueTurn t;
          t.role = data::parse_role(tj.at("role").get<std::string>());
          if (tj.contains("candidates")) t.candidates = tj.at("candidates").get<std::vector<std::string>>();
          else t.candidates = {tj.at("text").get<std::string>()};
          turns.push_back(std::move(t));
        }
        try {
          const auto r = store_.create_dialogue_tasks(turns, dj.value("source", std::string("in_distribution")));
          for (auto id : r.created) ids.push_back(id);
          for (const auto& [i, why] : r.rejected) rejected.push_back({{"dialogue", d}, {"turn_task", i}, {"error", why}});
        } catch (const Error& e) {
          rejected.push_back({{"dialogue", d}, {"error", e.what()}});
        }
        ++d;
      }
    }
    if (!body.contains("pairs") && !body.contains("dialogues")) {
      fail(ErrorCode::kInvalidArgument, "body needs 'pairs' or 'dialogues'");
    }
    return {{"task_ids", ids}, {"rejected", rejected}};
  }

  void routes() {
    server_.set_payload_max_length(16u << 20);
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send(res, 200, {{"status", "ok"}});
    });
    if (!cfg_.cors_origin.empty()) {
      server_.Options(R"(/.*)", [this](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.status = 204;
      });
    }
    server_.Get("/guidelines", wrap(std::nullopt, [](const Principal&, const httplib::Request&) {
      return guidelines_json();
    }));
    server_.Post("/tasks", wrap(UserRole::kExpert, [this](const Principal&, const httplib::Request& req) {
      return create(body_of(req));
    }));
    server_.Get("/tasks/next", wrap(UserRole::kAnnotator, [this](const Principal& who, const httplib::Request& req) {
      if (req.has_param("annotator") && req.get_param_value("annotator") != who.user) {
        fail(ErrorCode::kPermissionDenied, "token belongs to " + who.user);
      }
      const auto t = store_.next_task(who.user);
      return nlohmann::json{{"task", t ? presented_view(*t) : nlohmann::json(nullptr)}};
    }));
    server_.Get("/tasks/conflicted", wrap(UserRole::kExpert, [this](const Principal&, const httplib::Request&) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : store_.conflicted()) out.push_back(to_json(t));
      return nlohmann::json{{"tasks", out}};
    }));
    server_.Get(R"(/tasks/(\d+))", wrap(std::nullopt, [this](const Principal& who, const httplib::Request& req) {
      const TaskId id = std::stoull(req.matches[1].str());
      const auto t = store_.get(id);
      if (!t) fail(ErrorCode::kNotFound, "no task " + std::to_string(id));
      if (who.role == UserRole::kExpert) return to_json(*t);
      if (!t->is_assigned(who.user)) fail(ErrorCode::kPermissionDenied, "task not assigned to " + who.user);
      return presented_view(*t);
    }));
    server_.Post("/votes", wrap(UserRole::kAnnotator, [this](const Principal& who, const httplib::Request& req) {
      const auto body = body_of(req);
      const TaskId id = task_id_of(body);
      const auto t = store_.get(id);
      if (!t) fail(ErrorCode::kNotFound, "no task " + std::to_string(id));
      Vote v;
      v.task_id = id;
      v.annotator = who.user;
      v.preferred = t->to_canonical(parse_preference(body.at("preferred").get<std::string>()));
      if (!body.contains("decisive_dimension")) fail(ErrorCode::kInvalidArgument, "decisive_dimension is required");
      v.decisive_dimension = body.at("decisive_dimension").get<std::string>();
      if (body.contains("rationale") && !body["rationale"].is_null()) v.rationale = body["rationale"].get<std::string>();
      const TaskStatus s = store_.submit_vote(v);
      return nlohmann::json{{"task_id", id}, {"status", status_name(s)}};
    }));
    server_.Post("/resolutions", wrap(UserRole::kExpert, [this](const Principal& who, const httplib::Request& req) {
      const auto body = body_of(req);
      Resolution r;
      r.task_id = task_id_of(body);
      r.expert = who.user;
      r.preferred = parse_preference(body.at("preferred").get<std::string>());
      if (!body.contains("decisive_dimension")) fail(ErrorCode::kInvalidArgument, "decisive_dimension is required");
      r.decisive_dimension = body.at("decisive_dimension").get<std::string>();
      r.note = body.value("note", std::string());
      return to_json(store_.resolve(r));
    }));
    server_.Get("/export", [this](const httplib::Request& req, httplib::Response& res) {
      // JSON lines rather than one JSON document; errors still use the JSON envelope.
      if (!cfg_.cors_origin.empty()) res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
      const auto who = principal_of(req);
      if (!who) return send(res, 401, error_body(ErrorCode::kUnauthenticated, "missing or unknown bearer token"));
      if (who->role != UserRole::kExpert) return send(res, 403, error_body(ErrorCode::kPermissionDenied, "requires role expert"));
      try {
        res.set_content(data::serialize_corpus(store_.export_preferences()), "application/x-ndjson");
      } catch (const Error& e) {
        send(res, http_status(e.code()), error_body(e.code(), e.what()));
      }
    });
  }

  AnnotationStore& store_;
  ServiceConfig cfg_;
  httplib::Server server_;
};

}  // namespace prefalign::annotation

#endif  // PREFALIGN_ANNOTATION_SERVER_HPP_
