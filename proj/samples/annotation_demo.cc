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


// Scripted annotation round against the HTTP service: an expert uploads
// pairs, two annotators vote, the expert settles the conflicts, and the
// resolved preferences are exported.
//
//   annotation_demo [--input generated.jsonl] [--log events.jsonl]
//
// Annotators favour the longer answer; "bob" disagrees on every fourth
// task so the expert queue is never empty.

#include <iostream>
#include <thread>

#include "prefalign/annotation/store.hpp"
#include "prefalign/data/records.hpp"

// httplib after the Eigen-based headers.
#include "prefalign/annotation/server.hpp"

#include <CLI11.hpp>

namespace {

using namespace prefalign;
using namespace prefalign::annotation;
using Json = nlohmann::json;

class Client {
 public:
  Client(int port, std::string token) : http_("127.0.0.1", port), token_(std::move(token)) {}

  Json get(const std::string& path) { return check(http_.Get(path, headers())); }
  Json post(const std::string& path, const Json& body) {
    return check(http_.Post(path, headers(), body.dump(), "application/json"));
  }
  std::string get_text(const std::string& path) {
    auto res = http_.Get(path, headers());
    if (!res || res->status != 200) fail(ErrorCode::kUnavailable, "GET " + path + " failed");
    return res->body;
  }

 private:
  httplib::Headers headers() const { return {{"Authorization", "Bearer " + token_}}; }
  static Json check(const httplib::Result& res) {
    if (!res) fail(ErrorCode::kUnavailable, "request failed: " + httplib::to_string(res.error()));
    Json body = Json::parse(res->body);
    if (res->status != 200) fail(ErrorCode::kConflict, body.dump());
    return body;
  }

  httplib::Client http_;
  std::string token_;
};

Json demo_pairs() {
  Json pairs = Json::array();
  const std::vector<std::pair<std::string, std::vector<std::string>>> items = {
      {"I have a headache.", {"Rest.", "Rest, drink water, and see a doctor if it lasts."}},
      {"Is ibuprofen safe with coffee?", {"Usually yes, in normal doses.", "Yes."}},
      {"My child has a fever.", {"Measure it and keep them hydrated.", "Give medicine."}},
      {"Which clinic treats rashes?", {"Dermatology.", "Dermatology, or your GP first."}},
      {"How often should I exercise?", {"Often.", "Most days, about thirty minutes."}},
      {"Can I skip my blood pressure pill?", {"Ask your doctor before skipping it.", "Sure."}},
  };
  for (const auto& [q, r] : items) pairs.push_back({{"context", q}, {"response_a", r[0]}, {"response_b", r[1]}});
  return pairs;
}

Json pairs_from_file(const std::string& path) {
  Json pairs = Json::array();
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const Json j = Json::parse(line);
    pairs.push_back({{"context", j.at("context")}, {"response_a", j.at("response_a")}, {"response_b", j.at("response_b")}});
  }
  return pairs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scripted annotation round"};
  std::string input, log;
  app.add_option("--input", input, "generated pairs (JSON lines with context, response_a, response_b)");
  app.add_option("--log", log, "event log; default keeps everything in memory");
  CLI11_PARSE(app, argc, argv);

  try {
    AnnotationStore::Options opts;
    opts.log_path = log;
    opts.seed = 42;
    AnnotationStore store(opts);

    ServiceConfig cfg;
    cfg.port = 0;
    cfg.roles = {{"alice", UserRole::kAnnotator}, {"bob", UserRole::kAnnotator}, {"erin", UserRole::kExpert}};
    cfg.tokens = {{"alice", "alice-demo-token"}, {"bob", "bob-demo-token"}, {"erin", "erin-demo-token"}};
    AnnotationServer server(store, cfg);
    const int port = server.bind();
    std::thread serving([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    std::cout << "service on 127.0.0.1:" << port << "\n";

    Client erin(port, "erin-demo-token");
    const Json created = erin.post("/tasks", {{"pairs", input.empty() ? demo_pairs() : pairs_from_file(input)}});
    std::cout << "created " << created.dump() << "\n";
    std::cout << "guidelines cover " << erin.get("/guidelines").at("dimensions").size() << " dimensions\n";

    for (const std::string who : {"alice", "bob"}) {
      Client c(port, who + "-demo-token");
      int n = 0;
      while (true) {
        const Json t = c.get("/tasks/next?annotator=" + who).at("task");
        if (t.is_null()) break;
        const auto a = t.at("response_a").get<std::string>().size(), b = t.at("response_b").get<std::string>().size();
        std::string pick = a == b ? "tie" : (a > b ? "A" : "B");
        if (who == "bob" && t.at("id").get<TaskId>() % 4 == 0) pick = pick == "A" ? "B" : "A";
        const Json r = c.post("/votes", {{"task_id", t.at("id")}, {"preferred", pick}, {"decisive_dimension", "professionalism"}});
        std::cout << who << " task " << t.at("id") << " -> " << pick << " (" << r.at("status").get<std::string>() << ")\n";
        ++n;
      }
      std::cout << who << " finished " << n << " tasks\n";
    }

    const Json conflicted = erin.get("/tasks/conflicted");
    for (const auto& t : conflicted.at("tasks")) {
      const auto a = t.at("response_a").get<std::string>().size(), b = t.at("response_b").get<std::string>().size();
      const std::string pick = a == b ? "tie" : (a > b ? "A" : "B");
      erin.post("/resolutions", {{"task_id", t.at("id")}, {"preferred", pick}, {"decisive_dimension", "safety"},
                                 {"note", "longer answer is more complete"}});
      std::cout << "erin resolved task " << t.at("id") << " -> " << pick << "\n";
    }

    const std::string exported = erin.get_text("/export");
    const auto corpus = data::parse_corpus<data::PreferenceRecord>(exported);
    std::cout << "exported " << corpus.records.size() << " preference records\n";
    for (const auto& r : corpus.records) {
      std::cout << "  [" << r.resolution << ", " << r.dimension << "] " << r.context << " => " << r.chosen << "\n";
    }
    server.stop();
    serving.join();
    return corpus.errors.empty() ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << Json{{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}
