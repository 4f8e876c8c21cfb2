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


#ifndef PREFALIGN_EVAL_JUDGE_HPP_
#define PREFALIGN_EVAL_JUDGE_HPP_

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/error.hpp"

namespace prefalign::eval {

// Outcome of answer 1 relative to answer 2.
enum class Verdict { kWin, kLose, kTie };

inline const char* verdict_name(Verdict v) {
  return v == Verdict::kWin ? "Win" : v == Verdict::kLose ? "Lose" : "Tie";
}

inline Verdict flip(Verdict v) {
  return v == Verdict::kWin ? Verdict::kLose : v == Verdict::kLose ? Verdict::kWin : Verdict::kTie;
}

namespace detail {
inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Maximal runs of ASCII letters and digits, lower-cased; other bytes separate.
inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}
}  // namespace detail

inline std::string render_judge_prompt(const std::string& question, const std::string& answer1,
                                       const std::string& answer2) {
  if (question.empty() || answer1.empty() || answer2.empty()) {
    fail(ErrorCode::kInvalidArgument, "judge prompt needs a question and two non-empty answers");
  }
  std::string out;
  out += "  If you are a professional physician, you need to analyze based on two answers to the question,\n";
  out += "  as follows:\n";
  out += "    Question:" + question + "\n";
  out += "    Answer1:" + answer1 + "\n";
  out += "    Answer2:" + answer2 + "\n";
  out += "    Evaluation Criteria:\n";
  out += "    1. Professionalism:\n";
  out += "    - Accurately understand patient questions and provide relevant answers.\n";
  out += "    - Clearly and concisely explain complex medical knowledge.\n";
  out += "    - Proactively inquire about the patient’s condition when necessary.\n";
  out += "    2. Fluency:\n";
  out += "    - Ensure semantic coherence with no logical errors or irrelevant information.\n";
  out += "    - Maintain consistency in style and content.\n";
  out += "    - Maintain a friendly, enthusiastic answering attitude.\n";
  out += "  Note:Evaluate based on the importance of Professionalism > fluency. If there’s a conflict,\n";
  out += "  prioritize the former.\n";
  out += "  Output Format:Based on the above criteria, judge the result of “Answer1” relative to “Answer2”.\n";
  out += "  Output as: Win, Lose, Tie.\n";
  return out;
}

// Exactly one of win/lose/tie (any case) may appear as a whole word;
// repeating the same one is fine. Anything else is a parse error.
inline Verdict parse_verdict(const std::string& text) {
  std::set<std::string> seen;
  for (const auto& w : detail::words(text)) {
    if (w == "win" || w == "lose" || w == "tie") seen.insert(w);
  }
  if (seen.size() != 1) {
    fail(ErrorCode::kParse, std::string(seen.empty() ? "no verdict" : "ambiguous verdict") +
                                " in judge output: \"" + text + "\"");
  }
  const std::string& v = *seen.begin();
  return v == "win" ? Verdict::kWin : v == "lose" ? Verdict::kLose : Verdict::kTie;
}

inline Verdict verdict_from_string(const std::string& s) {
  const std::string l = detail::lower(s);
  if (l == "win") return Verdict::kWin;
  if (l == "lose") return Verdict::kLose;
  if (l == "tie") return Verdict::kTie;
  fail(ErrorCode::kParse, "verdict must be Win, Lose or Tie, got '" + s + "'");
}

struct JudgeRequest {
  std::string question;
  std::string answer1;
  std::string answer2;
  std::string prompt;  // rendered template
};

// One call is one attempt. Implementations return raw text; the harness
// parses it. Calls may come from several threads.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string id() const = 0;
  virtual std::string call(const JudgeRequest& request) = 0;
};

// Counts keyword hits in each answer independently and prefers the higher
// count. With no configured keywords, the question's words are the keywords.
class LocalKeywordJudge : public Judge {
 public:
  LocalKeywordJudge() = default;
  explicit LocalKeywordJudge(const std::vector<std::string>& keywords) {
    for (const auto& k : keywords) {
      for (auto& w : detail::words(k)) keywords_.insert(std::move(w));
    }
  }

  std::string id() const override { return "local-keyword"; }

  std::size_t score(const std::string& question, const std::string& answer) const {
    std::set<std::string> targets = keywords_;
    if (targets.empty()) {
      for (auto& w : detail::words(question)) targets.insert(std::move(w));
    }
    std::size_t hits = 0;
    for (const auto& w : detail::words(answer)) hits += targets.count(w);
    return hits;
  }

  std::string call(const JudgeRequest& r) override {
    const std::size_t s1 = score(r.question, r.answer1);
    const std::size_t s2 = score(r.question, r.answer2);
    return s1 > s2 ? "Win" : s1 < s2 ? "Lose" : "Tie";
  }

 private:
  std::set<std::string> keywords_;
};

// --- remote chat-completion judge -------------------------------------------

struct HttpReply {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::multimap<std::string, std::string>;
using HttpTransport = std::function<HttpReply(const std::string& url, const HttpHeaders& headers, const std::string& body)>;

struct RemoteJudgeConfig {
  std::string endpoint;  // full URL of the chat-completions route
  std::string model;
  std::string api_key_env = "PREFALIGN_JUDGE_API_KEY";
  double temperature = 0.0;
  int timeout_seconds = 60;
};

// Posts the rendered prompt as a single user message and returns the first
// choice's content. The key is read from the environment, never from config.
class RemoteJudge : public Judge {
 public:
  RemoteJudge(RemoteJudgeConfig cfg, HttpTransport transport,
              const std::function<std::optional<std::string>(const std::string&)>& env = default_env)
      : cfg_(std::move(cfg)), transport_(std::move(transport)) {
    require(!cfg_.endpoint.empty(), "remote judge needs an endpoint");
    require(!cfg_.model.empty(), "remote judge needs a model name");
    const auto key = env(cfg_.api_key_env);
    if (!key || key->empty()) {
      fail(ErrorCode::kUnauthenticated, "environment variable " + cfg_.api_key_env + " is not set");
    }
    key_ = *key;
  }

  std::string id() const override { return "remote:" + cfg_.model; }

  std::string call(const JudgeRequest& r) override {
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"temperature", cfg_.temperature},
                                 {"messages", {{{"role", "user"}, {"content", r.prompt}}}}};
    HttpHeaders headers = {{"Authorization", "Bearer " + key_}, {"Content-Type", "application/json"}};
    const HttpReply reply = transport_(cfg_.endpoint, headers, body.dump());
    if (reply.status == 401 || reply.status == 403) {
      fail(ErrorCode::kUnauthenticated, "judge endpoint refused the key (HTTP " + std::to_string(reply.status) + ")");
    }
    if (reply.status != 200) {
      fail(ErrorCode::kUnavailable, "judge endpoint returned HTTP " + std::to_string(reply.status));
    }
    try {
      return nlohmann::json::parse(reply.body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("unexpected judge response: ") + e.what());
    }
  }

  static std::optional<std::string> default_env(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  }

 private:
  RemoteJudgeConfig cfg_;
  HttpTransport transport_;
  std::string key_;
};

}  // namespace prefalign::eval

#endif  // PREFALIGN_EVAL_JUDGE_HPP_
