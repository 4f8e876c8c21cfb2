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


#ifndef PREFALIGN_EVAL_HARNESS_HPP_
#define PREFALIGN_EVAL_HARNESS_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/checkpoint.hpp"
#include "prefalign/error.hpp"
#include "prefalign/eval/judge.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign::eval {

using Json = nlohmann::json;

struct EvalItem {
  std::string id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
};

struct PairwiseOptions {
  std::string model_a = "model_a";
  std::string model_b = "model_b";
  bool swap = true;        // seeded presentation-order randomization
  int max_retries = 2;     // attempts = 1 + max_retries
  std::chrono::milliseconds backoff{0};  // doubled after each failed attempt
  int parallelism = 1;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

struct MatchResult {
  std::string item_id;
  std::string model_a;
  std::string model_b;
  bool swapped = false;
  std::optional<Verdict> verdict;  // model_a relative to model_b; empty if unjudged
  std::string judge_id;
  std::size_t length_a = 0;  // tokens
  std::size_t length_b = 0;
  int attempts = 0;
  std::vector<std::string> errors;
};

inline std::size_t response_length(const std::string& text) { return Vocabulary::encode(text).size(); }

inline bool presentation_swapped(std::uint64_t seed, std::size_t index) {
  return (derive_seed(seed, 0x73776170ULL + index) & 1U) != 0;
}

inline MatchResult judge_item(const EvalItem& item, std::size_t index, Judge& judge, std::uint64_t seed,
                              const PairwiseOptions& opts) {
  MatchResult r;
  r.item_id = item.id;
  r.model_a = opts.model_a;
  r.model_b = opts.model_b;
  r.swapped = opts.swap && presentation_swapped(seed, index);
  r.judge_id = judge.id();
  r.length_a = response_length(item.answer_a);
  r.length_b = response_length(item.answer_b);
  JudgeRequest req;
  req.question = item.question;
  req.answer1 = r.swapped ? item.answer_b : item.answer_a;
  req.answer2 = r.swapped ? item.answer_a : item.answer_b;
  req.prompt = render_judge_prompt(req.question, req.answer1, req.answer2);
  std::chrono::milliseconds wait = opts.backoff;
  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    if (attempt > 0 && wait.count() > 0) {
      opts.sleep(wait);
      wait *= 2;
    }
    ++r.attempts;
    try {
      const Verdict v = parse_verdict(judge.call(req));
      r.verdict = r.swapped ? flip(v) : v;
      return r;
    } catch (const std::exception& e) {
      r.errors.push_back(e.what());
    }
  }
  return r;
}

// Results come back in input order whatever the parallelism.
inline std::vector<MatchResult> run_pairwise(const std::vector<EvalItem>& items, Judge& judge, std::uint64_t seed,
                                             const PairwiseOptions& opts = {}) {
  require(!items.empty(), "no items to judge");
  require(opts.max_retries >= 0, "max_retries must be non-negative");
  for (const auto& it : items) {
    require(!it.question.empty() && !it.answer_a.empty() && !it.answer_b.empty(),
            "item '" + it.id + "' has an empty question or answer");
  }
  std::vector<MatchResult> results(items.size());
  const int workers = std::max(1, std::min<int>(opts.parallelism, static_cast<int>(items.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) results[i] = judge_item(items[i], i, judge, seed, opts);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < items.size(); i = next++) results[i] = judge_item(items[i], i, judge, seed, opts);
    });
  }
  for (auto& t : pool) t.join();
  return results;
}

struct Report {
  std::string model_a;
  std::string model_b;
  std::string judge_id;
  std::size_t items = 0;
  std::size_t judged = 0;
  std::size_t unjudged = 0;
  std::size_t wins = 0, ties = 0, losses = 0;
  double win_rate = 0.0;  // model_a's perspective
  double tie_rate = 0.0;
  double loss_rate = 0.0;
  double mean_length_a = 0.0;
  double mean_length_b = 0.0;
  double length_delta = 0.0;  // mean_length_a - mean_length_b
  std::vector<std::string> warnings;
};

inline Report aggregate(const std::vector<MatchResult>& results) {
  require(!results.empty(), "no results to aggregate");
  Report rep;
  rep.model_a = results.front().model_a;
  rep.model_b = results.front().model_b;
  rep.judge_id = results.front().judge_id;
  rep.items = results.size();
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& r : results) {
    if (!r.verdict) {
      ++rep.unjudged;
      continue;
    }
    ++rep.judged;
    if (*r.verdict == Verdict::kWin) ++rep.wins;
    else if (*r.verdict == Verdict::kLose) ++rep.losses;
    else ++rep.ties;
    sum_a += static_cast<double>(r.length_a);
    sum_b += static_cast<double>(r.length_b);
  }
  if (rep.judged == 0) fail(ErrorCode::kInvalidArgument, "every item is unjudged; nothing to aggregate");
  const double n = static_cast<double>(rep.judged);
  rep.win_rate = static_cast<double>(rep.wins) / n;
  rep.tie_rate = static_cast<double>(rep.ties) / n;
  rep.loss_rate = static_cast<double>(rep.losses) / n;
  rep.mean_length_a = sum_a / n;
  rep.mean_length_b = sum_b / n;
  rep.length_delta = rep.mean_length_a - rep.mean_length_b;
  return rep;
}

inline Json to_json(const Report& r) {
  return Json{{"model_a", r.model_a},
              {"model_b", r.model_b},
              {"judge", r.judge_id},
              {"items", r.items},
              {"judged", r.judged},
              {"unjudged", r.unjudged},
              {"wins", r.wins},
              {"ties", r.ties},
              {"losses", r.losses},
              {"win_rate", r.win_rate},
              {"tie_rate", r.tie_rate},
              {"loss_rate", r.loss_rate},
              {"mean_length_a", r.mean_length_a},
              {"mean_length_b", r.mean_length_b},
              {"length_delta", r.length_delta},
              {"warnings", r.warnings}};
}

inline Json to_json(const MatchResult& r) {
  return Json{{"item_id", r.item_id},
              {"model_a", r.model_a},
              {"model_b", r.model_b},
              {"swapped", r.swapped},
              {"verdict", r.verdict ? Json(verdict_name(*r.verdict)) : Json(nullptr)},
              {"judge_id", r.judge_id},
              {"length_a", r.length_a},
              {"length_b", r.length_b},
              {"attempts", r.attempts},
              {"errors", r.errors}};
}

inline std::string render_table(const Report& r) {
  char buf[512];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-24s %-24s %6s %6s %6s %8s %8s\n", "model_a", "model_b", "win", "tie", "loss",
                "len_a", "len_b");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-24s %-24s %6.3f %6.3f %6.3f %8.2f %8.2f\n", r.model_a.c_str(), r.model_b.c_str(),
                r.win_rate, r.tie_rate, r.loss_rate, r.mean_length_a, r.mean_length_b);
  out << buf;
  out << "judge " << r.judge_id << ": " << r.judged << " judged, " << r.unjudged << " unjudged of " << r.items << "\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  return out.str();
}

// Externally produced verdicts, one JSON object per line:
//   {"item_id": "...", "verdict": "Win|Lose|Tie", "judge_id": "..."}
// Optional "model_a"/"model_b" name the pairing; verdicts are model_a's.
inline std::vector<MatchResult> import_verdicts(const std::string& text) {
  std::vector<MatchResult> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      MatchResult r;
      r.item_id = j.at("item_id").is_string() ? j.at("item_id").get<std::string>() : j.at("item_id").dump();
      r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
      r.judge_id = j.at("judge_id").get<std::string>();
      r.model_a = j.value("model_a", std::string("model_a"));
      r.model_b = j.value("model_b", std::string("model_b"));
      r.attempts = 1;
      out.push_back(std::move(r));
    } catch (const Json::exception& e) {
      fail(ErrorCode::kParse, "verdict line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::kParse, "verdict line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// --- generation and the before/after ablation ---------------------------------

inline std::string generate_response(const Checkpoint& ckpt, const std::string& context, const SampleOptions& opts) {
  if (ckpt.is_neural()) {
    return Vocabulary::decode_text(ckpt.neural().sample(Vocabulary::prompt_tokens(context), opts));
  }
  const TabularPolicy& p = ckpt.tabular();
  const auto& names = p.context_names();
  const auto it = std::find(names.begin(), names.end(), context);
  if (it == names.end()) fail(ErrorCode::kNotFound, "tabular policy has no context '" + context + "'");
  return p.response_names()[p.sample(static_cast<std::size_t>(it - names.begin()), opts)];
}

struct EvalPrompt {
  std::string id;
  std::string context;
};

struct AblationOptions {
  SampleOptions sampling;
  PairwiseOptions pairwise;
  // Contexts seen in training; an overlapping eval prompt is rejected.
  std::vector<std::string> training_contexts;
};

struct AblationResult {
  Report report;
  std::vector<MatchResult> results;
  std::vector<EvalItem> items;  // answer_a from post, answer_b from pre
};

// Post-DPO is model_a, so win_rate is the post model's and length_delta is
// post minus pre. Both models sample prompt i with the same seed.
inline AblationResult ablation_compare(const Checkpoint& pre, const Checkpoint& post, const std::vector<EvalPrompt>& prompts,
                                       Judge& judge, std::uint64_t seed, AblationOptions opts = {}) {
  require(!prompts.empty(), "no evaluation prompts");
  std::vector<std::string> warnings;
  if (pre.stage != "sft") warnings.push_back("pre-DPO checkpoint has stage '" + pre.stage + "', expected 'sft'");
  if (post.stage != "dpo") warnings.push_back("post-DPO checkpoint has stage '" + post.stage + "', expected 'dpo'");
  const std::set<std::string> seen(opts.training_contexts.begin(), opts.training_contexts.end());
  AblationResult out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const EvalPrompt& p = prompts[i];
    if (seen.count(p.context)) fail(ErrorCode::kInvalidArgument, "eval prompt '" + p.id + "' was used in training");
    SampleOptions s = opts.sampling;
    s.seed = derive_seed(seed, i);
    EvalItem item;
    item.id = p.id;
    item.question = p.context;
    item.answer_a = generate_response(post, p.context, s);
    item.answer_b = generate_response(pre, p.context, s);
    out.items.push_back(std::move(item));
  }
  opts.pairwise.model_a = opts.pairwise.model_a == "model_a" ? "post_dpo" : opts.pairwise.model_a;
  opts.pairwise.model_b = opts.pairwise.model_b == "model_b" ? "pre_dpo" : opts.pairwise.model_b;
  // An empty answer cannot be judged; it becomes an unjudged item.
  std::vector<EvalItem> judgeable;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    if (!out.items[i].answer_a.empty() && !out.items[i].answer_b.empty()) {
      judgeable.push_back(out.items[i]);
      index.push_back(i);
    }
  }
  out.results.resize(out.items.size());
  if (!judgeable.empty()) {
    auto judged = run_pairwise(judgeable, judge, seed, opts.pairwise);
    for (std::size_t k = 0; k < judged.size(); ++k) out.results[index[k]] = std::move(judged[k]);
  }
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    MatchResult& r = out.results[i];
    if (r.item_id.empty() && r.attempts == 0) {
      r.item_id = out.items[i].id;
      r.model_a = opts.pairwise.model_a;
      r.model_b = opts.pairwise.model_b;
      r.judge_id = judge.id();
      r.length_a = response_length(out.items[i].answer_a);
      r.length_b = response_length(out.items[i].answer_b);
      r.errors.push_back("empty generated answer");
    }
  }
  out.report = aggregate(out.results);
  out.report.warnings = std::move(warnings);
  return out;
}

}  // namespace prefalign::eval

#endif  // PREFALIGN_EVAL_HARNESS_HPP_
