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


#ifndef PREFALIGN_ANNOTATION_STORE_HPP_
#define PREFALIGN_ANNOTATION_STORE_HPP_

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/checkpoint.hpp"
#include "prefalign/data/records.hpp"
#include "prefalign/error.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign::annotation {

using Json = nlohmann::json;
using TaskId = std::uint64_t;

enum class TaskStatus { kOpen, kAwaitingSecond, kConflicted, kResolved };

inline const char* status_name(TaskStatus s) {
  switch (s) {
    case TaskStatus::kOpen: return "open";
    case TaskStatus::kAwaitingSecond: return "awaiting_second";
    case TaskStatus::kConflicted: return "conflicted";
    case TaskStatus::kResolved: return "resolved";
  }
  return "unknown";
}

// Canonical preference: A is response_a as stored, whatever the display order.
enum class Preference { kA, kB, kTie };

inline const char* preference_name(Preference p) {
  return p == Preference::kA ? "A" : p == Preference::kB ? "B" : "tie";
}

inline Preference parse_preference(const std::string& s) {
  if (s == "A" || s == "a") return Preference::kA;
  if (s == "B" || s == "b") return Preference::kB;
  if (s == "tie" || s == "Tie" || s == "TIE") return Preference::kTie;
  fail(ErrorCode::kInvalidArgument, "preferred must be A, B or tie, got '" + s + "'");
}

inline Preference flip(Preference p) {
  return p == Preference::kA ? Preference::kB : p == Preference::kB ? Preference::kA : Preference::kTie;
}

inline void require_dimension(const std::string& d) {
  if (!data::is_spf_dimension(d)) {
    fail(ErrorCode::kInvalidArgument, "decisive_dimension must be safety, professionalism or fluency, got '" + d + "'");
  }
}

// Rank in the guideline priority order; lower is more important.
inline std::size_t dimension_priority(const std::string& d) {
  const auto& dims = data::spf_dimensions();
  return static_cast<std::size_t>(std::find(dims.begin(), dims.end(), d) - dims.begin());
}

struct Vote {
  TaskId task_id = 0;
  std::string annotator;
  Preference preferred = Preference::kTie;
  std::string decisive_dimension;
  std::optional<std::string> rationale;
  std::int64_t timestamp_ms = 0;
};

struct Resolution {
  TaskId task_id = 0;
  std::string expert;
  Preference preferred = Preference::kTie;
  std::string decisive_dimension;
  std::string note;
  std::int64_t timestamp_ms = 0;
};

struct AnnotationTask {
  TaskId id = 0;
  std::string context;
  std::string response_a;
  std::string response_b;
  std::uint64_t display_order_seed = 0;
  std::optional<int> per_turn_index;
  std::string source = "in_distribution";
  TaskStatus status = TaskStatus::kOpen;
  std::vector<std::string> assignees;  // at most two, in assignment order
  std::vector<Vote> votes;
  std::optional<Resolution> resolution;

  // Responses are shown swapped when the low bit of the seed is set.
  bool presented_swapped() const { return (display_order_seed & 1U) != 0; }
  const std::string& presented(Preference label) const {
    const bool first = (label == Preference::kA) != presented_swapped();
    return first ? response_a : response_b;
  }
  Preference to_canonical(Preference presented_choice) const {
    return presented_swapped() ? flip(presented_choice) : presented_choice;
  }
  bool has_voted(const std::string& who) const {
    return std::any_of(votes.begin(), votes.end(), [&](const Vote& v) { return v.annotator == who; });
  }
  bool is_assigned(const std::string& who) const {
    return std::find(assignees.begin(), assignees.end(), who) != assignees.end();
  }
};

struct PairInput {
  std::string context;
  std::string response_a;
  std::string response_b;
  std::optional<int> per_turn_index;
  std::string source = "in_distribution";
};

struct CreateReport {
  std::vector<TaskId> created;
  std::vector<std::pair<std::size_t, std::string>> rejected;  // (input index, reason)
};

// --- JSON ---------------------------------------------------------------------

inline Json to_json(const Vote& v) {
  Json j{{"task_id", v.task_id},
         {"annotator", v.annotator},
         {"preferred", preference_name(v.preferred)},
         {"decisive_dimension", v.decisive_dimension},
         {"timestamp_ms", v.timestamp_ms}};
  if (v.rationale) j["rationale"] = *v.rationale;
  return j;
}

inline Vote vote_from_json(const Json& j) {
  Vote v;
  v.task_id = j.at("task_id").get<TaskId>();
  v.annotator = j.at("annotator").get<std::string>();
  v.preferred = parse_preference(j.at("preferred").get<std::string>());
  v.decisive_dimension = j.at("decisive_dimension").get<std::string>();
  if (j.contains("rationale") && !j.at("rationale").is_null()) v.rationale = j.at("rationale").get<std::string>();
  v.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  return v;
}

inline Json to_json(const Resolution& r) {
  return Json{{"task_id", r.task_id},       {"expert", r.expert},
              {"preferred", preference_name(r.preferred)},
              {"decisive_dimension", r.decisive_dimension},
              {"note", r.note},             {"timestamp_ms", r.timestamp_ms}};
}

inline Resolution resolution_from_json(const Json& j) {
  Resolution r;
  r.task_id = j.at("task_id").get<TaskId>();
  r.expert = j.at("expert").get<std::string>();
  r.preferred = parse_preference(j.at("preferred").get<std::string>());
  r.decisive_dimension = j.at("decisive_dimension").get<std::string>();
  r.note = j.value("note", "");
  r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  return r;
}

// Full canonical record (expert and audit view).
inline Json to_json(const AnnotationTask& t) {
  Json votes = Json::array();
  for (const auto& v : t.votes) votes.push_back(to_json(v));
  Json j{{"id", t.id},
         {"context", t.context},
         {"response_a", t.response_a},
         {"response_b", t.response_b},
         {"display_order_seed", t.display_order_seed},
         {"per_turn_index", t.per_turn_index ? Json(*t.per_turn_index) : Json(nullptr)},
         {"source", t.source},
         {"status", status_name(t.status)},
         {"assignees", t.assignees},
         {"votes", std::move(votes)},
         {"resolution", t.resolution ? to_json(*t.resolution) : Json(nullptr)}};
  return j;
}

// What an annotator sees: no votes, no canonical labels, responses in
// presentation order under the labels A and B.
inline Json presented_view(const AnnotationTask& t) {
  return Json{{"id", t.id},
              {"context", t.context},
              {"context_turns", Vocabulary::split_turns(t.context)},
              {"response_a", t.presented(Preference::kA)},
              {"response_b", t.presented(Preference::kB)},
              {"per_turn_index", t.per_turn_index ? Json(*t.per_turn_index) : Json(nullptr)},
              {"status", status_name(t.status)}};
}

// --- the store ----------------------------------------------------------------

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Two-annotator cross-annotation with expert resolution of disagreements.
//
// With a log path, every state change is appended to a JSON-lines event log
// and fsynced before the call returns; opening a store replays the log. A
// torn final line (crash mid-append) is dropped.
class AnnotationStore {
 public:
  struct Options {
    std::filesystem::path log_path;  // empty: memory only
    std::uint64_t seed = 0;          // drives display_order_seed
    Clock clock = system_clock_ms;
    bool read_only = false;          // replay without truncating or appending
  };

  AnnotationStore() : AnnotationStore(Options{}) {}

  explicit AnnotationStore(Options opts) : opts_(std::move(opts)) {
    if (!opts_.log_path.empty()) {
      if (opts_.read_only && !std::filesystem::exists(opts_.log_path)) {
        fail(ErrorCode::kNotFound, "no event log at " + opts_.log_path.string());
      }
      replay();
      if (!opts_.read_only) open_log();
    }
  }

  ~AnnotationStore() {
    if (fd_ >= 0) ::close(fd_);
  }
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  CreateReport create_tasks(const std::vector<PairInput>& pairs) {
    std::lock_guard<std::mutex> lock(mu_);
    CreateReport report;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const PairInput& p = pairs[i];
      std::string why;
      if (p.response_a.empty() || p.response_b.empty()) why = "responses must be non-empty";
      else if (p.response_a == p.response_b) why = "response_a and response_b are identical";
      else if (p.source != "in_distribution" && p.source != "out_of_distribution") why = "unknown source '" + p.source + "'";
      if (!why.empty()) {
        report.rejected.emplace_back(i, why);
        continue;
      }
      AnnotationTask t;
      t.id = next_id_;
      t.context = p.context;
      t.response_a = p.response_a;
      t.response_b = p.response_b;
      t.display_order_seed = derive_seed(opts_.seed, t.id);
      t.per_turn_index = p.per_turn_index;
      t.source = p.source;
      Json event{{"type", "create"},
                 {"id", t.id},
                 {"context", t.context},
                 {"response_a", t.response_a},
                 {"response_b", t.response_b},
                 {"display_order_seed", t.display_order_seed},
                 {"per_turn_index", t.per_turn_index ? Json(*t.per_turn_index) : Json(nullptr)},
                 {"source", t.source}};
      append(event);
      apply_create(std::move(t));
      report.created.push_back(next_id_ - 1);
    }
    return report;
  }

  // One task per assistant turn whose two candidates differ. History uses
  // each turn's first candidate.
  struct DialogueTurn {
    data::Role role = data::Role::kUser;
    std::vector<std::string> candidates;  // user turns: exactly one
  };

  CreateReport create_dialogue_tasks(const std::vector<DialogueTurn>& turns, const std::string& source = "in_distribution") {
    require(!turns.empty() && turns.front().role == data::Role::kUser, "dialogue must start with a user turn");
    std::vector<PairInput> pairs;
    std::vector<std::string> history;
    int assistant_index = 0;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const DialogueTurn& t = turns[i];
      const data::Role expected = i % 2 == 0 ? data::Role::kUser : data::Role::kAssistant;
      require(t.role == expected, "dialogue roles must alternate starting with user");
      require(!t.candidates.empty(), "turn " + std::to_string(i) + " has no text");
      for (const auto& c : t.candidates) {
        require(c.find(kTurnSeparatorText) == std::string::npos, "turn text contains the separator byte");
      }
      if (t.role == data::Role::kAssistant) {
        require(t.candidates.size() == 2, "assistant turn " + std::to_string(i) + " needs exactly two candidates");
        pairs.push_back({Vocabulary::join_turns(history), t.candidates[0], t.candidates[1], assistant_index++, source});
      } else {
        require(t.candidates.size() == 1, "user turn " + std::to_string(i) + " must have one text");
      }
      history.push_back(t.candidates[0]);
    }
    require(!pairs.empty(), "dialogue has no assistant turn");
    return create_tasks(pairs);
  }

  // Returns the annotator's outstanding task if any, else assigns a new one:
  // tasks awaiting a second vote first, then half-assigned, then fresh; lowest
  // id first within each group.
  std::optional<AnnotationTask> next_task(const std::string& annotator) {
    require(!annotator.empty(), "annotator id is empty");
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [id, t] : tasks_) {
      if (t.is_assigned(annotator) && !t.has_voted(annotator) && accepting_votes(t)) return t;
    }
    const AnnotationTask* best = nullptr;
    int best_rank = 3;
    for (const auto& [id, t] : tasks_) {
      if (!accepting_votes(t) || t.is_assigned(annotator) || t.assignees.size() >= 2) continue;
      const int rank = t.status == TaskStatus::kAwaitingSecond ? 0 : t.assignees.empty() ? 2 : 1;
      if (rank < best_rank) {
        best = &t;
        best_rank = rank;
      }
    }
    if (!best) return std::nullopt;
    const TaskId id = best->id;
    append(Json{{"type", "assign"}, {"task_id", id}, {"annotator", annotator}});
    tasks_.at(id).assignees.push_back(annotator);
    return tasks_.at(id);
  }

  // `vote.preferred` is canonical. Returns the resulting status.
  TaskStatus submit_vote(Vote vote) {
    std::lock_guard<std::mutex> lock(mu_);
    vote.timestamp_ms = opts_.clock();
    check_vote(vote);
    Json event = to_json(vote);
    event["type"] = "vote";
    append(event);
    return apply_vote(vote);
  }

  AnnotationTask resolve(Resolution r) {
    std::lock_guard<std::mutex> lock(mu_);
    r.timestamp_ms = opts_.clock();
    check_resolution(r);
    Json event = to_json(r);
    event["type"] = "resolve";
    append(event);
    apply_resolve(r);
    return tasks_.at(r.task_id);
  }

  std::optional<AnnotationTask> get(TaskId id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<AnnotationTask> tasks() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<AnnotationTask> out;
    for (const auto& [id, t] : tasks_) out.push_back(t);
    return out;
  }

  std::vector<AnnotationTask> conflicted() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<AnnotationTask> out;
    for (const auto& [id, t] : tasks_)
      if (t.status == TaskStatus::kConflicted) out.push_back(t);
    return out;
  }

  // Resolved tasks with a strict preference, by task id.
  std::vector<data::PreferenceRecord> export_preferences() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<data::PreferenceRecord> out;
    for (const auto& [id, t] : tasks_) {
      if (t.status != TaskStatus::kResolved) continue;
      Preference final_pref;
      std::string dimension;
      if (t.resolution) {
        final_pref = t.resolution->preferred;
        dimension = t.resolution->decisive_dimension;
      } else {
        final_pref = t.votes[0].preferred;
        dimension = majority_dimension(t.votes[0].decisive_dimension, t.votes[1].decisive_dimension);
      }
      if (final_pref == Preference::kTie) continue;
      data::PreferenceRecord r;
      r.context = t.context;
      r.chosen = final_pref == Preference::kA ? t.response_a : t.response_b;
      r.rejected = final_pref == Preference::kA ? t.response_b : t.response_a;
      r.dimension = dimension;
      r.source = t.source;
      for (const auto& v : t.votes) r.annotators.push_back(v.annotator);
      if (t.resolution) r.annotators.push_back(t.resolution->expert);
      r.resolution = t.resolution ? "expert_resolved" : "agreed";
      data::validate(r);
      out.push_back(std::move(r));
    }
    return out;
  }

  // Agreement rate over tasks with two votes.
  double agreement_rate() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t both = 0, agreed = 0;
    for (const auto& [id, t] : tasks_) {
      if (t.votes.size() != 2) continue;
      ++both;
      agreed += t.votes[0].preferred == t.votes[1].preferred;
    }
    return both == 0 ? 0.0 : static_cast<double>(agreed) / static_cast<double>(both);
  }

  // Empty when every structural invariant holds.
  std::vector<std::string> check_invariants() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> bad;
    auto report = [&](const AnnotationTask& t, const std::string& what) {
      bad.push_back("task " + std::to_string(t.id) + ": " + what);
    };
    for (const auto& [id, t] : tasks_) {
      if (t.response_a == t.response_b) report(t, "identical responses");
      if (t.assignees.size() > 2) report(t, "more than two assignees");
      if (t.assignees.size() == 2 && t.assignees[0] == t.assignees[1]) report(t, "duplicate assignee");
      if (t.votes.size() > 2) report(t, "more than two votes");
      if (t.votes.size() == 2 && t.votes[0].annotator == t.votes[1].annotator) report(t, "same annotator voted twice");
      for (const auto& v : t.votes)
        if (!t.is_assigned(v.annotator)) report(t, "vote from unassigned annotator " + v.annotator);
      const bool agree = t.votes.size() == 2 && t.votes[0].preferred == t.votes[1].preferred;
      switch (t.status) {
        case TaskStatus::kOpen:
          if (!t.votes.empty() || t.resolution) report(t, "open task with votes or resolution");
          break;
        case TaskStatus::kAwaitingSecond:
          if (t.votes.size() != 1 || t.resolution) report(t, "awaiting_second without exactly one vote");
          break;
        case TaskStatus::kConflicted:
          if (t.votes.size() != 2 || agree || t.resolution) report(t, "conflicted task not in disagreement");
          break;
        case TaskStatus::kResolved:
          if (t.votes.size() != 2) report(t, "resolved without two votes");
          if (agree == t.resolution.has_value()) report(t, "resolution present iff votes disagree violated");
          break;
      }
      if (t.resolution) {
        for (const auto& v : t.votes)
          if (v.annotator == t.resolution->expert) report(t, "expert also voted");
      }
    }
    return bad;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return tasks_.size();
  }

 private:
  static bool accepting_votes(const AnnotationTask& t) {
    return t.status == TaskStatus::kOpen || t.status == TaskStatus::kAwaitingSecond;
  }

  // Same dimension: that one. Different: the higher-priority one.
  static std::string majority_dimension(const std::string& a, const std::string& b) {
    return dimension_priority(a) <= dimension_priority(b) ? a : b;
  }

  AnnotationTask& find(TaskId id) {
    auto it = tasks_.find(id);
    if (it == tasks_.end()) fail(ErrorCode::kNotFound, "no task " + std::to_string(id));
    return it->second;
  }

  void check_vote(const Vote& v) {
    AnnotationTask& t = find(v.task_id);
    require(!v.annotator.empty(), "annotator id is empty");
    require_dimension(v.decisive_dimension);
    if (t.status == TaskStatus::kResolved || t.status == TaskStatus::kConflicted) {
      fail(ErrorCode::kConflict, "task " + std::to_string(t.id) + " is " + status_name(t.status) + "; no more votes");
    }
    if (t.has_voted(v.annotator)) {
      fail(ErrorCode::kConflict, v.annotator + " already voted on task " + std::to_string(t.id));
    }
    if (!t.is_assigned(v.annotator)) {
      fail(ErrorCode::kPermissionDenied, "task " + std::to_string(t.id) + " is not assigned to " + v.annotator);
    }
  }

  void check_resolution(const Resolution& r) {
    AnnotationTask& t = find(r.task_id);
    require(!r.expert.empty(), "expert id is empty");
    require_dimension(r.decisive_dimension);
    if (t.status != TaskStatus::kConflicted) {
      fail(ErrorCode::kConflict, "task " + std::to_string(t.id) + " is " + status_name(t.status) + ", not conflicted");
    }
    for (const auto& v : t.votes) {
      if (v.annotator == r.expert) {
        fail(ErrorCode::kConflict, "expert " + r.expert + " annotated task " + std::to_string(t.id));
      }
    }
  }

  void apply_create(AnnotationTask t) {
    if (tasks_.count(t.id)) fail(ErrorCode::kConflict, "duplicate task id " + std::to_string(t.id));
    next_id_ = std::max(next_id_, t.id + 1);
    tasks_.emplace(t.id, std::move(t));
  }

  void apply_assign(TaskId id, const std::string& who) {
    AnnotationTask& t = find(id);
    if (t.is_assigned(who) || t.assignees.size() >= 2 || !accepting_votes(t)) {
      fail(ErrorCode::kConflict, "invalid assignment of task " + std::to_string(id) + " to " + who);
    }
    t.assignees.push_back(who);
  }

  TaskStatus apply_vote(const Vote& v) {
    AnnotationTask& t = find(v.task_id);
    t.votes.push_back(v);
    if (t.votes.size() == 1) {
      t.status = TaskStatus::kAwaitingSecond;
    } else {
      t.status = t.votes[0].preferred == t.votes[1].preferred ? TaskStatus::kResolved : TaskStatus::kConflicted;
    }
    return t.status;
  }

  void apply_resolve(const Resolution& r) {
    AnnotationTask& t = find(r.task_id);
    t.resolution = r;
    t.status = TaskStatus::kResolved;
  }

  void apply_event(const Json& e) {
    const std::string type = e.at("type").get<std::string>();
    if (type == "create") {
      AnnotationTask t;
      t.id = e.at("id").get<TaskId>();
      t.context = e.at("context").get<std::string>();
      t.response_a = e.at("response_a").get<std::string>();
      t.response_b = e.at("response_b").get<std::string>();
      t.display_order_seed = e.at("display_order_seed").get<std::uint64_t>();
      if (!e.at("per_turn_index").is_null()) t.per_turn_index = e.at("per_turn_index").get<int>();
      t.source = e.value("source", "in_distribution");
      apply_create(std::move(t));
    } else if (type == "assign") {
      apply_assign(e.at("task_id").get<TaskId>(), e.at("annotator").get<std::string>());
    } else if (type == "vote") {
      const Vote v = vote_from_json(e);
      check_vote(v);
      apply_vote(v);
    } else if (type == "resolve") {
      const Resolution r = resolution_from_json(e);
      check_resolution(r);
      apply_resolve(r);
    } else {
      fail(ErrorCode::kParse, "unknown event type '" + type + "'");
    }
  }

  void replay() {
    if (!std::filesystem::exists(opts_.log_path)) return;
    const std::string text = read_file(opts_.log_path);
    std::size_t pos = 0, line_no = 0, valid_end = 0;
    while (pos < text.size()) {
      const std::size_t nl = text.find('\n', pos);
      ++line_no;
      if (nl == std::string::npos) break;  // torn tail: no newline, never acknowledged
      const std::string line = text.substr(pos, nl - pos);
      try {
        apply_event(Json::parse(line));
      } catch (const Json::exception& e) {
        fail(ErrorCode::kParse, "event log line " + std::to_string(line_no) + ": " + e.what());
      } catch (const Error& e) {
        throw Error(e.code(), "event log line " + std::to_string(line_no) + ": " + e.what());
      }
      pos = nl + 1;
      valid_end = pos;
    }
    if (valid_end < text.size() && !opts_.read_only) std::filesystem::resize_file(opts_.log_path, valid_end);
  }

  void open_log() {
    if (opts_.log_path.has_parent_path()) std::filesystem::create_directories(opts_.log_path.parent_path());
    fd_ = ::open(opts_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::kIo, "cannot open event log " + opts_.log_path.string());
  }

  void append(const Json& event) {
    if (opts_.read_only) fail(ErrorCode::kPermissionDenied, "store was opened read-only");
    if (fd_ < 0) return;
    const std::string line = event.dump() + "\n";
    std::size_t done = 0;
    while (done < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::kIo, "event log write failed");
      }
      done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) fail(ErrorCode::kIo, "event log fsync failed");
  }

  Options opts_;
  mutable std::mutex mu_;
  std::map<TaskId, AnnotationTask> tasks_;
  TaskId next_id_ = 1;
  int fd_ = -1;
};

}  // namespace prefalign::annotation

#endif  // PREFALIGN_ANNOTATION_STORE_HPP_
