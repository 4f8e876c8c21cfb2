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


#ifndef PREFALIGN_DATA_RECORDS_HPP_
#define PREFALIGN_DATA_RECORDS_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/checkpoint.hpp"
#include "prefalign/error.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign::data {

using Json = nlohmann::json;

// The closed set of instruction categories. Defaults to six medical task
// kinds; a deployment can swap in its own six names.
class TaskKindRegistry {
 public:
  TaskKindRegistry()
      : kinds_({"diagnosis", "treatment", "medication", "examination", "prevention", "consultation"}) {}
  explicit TaskKindRegistry(std::vector<std::string> kinds) : kinds_(std::move(kinds)) {
    require(kinds_.size() == 6, "task kind registry must have exactly six members");
    std::vector<std::string> sorted = kinds_;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "task kinds must be distinct");
  }

  bool contains(const std::string& k) const { return std::find(kinds_.begin(), kinds_.end(), k) != kinds_.end(); }
  const std::vector<std::string>& kinds() const { return kinds_; }

 private:
  std::vector<std::string> kinds_;
};

struct InstructionRecord {
  std::string instruction;
  std::string query;
  std::string output;
  std::optional<std::string> department;
  std::string task_kind;

  bool operator==(const InstructionRecord&) const = default;
};

enum class Role { kUser, kAssistant };

inline const char* role_name(Role r) { return r == Role::kUser ? "user" : "assistant"; }

inline Role parse_role(const std::string& s) {
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  fail(ErrorCode::kInvalidArgument, "unknown role '" + s + "'");
}

struct Turn {
  Role role = Role::kUser;
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct DialogueRecord {
  std::vector<Turn> turns;

  std::size_t turn_count() const { return turns.size(); }
  bool is_single_turn() const { return turns.size() == 2; }
  bool operator==(const DialogueRecord&) const = default;
};

inline const std::vector<std::string>& spf_dimensions() {
  // Priority order: safety outranks professionalism outranks fluency.
  static const std::vector<std::string> dims = {"safety", "professionalism", "fluency"};
  return dims;
}

inline bool is_spf_dimension(const std::string& d) {
  const auto& dims = spf_dimensions();
  return std::find(dims.begin(), dims.end(), d) != dims.end();
}

struct PreferenceRecord {
  std::string context;  // dialogue prefix, turns joined by the separator
  std::string chosen;
  std::string rejected;
  std::string dimension;
  std::string source = "in_distribution";  // or out_of_distribution
  std::vector<std::string> annotators;
  std::string resolution = "agreed";  // or expert_resolved

  bool operator==(const PreferenceRecord&) const = default;
};

// --- validation -------------------------------------------------------------

inline void validate(const InstructionRecord& r, const TaskKindRegistry& kinds = {}) {
  require(!r.instruction.empty(), "instruction must be non-empty");
  require(!r.query.empty(), "query must be non-empty");
  require(!r.output.empty(), "output must be non-empty");
  if (!kinds.contains(r.task_kind)) fail(ErrorCode::kInvalidArgument, "unknown task_kind '" + r.task_kind + "'");
}

inline void validate(const DialogueRecord& r) {
  require(r.turns.size() >= 2, "a dialogue needs at least two turns");
  for (std::size_t i = 0; i < r.turns.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::kUser : Role::kAssistant;
    if (r.turns[i].role != expected) {
      fail(ErrorCode::kInvalidArgument, "turn " + std::to_string(i) + " should be " + role_name(expected) +
                                            " (roles alternate, user first)");
    }
    if (r.turns[i].text.empty()) fail(ErrorCode::kInvalidArgument, "turn " + std::to_string(i) + " is empty");
    if (r.turns[i].text.find(kTurnSeparatorText) != std::string::npos) {
      fail(ErrorCode::kInvalidArgument, "turn " + std::to_string(i) + " contains the turn separator byte");
    }
  }
  require(r.turns.back().role == Role::kAssistant, "a dialogue must end with an assistant turn");
}

inline void validate(const PreferenceRecord& r) {
  require(!r.chosen.empty() && !r.rejected.empty(), "chosen and rejected must be non-empty");
  require(r.chosen != r.rejected, "chosen and rejected must differ");
  if (!is_spf_dimension(r.dimension)) fail(ErrorCode::kInvalidArgument, "unknown dimension '" + r.dimension + "'");
  require(r.source == "in_distribution" || r.source == "out_of_distribution",
          "source must be in_distribution or out_of_distribution");
  require(r.resolution == "agreed" || r.resolution == "expert_resolved",
          "resolution must be agreed or expert_resolved");
}

// --- JSON -------------------------------------------------------------------

inline Json to_json(const InstructionRecord& r) {
  Json j{{"instruction", r.instruction}, {"query", r.query}, {"output", r.output}, {"task_kind", r.task_kind}};
  if (r.department) j["department"] = *r.department;
  return j;
}

inline Json to_json(const DialogueRecord& r) {
  Json turns = Json::array();
  for (const auto& t : r.turns) turns.push_back(Json{{"role", role_name(t.role)}, {"text", t.text}});
  return Json{{"turns", std::move(turns)}};
}

inline Json to_json(const PreferenceRecord& r) {
  return Json{{"context", r.context},       {"chosen", r.chosen},         {"rejected", r.rejected},
              {"dimension", r.dimension},   {"source", r.source},         {"annotators", r.annotators},
              {"resolution", r.resolution}};
}

template <class R>
R record_from_json(const Json& j, const TaskKindRegistry& kinds = {});

template <>
inline InstructionRecord record_from_json<InstructionRecord>(const Json& j, const TaskKindRegistry& kinds) {
  InstructionRecord r;
  r.instruction = j.at("instruction").get<std::string>();
  r.query = j.at("query").get<std::string>();
  r.output = j.at("output").get<std::string>();
  r.task_kind = j.at("task_kind").get<std::string>();
  if (j.contains("department") && !j.at("department").is_null()) r.department = j.at("department").get<std::string>();
  validate(r, kinds);
  return r;
}

template <>
inline DialogueRecord record_from_json<DialogueRecord>(const Json& j, const TaskKindRegistry&) {
  DialogueRecord r;
  for (const auto& t : j.at("turns")) r.turns.push_back(Turn{parse_role(t.at("role").get<std::string>()), t.at("text").get<std::string>()});
  validate(r);
  return r;
}

template <>
inline PreferenceRecord record_from_json<PreferenceRecord>(const Json& j, const TaskKindRegistry&) {
  PreferenceRecord r;
  r.context = j.at("context").get<std::string>();
  r.chosen = j.at("chosen").get<std::string>();
  r.rejected = j.at("rejected").get<std::string>();
  r.dimension = j.at("dimension").get<std::string>();
  r.source = j.value("source", r.source);
  r.annotators = j.value("annotators", std::vector<std::string>{});
  r.resolution = j.value("resolution", r.resolution);
  validate(r);
  return r;
}

// --- corpora ----------------------------------------------------------------

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

template <class R>
struct Corpus {
  std::vector<R> records;
  std::vector<LineError> errors;
};

inline Json to_json(const LineError& e) { return Json{{"line", e.line}, {"error", e.message}}; }

// Parses JSON-lines text. Blank lines are skipped; every other line becomes
// either a record or a report entry.
template <class R>
Corpus<R> parse_corpus(const std::string& text, const TaskKindRegistry& kinds = {}) {
  Corpus<R> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.records.push_back(record_from_json<R>(Json::parse(line), kinds));
    } catch (const Json::exception& e) {
      out.errors.push_back({number, e.what()});
    } catch (const Error& e) {
      out.errors.push_back({number, e.what()});
    }
  }
  return out;
}

template <class R>
Corpus<R> load_corpus(const std::filesystem::path& path, const TaskKindRegistry& kinds = {}) {
  return parse_corpus<R>(read_file(path), kinds);
}

template <class R>
std::string serialize_corpus(const std::vector<R>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

template <class R>
void write_corpus(const std::filesystem::path& path, const std::vector<R>& records) {
  write_file_atomic(path, serialize_corpus(records));
}

enum class CorpusFormat { kInstruction, kDialogue, kPreference };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "instruction") return CorpusFormat::kInstruction;
  if (s == "dialogue") return CorpusFormat::kDialogue;
  if (s == "preference") return CorpusFormat::kPreference;
  fail(ErrorCode::kInvalidArgument, "unknown corpus format '" + s + "' (instruction|dialogue|preference)");
}

// --- training views ---------------------------------------------------------

// Conditioning text for an instruction record: the instruction, then the query.
inline std::string instruction_context(const InstructionRecord& r) { return r.instruction + "\n" + r.query; }

}  // namespace prefalign::data

#endif  // PREFALIGN_DATA_RECORDS_HPP_
