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


#ifndef PREFALIGN_CHECKPOINT_HPP_
#define PREFALIGN_CHECKPOINT_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/error.hpp"
#include "prefalign/neural_policy.hpp"
#include "prefalign/tabular_policy.hpp"
#include "prefalign/training.hpp"

namespace prefalign {

using Json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;

// --- file helpers -----------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::kIo, "read failed for " + path.string());
  return ss.str();
}

// Writes to a sibling temporary file and renames it over the target, so a
// reader never observes a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, what + ": " + e.what());
  }
}

// --- matrices -------------------------------------------------------------

// Row-major value list plus the shape. Doubles are printed with enough digits
// to round-trip exactly.
inline Json matrix_to_json(const Matrix& m) {
  Json values = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) fail(ErrorCode::kNumeric, "cannot serialize a non-finite value");
      values.push_back(m(i, j));
    }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::move(values)}};
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const Json& values = j.at("values");
  if (rows < 0 || cols < 0 || values.size() != static_cast<std::size_t>(rows * cols)) {
    fail(ErrorCode::kParse, "matrix value count does not match its shape");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = values[k++].get<double>();
  return m;
}

// --- configs --------------------------------------------------------------

inline Json to_json(const NeuralConfig& c) {
  return Json{{"vocab_size", c.vocab_size},     {"d_model", c.d_model},
              {"num_blocks", c.num_blocks},     {"num_heads", c.num_heads},
              {"ff_mult", c.ff_mult},           {"context_window", c.context_window},
              {"dropout", c.dropout},           {"begin_response", c.begin_response},
              {"end_response", c.end_response}};
}

inline NeuralConfig neural_config_from_json(const Json& j) {
  NeuralConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.context_window = j.value("context_window", c.context_window);
  c.dropout = j.value("dropout", c.dropout);
  c.begin_response = j.value("begin_response", c.begin_response);
  c.end_response = j.value("end_response", c.end_response);
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"stage", stage_name(c.stage)},
              {"lr_max", c.lr_max},
              {"lr_min", c.lr_min},
              {"total_steps", c.total_steps},
              {"batch_size", c.batch_size},
              {"accumulation_steps", c.accumulation_steps},
              {"beta", c.beta},
              {"dropout", c.dropout},
              {"seed", c.seed},
              {"validation_fraction", c.validation_fraction},
              {"lora_rank", c.lora_rank},
              {"lora_scaling", c.lora_scaling},
              {"explosion_threshold", c.explosion_threshold},
              {"explosion_lr_decay", c.explosion_lr_decay},
              {"weight_decay", c.weight_decay},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"eval_interval", c.eval_interval}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  c.lr_max = j.value("lr_max", c.lr_max);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  c.beta = j.value("beta", c.beta);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_scaling = j.value("lora_scaling", c.lora_scaling);
  c.explosion_threshold = j.value("explosion_threshold", c.explosion_threshold);
  c.explosion_lr_decay = j.value("explosion_lr_decay", c.explosion_lr_decay);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.validate();
  return c;
}

inline Json to_json(const OptimizerState& s) {
  Json m = Json::array(), v = Json::array();
  for (const auto& x : s.first_moment) m.push_back(matrix_to_json(x));
  for (const auto& x : s.second_moment) v.push_back(matrix_to_json(x));
  return Json{{"step", s.step},   {"weight_decay", s.weight_decay}, {"beta1", s.beta1},
              {"beta2", s.beta2}, {"eps", s.eps},                   {"first_moment", std::move(m)},
              {"second_moment", std::move(v)}};
}

inline OptimizerState optimizer_state_from_json(const Json& j) {
  OptimizerState s;
  s.step = j.at("step").get<long>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  for (const auto& x : j.at("first_moment")) s.first_moment.push_back(matrix_from_json(x));
  for (const auto& x : j.at("second_moment")) s.second_moment.push_back(matrix_from_json(x));
  require(s.first_moment.size() == s.second_moment.size(), "optimizer moment lists differ in length");
  return s;
}

// --- policies -------------------------------------------------------------

inline Json to_json(const TabularPolicy& p) {
  return Json{{"contexts", p.context_names()}, {"responses", p.response_names()},
              {"logits", matrix_to_json(p.logits())}};
}

inline TabularPolicy tabular_policy_from_json(const Json& j) {
  return TabularPolicy(j.at("contexts").get<std::vector<std::string>>(),
                       j.at("responses").get<std::vector<std::string>>(), matrix_from_json(j.at("logits")));
}

inline Json to_json(const NeuralPolicy& p) {
  Json tensors = Json::array();
  for (std::size_t i = 0; i < p.num_tensors(); ++i) {
    Json t = matrix_to_json(p.tensors()[i]);
    t["name"] = p.tensor_name(i);
    tensors.push_back(std::move(t));
  }
  Json out{{"architecture", to_json(p.config())},
           {"vocabulary",
            {{"kind", "byte"},
             {"size", p.config().vocab_size},
             {"begin_response", p.config().begin_response},
             {"end_response", p.config().end_response},
             {"turn_separator", Vocabulary::kTurnSeparator}}},
           {"tensors", std::move(tensors)},
           {"lora", nullptr}};
  if (p.has_lora()) {
    Json adapters = Json::array();
    for (const auto& ad : p.lora()->adapters) {
      adapters.push_back(Json{{"target", p.tensor_name(ad.target)},
                              {"target_index", ad.target},
                              {"a", matrix_to_json(ad.a)},
                              {"b", matrix_to_json(ad.b)}});
    }
    out["lora"] = Json{{"rank", p.lora()->rank}, {"scaling", p.lora()->scaling}, {"adapters", std::move(adapters)}};
  }
  return out;
}

inline NeuralPolicy neural_policy_from_json(const Json& j) {
  const NeuralConfig cfg = neural_config_from_json(j.at("architecture"));
  std::vector<Matrix> tensors;
  for (const auto& t : j.at("tensors")) tensors.push_back(matrix_from_json(t));
  std::optional<LoraState> lora;
  if (j.contains("lora") && !j.at("lora").is_null()) {
    const Json& l = j.at("lora");
    LoraState s;
    s.rank = l.at("rank").get<int>();
    s.scaling = l.at("scaling").get<double>();
    for (const auto& a : l.at("adapters")) {
      LoraAdapter ad;
      ad.target = a.at("target_index").get<std::size_t>();
      require(ad.target < tensors.size(), "adapter target out of range");
      ad.a = matrix_from_json(a.at("a"));
      ad.b = matrix_from_json(a.at("b"));
      const Matrix& w = tensors[ad.target];
      require(ad.a.cols() == w.cols() && ad.b.rows() == w.rows() && ad.a.rows() == s.rank && ad.b.cols() == s.rank,
              "adapter shape does not match its target");
      s.adapters.push_back(std::move(ad));
    }
    lora = std::move(s);
  }
  return NeuralPolicy(cfg, std::move(tensors), std::move(lora));
}

// --- checkpoint container ---------------------------------------------------

using AnyPolicy = std::variant<TabularPolicy, NeuralPolicy>;

struct Checkpoint {
  Checkpoint() = default;
  explicit Checkpoint(AnyPolicy p) : policy(std::move(p)) {}

  AnyPolicy policy;
  std::optional<OptimizerState> optimizer;
  TrainConfig train_config;
  long step = 0;
  std::optional<double> validation_loss;
  std::string stage = "sft";
  double lr_max = 0.0;  // current (possibly decayed) peak learning rate
  int explosion_events = 0;

  bool is_neural() const { return std::holds_alternative<NeuralPolicy>(policy); }
  const NeuralPolicy& neural() const {
    if (!is_neural()) fail(ErrorCode::kUnsupported, "checkpoint holds a tabular policy");
    return std::get<NeuralPolicy>(policy);
  }
  const TabularPolicy& tabular() const {
    if (is_neural()) fail(ErrorCode::kUnsupported, "checkpoint holds a neural policy");
    return std::get<TabularPolicy>(policy);
  }
};

inline Json to_json(const Checkpoint& c) {
  Json j;
  j["format"] = "prefalign-checkpoint";
  j["version"] = kCheckpointFormatVersion;
  j["kind"] = c.is_neural() ? "neural" : "tabular";
  j["policy"] = std::visit([](const auto& p) { return to_json(p); }, c.policy);
  j["optimizer"] = c.optimizer ? to_json(*c.optimizer) : Json(nullptr);
  j["train_config"] = to_json(c.train_config);
  j["step"] = c.step;
  j["validation_loss"] = c.validation_loss ? Json(*c.validation_loss) : Json(nullptr);
  j["stage"] = c.stage;
  j["lr_max"] = c.lr_max;
  j["explosion_events"] = c.explosion_events;
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "prefalign-checkpoint") fail(ErrorCode::kParse, "not a prefalign checkpoint");
    if (j.value("version", 0) != kCheckpointFormatVersion) {
      fail(ErrorCode::kUnsupported, "unsupported checkpoint version " + j.at("version").dump());
    }
    const std::string kind = j.at("kind").get<std::string>();
    Checkpoint c{kind == "neural" ? AnyPolicy{neural_policy_from_json(j.at("policy"))}
                                  : AnyPolicy{tabular_policy_from_json(j.at("policy"))}};
    if (kind != "neural" && kind != "tabular") fail(ErrorCode::kParse, "unknown policy kind " + kind);
    if (!j.at("optimizer").is_null()) c.optimizer = optimizer_state_from_json(j.at("optimizer"));
    c.train_config = train_config_from_json(j.at("train_config"));
    c.step = j.at("step").get<long>();
    if (!j.at("validation_loss").is_null()) c.validation_loss = j.at("validation_loss").get<double>();
    c.stage = j.at("stage").get<std::string>();
    c.lr_max = j.value("lr_max", c.train_config.lr_max);
    c.explosion_events = j.value("explosion_events", 0);
    return c;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed checkpoint: ") + e.what());
  }
}

// Keys are emitted in sorted order and no timestamps are stored, so equal
// checkpoints serialize to identical bytes.
inline std::string serialize_checkpoint(const Checkpoint& c) { return to_json(c).dump() + "\n"; }

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(parse_json(read_file(path), "checkpoint " + path.string()));
}

}  // namespace prefalign

#endif  // PREFALIGN_CHECKPOINT_HPP_
