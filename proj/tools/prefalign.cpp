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


// prefalign: data preparation, SFT and DPO training, verification, pairwise
// evaluation and the annotation service behind one command.

#include <signal.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prefalign/annotation/store.hpp"
#include "prefalign/checkpoint.hpp"
#include "prefalign/data/deid.hpp"
#include "prefalign/data/mixing.hpp"
#include "prefalign/data/records.hpp"
#include "prefalign/eval/harness.hpp"
#include "prefalign/manifest.hpp"
#include "prefalign/pipeline.hpp"
#include "prefalign/reward_fixture.hpp"
#include "prefalign/runner.hpp"
#include "prefalign/verification.hpp"

// httplib after every Eigen-based header.
#include "prefalign/annotation/server.hpp"
#include "prefalign/eval/http_transport.hpp"

#include <CLI11.hpp>

namespace {

using namespace prefalign;
namespace fs = std::filesystem;
using Json = nlohmann::json;

struct Session {
  std::vector<std::string> argv;
  std::string manifest;  // empty: manifest.jsonl beside the first output
  CLI::App* app = nullptr;
};

Session g_session;

void record_manifest(const std::string& stage, std::vector<fs::path> inputs, std::vector<fs::path> outputs,
                     std::uint64_t seed) {
  ManifestEntry e;
  e.stage = stage;
  e.inputs = std::move(inputs);
  e.outputs = std::move(outputs);
  e.seed = seed;
  e.config = g_session.app->config_to_str(true, false);
  e.argv = g_session.argv;
  fs::path where = g_session.manifest;
  if (where.empty()) {
    const fs::path first = e.outputs.empty() ? fs::path(".") : e.outputs.front();
    where = (first.has_parent_path() ? first.parent_path() : fs::path(".")) / "manifest.jsonl";
  }
  append_manifest(where, e);
}

template <class R>
std::vector<R> load_records(const fs::path& path) {
  auto corpus = data::load_corpus<R>(path);
  if (!corpus.errors.empty()) {
    const auto& e = corpus.errors.front();
    fail(ErrorCode::kParse, path.string() + ": " + std::to_string(corpus.errors.size()) + " invalid line(s); line " +
                                std::to_string(e.line) + ": " + e.message);
  }
  return std::move(corpus.records);
}

template <class F>
void with_format(const std::string& format, F&& f) {
  switch (data::parse_corpus_format(format)) {
    case data::CorpusFormat::kInstruction: f.template operator()<data::InstructionRecord>(); break;
    case data::CorpusFormat::kDialogue: f.template operator()<data::DialogueRecord>(); break;
    case data::CorpusFormat::kPreference: f.template operator()<data::PreferenceRecord>(); break;
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto t = annotation::trim(line);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

Json parse_line(const std::string& line, std::size_t n, const fs::path& path) {
  try {
    return Json::parse(line);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + " line " + std::to_string(n) + ": " + e.what());
  }
}

// Prompt files: JSON lines with "context" (optionally "id"), or instruction
// records, whose context is instruction + newline + query.
std::vector<eval::EvalPrompt> load_prompts(const fs::path& path) {
  std::vector<eval::EvalPrompt> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    const Json j = parse_line(line, ++n, path);
    eval::EvalPrompt p;
    p.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : std::to_string(out.size());
    if (j.contains("context")) {
      p.context = j["context"].get<std::string>();
    } else if (j.contains("instruction") && j.contains("query")) {
      p.context = j["instruction"].get<std::string>() + "\n" + j["query"].get<std::string>();
    } else {
      fail(ErrorCode::kParse, path.string() + " line " + std::to_string(n) + ": needs 'context' or 'instruction'+'query'");
    }
    out.push_back(std::move(p));
  }
  require(!out.empty(), path.string() + " has no prompts");
  return out;
}

std::vector<std::string> training_contexts(const fs::path& path, const std::string& format) {
  std::vector<std::string> out;
  with_format(format, [&]<class R>() {
    for (const auto& r : load_records<R>(path)) {
      if constexpr (std::is_same_v<R, data::InstructionRecord>) out.push_back(data::instruction_context(r));
      else if constexpr (std::is_same_v<R, data::PreferenceRecord>) out.push_back(r.context);
      else for (const auto& ex : data::flatten_dialogue(r)) out.push_back(ex.context);
    }
  });
  return out;
}

std::string jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

// --- data ---------------------------------------------------------------------

struct DeidArgs {
  std::string input, output, format = "instruction", names, report;
};

void run_deid(const DeidArgs& a) {
  std::vector<std::string> names;
  if (!a.names.empty()) names = read_lines(a.names);
  const data::Deidentifier deid(data::default_deid_rules(names));
  std::map<std::string, std::size_t> counts;
  auto clean = [&](std::string& text) {
    auto r = deid.apply(text);
    for (const auto& m : r.matches) ++counts[m.rule];
    text = std::move(r.text);
  };
  std::size_t n = 0;
  std::vector<fs::path> outputs{a.output};
  with_format(a.format, [&]<class R>() {
    auto records = load_records<R>(a.input);
    for (auto& r : records) {
      if constexpr (std::is_same_v<R, data::InstructionRecord>) {
        clean(r.instruction);
        clean(r.query);
        clean(r.output);
      } else if constexpr (std::is_same_v<R, data::DialogueRecord>) {
        for (auto& t : r.turns) clean(t.text);
      } else {
        clean(r.context);
        clean(r.chosen);
        clean(r.rejected);
      }
    }
    n = records.size();
    data::write_corpus(a.output, records);
  });
  Json report = {{"records", n}, {"replacements", counts}};
  if (!a.report.empty()) {
    write_file_atomic(a.report, report.dump(2) + "\n");
    outputs.emplace_back(a.report);
  }
  std::cout << report.dump() << "\n";
  std::vector<fs::path> inputs{a.input};
  if (!a.names.empty()) inputs.emplace_back(a.names);
  record_manifest("data deid", inputs, outputs, 0);
}

struct MixArgs {
  std::string single, multi, output, ratio = "1:1";
  std::uint64_t seed = 0;
};

data::MixRatio parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  require(colon != std::string::npos, "ratio must look like a:b, got '" + s + "'");
  try {
    return {std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1))};
  } catch (const std::logic_error&) {
    fail(ErrorCode::kInvalidArgument, "ratio must look like a:b, got '" + s + "'");
  }
}

void run_mix(const MixArgs& a) {
  const auto mixed = data::mix_dialogues(load_records<data::DialogueRecord>(a.single),
                                         load_records<data::DialogueRecord>(a.multi), parse_ratio(a.ratio), a.seed);
  data::write_corpus(a.output, mixed);
  std::cout << Json{{"records", mixed.size()}}.dump() << "\n";
  record_manifest("data mix", {a.single, a.multi}, {a.output}, a.seed);
}

struct BlendArgs {
  std::string domain, general, output, format = "dialogue";
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

void run_blend(const BlendArgs& a) {
  std::size_t n = 0;
  with_format(a.format, [&]<class R>() {
    const auto out = data::blend_general(load_records<R>(a.domain), load_records<R>(a.general), a.fraction, a.seed);
    n = out.size();
    data::write_corpus(a.output, out);
  });
  std::cout << Json{{"records", n}}.dump() << "\n";
  record_manifest("data blend", {a.domain, a.general}, {a.output}, a.seed);
}

struct SplitArgs {
  std::string input, train, validation, format = "instruction";
  double fraction = 0.10;
  std::uint64_t seed = 0;
};

void run_split(const SplitArgs& a) {
  std::size_t nt = 0, nv = 0;
  with_format(a.format, [&]<class R>() {
    const auto s = data::split(load_records<R>(a.input), a.fraction, a.seed);
    nt = s.train.size();
    nv = s.validation.size();
    data::write_corpus(a.train, s.train);
    data::write_corpus(a.validation, s.validation);
  });
  std::cout << Json{{"train", nt}, {"validation", nv}}.dump() << "\n";
  record_manifest("data split", {a.input}, {a.train, a.validation}, a.seed);
}

struct PrefsMixArgs {
  std::string in_dist, out_dist, output;
  double scale = 0.01;
  long in_count = -1, out_count = -1;
  std::uint64_t seed = 0;
};

void run_prefs_mix(const PrefsMixArgs& a) {
  data::PreferenceCounts counts = data::scaled_preference_counts(a.scale);
  if (a.in_count >= 0) counts.in_distribution = static_cast<std::size_t>(a.in_count);
  if (a.out_count >= 0) counts.out_of_distribution = static_cast<std::size_t>(a.out_count);
  const auto mix = data::build_preference_mix(load_records<data::PreferenceRecord>(a.in_dist),
                                              load_records<data::PreferenceRecord>(a.out_dist), counts, a.seed);
  data::write_corpus(a.output, mix);
  std::cout << Json{{"records", mix.size()}, {"in_distribution", counts.in_distribution},
                    {"out_of_distribution", counts.out_of_distribution}}
                   .dump()
            << "\n";
  record_manifest("data prefs-mix", {a.in_dist, a.out_dist}, {a.output}, a.seed);
}

// --- training -----------------------------------------------------------------

struct TrainArgs {
  std::string train, validation, format = "instruction", output, metrics, init, reference, select = "best";
  NeuralConfig model;
  TrainConfig cfg;
};

void add_train_options(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--train", a.train, "training corpus (JSON lines)")->required()->check(CLI::ExistingFile);
  sub->add_option("--validation", a.validation, "validation corpus; default: split --train")->check(CLI::ExistingFile);
  sub->add_option("--output", a.output, "checkpoint path")->required();
  sub->add_option("--metrics", a.metrics, "metrics log (JSON lines); default: <output>.metrics.jsonl");
  sub->add_option("--d-model", a.model.d_model, "model width")->capture_default_str();
  sub->add_option("--blocks", a.model.num_blocks, "transformer blocks")->capture_default_str();
  sub->add_option("--heads", a.model.num_heads, "attention heads")->capture_default_str();
  sub->add_option("--ff-mult", a.model.ff_mult, "feed-forward width multiple")->capture_default_str();
  sub->add_option("--context-window", a.model.context_window, "maximum sequence length")->capture_default_str();
  sub->add_option("--steps", a.cfg.total_steps, "optimizer steps")->capture_default_str();
  sub->add_option("--lr-max", a.cfg.lr_max, "peak learning rate")->capture_default_str();
  sub->add_option("--lr-min", a.cfg.lr_min, "final learning rate")->capture_default_str();
  sub->add_option("--batch", a.cfg.batch_size, "examples per step")->capture_default_str();
  sub->add_option("--accum", a.cfg.accumulation_steps, "gradient accumulation micro-batches")->capture_default_str();
  sub->add_option("--dropout", a.cfg.dropout, "dropout rate")->capture_default_str();
  sub->add_option("--weight-decay", a.cfg.weight_decay, "AdamW weight decay")->capture_default_str();
  sub->add_option("--seed", a.cfg.seed, "seed for init, batches and dropout")->capture_default_str();
  sub->add_option("--eval-interval", a.cfg.eval_interval, "steps between validation passes")->capture_default_str();
  sub->add_option("--validation-fraction", a.cfg.validation_fraction, "used when --validation is absent")->capture_default_str();
  sub->add_option("--lora-rank", a.cfg.lora_rank, "0 trains all weights; >0 trains LoRA adapters only")->capture_default_str();
  sub->add_option("--lora-scaling", a.cfg.lora_scaling, "LoRA output scale")->capture_default_str();
  sub->add_option("--explosion-threshold", a.cfg.explosion_threshold, "gradient-norm guard threshold")->capture_default_str();
  sub->add_option("--select", a.select, "checkpoint to keep: best (lowest validation loss) or final")
      ->check(CLI::IsMember({"best", "final"}))
      ->capture_default_str();
}

NeuralPolicy with_adapters(const NeuralPolicy& base, const TrainConfig& cfg) {
  if (cfg.lora_rank == 0) return base;
  LoraConfig lc;
  lc.rank = cfg.lora_rank;
  lc.scaling = cfg.lora_scaling;
  lc.targets = {kWq, kWk, kWv, kWo, kW1, kW2};
  lc.include_output_head = true;
  lc.seed = derive_seed(cfg.seed, 0x6c6f7261ULL);
  return apply_lora(base.has_lora() ? merge_lora(base) : base, lc);
}

Checkpoint to_checkpoint(const NeuralPolicy& p, const RunResult& r, const TrainConfig& cfg) {
  Checkpoint c{AnyPolicy(p)};
  c.optimizer = r.state.optimizer;
  c.train_config = cfg;
  c.step = r.best_step;
  c.validation_loss = r.best_validation_loss;
  c.stage = stage_name(cfg.stage);
  c.lr_max = r.state.lr_max;
  c.explosion_events = r.state.explosion_events;
  return c;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> train_and_validation(const TrainArgs& a, std::vector<T> train) {
  if (!a.validation.empty()) return {std::move(train), {}};
  auto s = data::split(train, a.cfg.validation_fraction, a.cfg.seed);
  return {std::move(s.train), std::move(s.validation)};
}

std::string metrics_path(const TrainArgs& a) { return a.metrics.empty() ? a.output + ".metrics.jsonl" : a.metrics; }

std::vector<NeuralSftExample> sft_examples(const fs::path& path, const std::string& format) {
  if (format == "instruction") return neural_sft_examples(load_records<data::InstructionRecord>(path));
  if (format == "dialogue") return neural_sft_examples(load_records<data::DialogueRecord>(path));
  fail(ErrorCode::kInvalidArgument, "train sft takes instruction or dialogue records, not '" + format + "'");
}

void print_run(const RunResult& r) {
  std::cout << Json{{"best_step", r.best_step}, {"best_validation_loss", r.best_validation_loss},
                    {"last_train_loss", r.last_train_loss}, {"explosion_events", r.state.explosion_events}}
                   .dump()
            << "\n";
}

void run_train_sft(TrainArgs a) {
  a.cfg.stage = Stage::kSft;
  a.model.dropout = a.cfg.dropout;
  std::vector<NeuralSftExample> train, val;
  if (a.validation.empty()) {
    with_format(a.format, [&]<class R>() {
      if constexpr (std::is_same_v<R, data::PreferenceRecord>) {
        fail(ErrorCode::kInvalidArgument, "train sft takes instruction or dialogue records");
      } else {
        auto s = data::split(load_records<R>(a.train), a.cfg.validation_fraction, a.cfg.seed);
        train = neural_sft_examples(s.train);
        val = neural_sft_examples(s.validation);
      }
    });
  } else {
    train = sft_examples(a.train, a.format);
    val = sft_examples(a.validation, a.format);
  }
  NeuralPolicy base = a.init.empty() ? NeuralPolicy(a.model, a.cfg.seed) : load_checkpoint(a.init).neural();
  NeuralPolicy policy = with_adapters(base, a.cfg);
  std::vector<Json> log;
  const RunResult r = run_sft(policy, std::span<const NeuralSftExample>(train), std::span<const NeuralSftExample>(val),
                              a.cfg, [&](const Json& j) { log.push_back(j); }, parse_selection(a.select));
  save_checkpoint(a.output, to_checkpoint(policy, r, a.cfg));
  write_file_atomic(metrics_path(a), jsonl(log));
  print_run(r);
  std::vector<fs::path> inputs{a.train};
  if (!a.validation.empty()) inputs.emplace_back(a.validation);
  if (!a.init.empty()) inputs.emplace_back(a.init);
  record_manifest("train sft", inputs, {a.output, metrics_path(a)}, a.cfg.seed);
}

void run_train_dpo(TrainArgs a) {
  a.cfg.stage = Stage::kDpo;
  const Checkpoint ref_ckpt = load_checkpoint(a.reference);
  const NeuralPolicy& ref_policy = ref_ckpt.neural();
  const auto reference = snapshot_reference(ref_policy, ref_ckpt.stage);
  auto records = load_records<data::PreferenceRecord>(a.train);
  std::vector<data::PreferenceRecord> train_r, val_r;
  if (a.validation.empty()) {
    auto s = data::split(records, a.cfg.validation_fraction, a.cfg.seed);
    train_r = std::move(s.train);
    val_r = std::move(s.validation);
  } else {
    train_r = std::move(records);
    val_r = load_records<data::PreferenceRecord>(a.validation);
  }
  const auto train = neural_pairs(train_r), val = neural_pairs(val_r);
  const NeuralPolicy start = a.init.empty() ? ref_policy : load_checkpoint(a.init).neural();
  NeuralPolicy policy = with_adapters(start, a.cfg);
  std::vector<Json> log;
  const RunResult r = run_dpo(policy, reference, std::span<const NeuralPair>(train), std::span<const NeuralPair>(val),
                              a.cfg, [&](const Json& j) { log.push_back(j); }, parse_selection(a.select));
  save_checkpoint(a.output, to_checkpoint(policy, r, a.cfg));
  write_file_atomic(metrics_path(a), jsonl(log));
  print_run(r);
  std::vector<fs::path> inputs{a.train, a.reference};
  if (!a.validation.empty()) inputs.emplace_back(a.validation);
  if (!a.init.empty()) inputs.emplace_back(a.init);
  record_manifest("train dpo", inputs, {a.output, metrics_path(a)}, a.cfg.seed);
}

// --- verification ------------------------------------------------------------

struct VerifyArgs {
  std::vector<std::string> fixtures;
  std::vector<double> betas;
  bool neural = true;
  int steps = 6000;
  std::size_t samples = 0;
  double tolerance = -1.0;
  std::uint64_t seed = 0;
};

void verdict_line(bool ok, const std::string& what) { std::cout << (ok ? "PASS " : "FAIL ") << what << "\n"; }

void finish_verify(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kNumeric, what + " failed");
}

void run_gradcheck(const VerifyArgs& a) {
  bool ok = true;
  char buf[256];
  const std::vector<double> betas = a.betas.empty() ? std::vector<double>{0.1, 0.5, 1.0} : a.betas;
  const double tab_tol = a.tolerance > 0 ? a.tolerance : 1e-4;
  for (const auto& path : a.fixtures) {
    const RewardFixture f = load_reward_fixture(path);
    for (double b : betas) {
      const auto r = tabular_dpo_gradcheck(f, b, a.seed);
      std::snprintf(buf, sizeof buf, "tabular dpo %s beta=%g max_rel_err=%.3e (<= %.0e)", f.name.c_str(), b,
                    r.max_relative_error, tab_tol);
      verdict_line(r.max_relative_error <= tab_tol, buf);
      ok &= r.max_relative_error <= tab_tol;
    }
    const auto r = tabular_sft_gradcheck(f, a.seed);
    std::snprintf(buf, sizeof buf, "tabular sft %s max_rel_err=%.3e (<= %.0e)", f.name.c_str(), r.max_relative_error, tab_tol);
    verdict_line(r.max_relative_error <= tab_tol, buf);
    ok &= r.max_relative_error <= tab_tol;
  }
  if (a.neural) {
    const double tol = 1e-3;
    for (const auto& [name, r] : {std::pair{"dpo", neural_dpo_gradcheck(a.seed + 1)}, std::pair{"sft", neural_sft_gradcheck(a.seed + 1)}}) {
      std::snprintf(buf, sizeof buf, "neural %s max_rel_err=%.3e (<= %.0e) over %zu components", name,
                    r.max_relative_error, tol, r.components);
      verdict_line(r.max_relative_error <= tol, buf);
      ok &= r.max_relative_error <= tol;
    }
  }
  finish_verify(ok, "gradient check");
}

void run_closed_form(const VerifyArgs& a) {
  bool ok = true;
  char buf[256];
  const std::vector<double> betas = a.betas.empty() ? std::vector<double>{0.1, 0.5, 1.0} : a.betas;
  const double tol = a.tolerance > 0 ? a.tolerance : (a.samples > 0 ? 0.05 : 1e-3);
  for (const auto& path : a.fixtures) {
    const RewardFixture f = load_reward_fixture(path);
    for (double b : betas) {
      std::vector<TabularPair> pairs =
          a.samples == 0 ? bradley_terry_pair_set(f.reward, f.context_distribution)
                         : aggregate_pairs(sample_bradley_terry_pairs(f.reward, f.context_distribution, a.samples, a.seed),
                                           f.reference.num_contexts(), f.reference.num_responses());
      const TabularFit fit = fit_tabular_dpo(f.reference, pairs, tabular_dpo_config(b, a.steps));
      const double tv = total_variation(fit.policy, optimal_policy(f.reference, f.reward, Beta{b}));
      std::snprintf(buf, sizeof buf, "closed-form %s beta=%g pairs=%s tv=%.3e (<= %.0e)", f.name.c_str(), b,
                    a.samples == 0 ? "exact" : std::to_string(a.samples).c_str(), tv, tol);
      verdict_line(tv <= tol, buf);
      ok &= tv <= tol;
      if (a.samples > 0) {
        const auto rho = implicit_reward_rank_correlation(fit.policy, f.reference, f.reward, Beta{b});
        const double worst = *std::min_element(rho.begin(), rho.end());
        std::snprintf(buf, sizeof buf, "rank-correlation %s beta=%g min_spearman=%.4f (>= 0.9)", f.name.c_str(), b, worst);
        verdict_line(worst >= 0.9, buf);
        ok &= worst >= 0.9;
      }
    }
  }
  finish_verify(ok, "closed-form recovery");
}

void run_beta_sweep(const VerifyArgs& a) {
  bool ok = true;
  const std::vector<double> betas = a.betas.empty() ? default_beta_grid() : a.betas;
  for (std::size_t i = 1; i < betas.size(); ++i) require(betas[i] > betas[i - 1], "--beta values must increase");
  for (const auto& path : a.fixtures) {
    const RewardFixture f = load_reward_fixture(path);
    const auto kl = beta_sweep(f.reference, f.reward, betas);
    std::ostringstream line;
    line << "beta-sweep " << f.name << " mean_kl=[";
    bool mono = true;
    for (std::size_t i = 0; i < kl.size(); ++i) {
      line << (i ? ", " : "") << "beta " << betas[i] << ": " << kl[i];
      if (i > 0 && kl[i] > kl[i - 1]) mono = false;
    }
    line << "] non-increasing";
    verdict_line(mono, line.str());
    ok &= mono;
  }
  finish_verify(ok, "beta sweep");
}

// --- evaluation ---------------------------------------------------------------

struct JudgeArgs {
  std::string kind = "local";
  std::vector<std::string> keywords;
  std::string endpoint, model, api_key_env = "PREFALIGN_JUDGE_API_KEY";
  int retries = 2;
  long backoff_ms = -1;
  int parallelism = 1;
  bool no_swap = false;
};

void add_judge_options(CLI::App* sub, JudgeArgs& j) {
  sub->add_option("--judge", j.kind, "local | remote")->check(CLI::IsMember({"local", "remote"}))->capture_default_str();
  sub->add_option("--keywords", j.keywords, "local judge target keywords; default: question words");
  sub->add_option("--endpoint", j.endpoint, "remote judge chat-completions URL");
  sub->add_option("--model", j.model, "remote judge model name");
  sub->add_option("--api-key-env", j.api_key_env, "environment variable holding the remote judge key")->capture_default_str();
  sub->add_option("--retries", j.retries, "retries per item after a failed attempt")->capture_default_str();
  sub->add_option("--backoff-ms", j.backoff_ms, "initial retry delay; default 500 remote, 0 local");
  sub->add_option("--parallelism", j.parallelism, "concurrent judge calls")->capture_default_str();
  sub->add_flag("--no-swap", j.no_swap, "disable seeded presentation-order swapping");
}

std::unique_ptr<eval::Judge> make_judge(const JudgeArgs& j) {
  if (j.kind == "local") return std::make_unique<eval::LocalKeywordJudge>(j.keywords);
  eval::RemoteJudgeConfig rc;
  rc.endpoint = j.endpoint;
  rc.model = j.model;
  rc.api_key_env = j.api_key_env;
  return std::make_unique<eval::RemoteJudge>(rc, eval::httplib_transport(rc.timeout_seconds));
}

eval::PairwiseOptions pairwise_options(const JudgeArgs& j) {
  eval::PairwiseOptions o;
  o.swap = !j.no_swap;
  o.max_retries = j.retries;
  o.parallelism = j.parallelism;
  o.backoff = std::chrono::milliseconds(j.backoff_ms >= 0 ? j.backoff_ms : (j.kind == "remote" ? 500 : 0));
  return o;
}

void write_report(const eval::Report& rep, const std::vector<eval::MatchResult>& results, const std::string& output,
                  const std::string& results_path, std::vector<fs::path>& outputs) {
  std::cout << eval::render_table(rep);
  if (!output.empty()) {
    write_file_atomic(output, eval::to_json(rep).dump(2) + "\n");
    outputs.emplace_back(output);
  }
  if (!results_path.empty()) {
    std::vector<Json> rows;
    for (const auto& r : results) rows.push_back(eval::to_json(r));
    write_file_atomic(results_path, jsonl(rows));
    outputs.emplace_back(results_path);
  }
}

struct PairwiseArgs {
  std::string input, output, results, model_a = "model_a", model_b = "model_b";
  std::uint64_t seed = 0;
  JudgeArgs judge;
};

void run_eval_pairwise(const PairwiseArgs& a) {
  std::vector<eval::EvalItem> items;
  std::size_t n = 0;
  for (const auto& line : read_lines(a.input)) {
    const Json j = parse_line(line, ++n, a.input);
    eval::EvalItem it;
    it.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : std::to_string(items.size());
    it.question = j.at("question").get<std::string>();
    it.answer_a = j.at("answer_a").get<std::string>();
    it.answer_b = j.at("answer_b").get<std::string>();
    items.push_back(std::move(it));
  }
  auto judge = make_judge(a.judge);
  auto opts = pairwise_options(a.judge);
  opts.model_a = a.model_a;
  opts.model_b = a.model_b;
  const auto results = eval::run_pairwise(items, *judge, a.seed, opts);
  const auto rep = eval::aggregate(results);
  std::vector<fs::path> outputs;
  write_report(rep, results, a.output, a.results, outputs);
  if (!outputs.empty()) record_manifest("eval pairwise", {a.input}, outputs, a.seed);
}

struct ImportArgs {
  std::string verdicts, output;
};

void run_eval_import(const ImportArgs& a) {
  const auto results = eval::import_verdicts(read_file(a.verdicts));
  const auto rep = eval::aggregate(results);
  std::vector<fs::path> outputs;
  write_report(rep, results, a.output, "", outputs);
  if (!outputs.empty()) record_manifest("eval import", {a.verdicts}, outputs, 0);
}

struct AblateArgs {
  std::string pre, post, prompts, exclude, exclude_format = "instruction", output, results;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  bool greedy = false;
  int max_tokens = 64;
  JudgeArgs judge;
};

void run_eval_ablate(const AblateArgs& a) {
  const Checkpoint pre = load_checkpoint(a.pre), post = load_checkpoint(a.post);
  eval::AblationOptions opts;
  opts.sampling.temperature = a.temperature;
  opts.sampling.greedy = a.greedy;
  opts.sampling.max_new_tokens = a.max_tokens;
  opts.pairwise = pairwise_options(a.judge);
  if (!a.exclude.empty()) opts.training_contexts = training_contexts(a.exclude, a.exclude_format);
  auto judge = make_judge(a.judge);
  const auto res = eval::ablation_compare(pre, post, load_prompts(a.prompts), *judge, a.seed, opts);
  for (const auto& w : res.report.warnings) std::cerr << Json{{"warning", w}}.dump() << "\n";
  std::vector<fs::path> outputs;
  write_report(res.report, res.results, a.output, a.results, outputs);
  std::vector<fs::path> inputs{a.pre, a.post, a.prompts};
  if (!a.exclude.empty()) inputs.emplace_back(a.exclude);
  if (!outputs.empty()) record_manifest("eval ablate", inputs, outputs, a.seed);
}

// --- generation, service, export ---------------------------------------------

struct GenerateArgs {
  std::string checkpoint, prompts, output;
  int samples = 2;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  bool greedy = false;
  int max_tokens = 64;
};

void run_generate(const GenerateArgs& a) {
  require(a.samples >= 1, "--samples must be at least 1");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto prompts = load_prompts(a.prompts);
  std::vector<Json> rows;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<std::string> responses;
    for (int k = 0; k < a.samples; ++k) {
      SampleOptions s;
      s.temperature = a.temperature;
      s.greedy = a.greedy;
      s.max_new_tokens = a.max_tokens;
      s.seed = derive_seed(a.seed, i * static_cast<std::size_t>(a.samples) + static_cast<std::size_t>(k));
      responses.push_back(eval::generate_response(ckpt, prompts[i].context, s));
    }
    Json row = {{"id", prompts[i].id}, {"context", prompts[i].context}, {"responses", responses}};
    if (responses.size() >= 2) {
      row["response_a"] = responses[0];
      row["response_b"] = responses[1];
    }
    rows.push_back(std::move(row));
  }
  write_file_atomic(a.output, jsonl(rows));
  std::cout << Json{{"prompts", rows.size()}, {"samples", a.samples}}.dump() << "\n";
  record_manifest("generate", {a.checkpoint, a.prompts}, {a.output}, a.seed);
}

struct TasksArgs {
  std::string log, input, source = "in_distribution";
  std::uint64_t seed = 0;
};

// Loads generated pairs straight into an on-disk store (service stopped).
void run_tasks_import(const TasksArgs& a) {
  annotation::AnnotationStore::Options o;
  o.log_path = a.log;
  o.seed = a.seed;
  annotation::AnnotationStore store(o);
  std::vector<annotation::PairInput> pairs;
  std::size_t n = 0;
  for (const auto& line : read_lines(a.input)) {
    const Json j = parse_line(line, ++n, a.input);
    pairs.push_back({j.at("context").get<std::string>(), j.at("response_a").get<std::string>(),
                     j.at("response_b").get<std::string>(), std::nullopt, j.value("source", a.source)});
  }
  const auto r = store.create_tasks(pairs);
  Json rejected = Json::array();
  for (const auto& [i, why] : r.rejected) rejected.push_back({{"line", i + 1}, {"error", why}});
  std::cout << Json{{"created", r.created.size()}, {"rejected", rejected}}.dump() << "\n";
}

struct ServeArgs {
  std::string config, host, log;
  int port = -1;
};

void run_serve(const ServeArgs& a) {
  annotation::ServiceConfig cfg = annotation::parse_service_config(read_file(a.config));
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;
  if (!a.log.empty()) cfg.log_path = a.log;
  if (cfg.tokens.empty()) fail(ErrorCode::kInvalidArgument, "no user has a token; set token.<user> or PREFALIGN_TOKEN_<USER>");
  // Handle SIGINT/SIGTERM on a dedicated thread so the server stops cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  annotation::AnnotationStore::Options o;
  o.log_path = cfg.log_path;
  o.seed = cfg.seed;
  annotation::AnnotationStore store(o);
  annotation::AnnotationServer server(store, cfg);
  const int port = server.bind();
  std::thread waiter([&server, set] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  std::cout << Json{{"listening", cfg.host + ":" + std::to_string(port)}, {"tasks", store.size()}}.dump() << std::endl;
  server.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
}

struct ExportArgs {
  std::string log, url, token_env = "PREFALIGN_TOKEN", output;
};

void run_export(const ExportArgs& a) {
  require(a.log.empty() != a.url.empty(), "give exactly one of --log or --url");
  std::string body;
  std::vector<fs::path> inputs;
  if (!a.log.empty()) {
    annotation::AnnotationStore::Options o;
    o.log_path = a.log;
    o.read_only = true;
    annotation::AnnotationStore store(o);
    body = data::serialize_corpus(store.export_preferences());
    inputs.emplace_back(a.log);
  } else {
    const char* token = std::getenv(a.token_env.c_str());
    if (!token) fail(ErrorCode::kUnauthenticated, "environment variable " + a.token_env + " is not set");
    httplib::Client client(a.url);
    auto res = client.Get("/export", {{"Authorization", std::string("Bearer ") + token}});
    if (!res) fail(ErrorCode::kUnavailable, "cannot reach " + a.url + ": " + httplib::to_string(res.error()));
    if (res->status != 200) fail(ErrorCode::kUnavailable, "export failed with HTTP " + std::to_string(res->status) + ": " + res->body);
    body = res->body;
  }
  const auto corpus = data::parse_corpus<data::PreferenceRecord>(body);
  if (!corpus.errors.empty()) fail(ErrorCode::kParse, "service exported an invalid record");
  write_file_atomic(a.output, body);
  std::cout << Json{{"records", corpus.records.size()}}.dump() << "\n";
  record_manifest("export-prefs", inputs, {a.output}, 0);
}

std::string command_path(const CLI::App& app) {
  std::string out;
  const CLI::App* cur = &app;
  while (true) {
    const auto subs = cur->get_subcommands();
    if (subs.empty()) break;
    cur = subs.front();
    out += (out.empty() ? "" : " ") + cur->get_name();
  }
  return out;
}

void error_line(const std::string& code, const std::string& message, const std::string& command) {
  std::cerr << Json{{"error", {{"code", code}, {"message", message}, {"command", command}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefalign: supervised fine-tuning and preference alignment toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags win");
  app.add_option("--manifest", g_session.manifest, "manifest path; default: manifest.jsonl beside the first output");
  g_session.app = &app;
  for (int i = 0; i < argc; ++i) g_session.argv.emplace_back(argv[i]);

  // data
  auto* data_cmd = app.add_subcommand("data", "corpus preparation")->require_subcommand(1);
  DeidArgs deid;
  auto* c = data_cmd->add_subcommand("deid", "replace identifiers, birth dates and listed names");
  c->add_option("--input", deid.input)->required()->check(CLI::ExistingFile);
  c->add_option("--output", deid.output)->required();
  c->add_option("--format", deid.format, "instruction | dialogue | preference")->capture_default_str();
  c->add_option("--names", deid.names, "file with one personal name per line")->check(CLI::ExistingFile);
  c->add_option("--report", deid.report, "write replacement counts as JSON");
  c->callback([&] { run_deid(deid); });

  MixArgs mix;
  c = data_cmd->add_subcommand("mix", "mix single- and multi-turn dialogues by record count");
  c->add_option("--single", mix.single)->required()->check(CLI::ExistingFile);
  c->add_option("--multi", mix.multi)->required()->check(CLI::ExistingFile);
  c->add_option("--output", mix.output)->required();
  c->add_option("--ratio", mix.ratio, "single:multi")->capture_default_str();
  c->add_option("--seed", mix.seed)->capture_default_str();
  c->callback([&] { run_mix(mix); });

  BlendArgs blend;
  c = data_cmd->add_subcommand("blend", "add general-domain records as a fraction of the output");
  c->add_option("--domain", blend.domain)->required()->check(CLI::ExistingFile);
  c->add_option("--general", blend.general)->required()->check(CLI::ExistingFile);
  c->add_option("--fraction", blend.fraction, "general share of the output")->required();
  c->add_option("--output", blend.output)->required();
  c->add_option("--format", blend.format)->capture_default_str();
  c->add_option("--seed", blend.seed)->capture_default_str();
  c->callback([&] { run_blend(blend); });

  SplitArgs split;
  c = data_cmd->add_subcommand("split", "seeded train/validation split");
  c->add_option("--input", split.input)->required()->check(CLI::ExistingFile);
  c->add_option("--train", split.train)->required();
  c->add_option("--validation", split.validation)->required();
  c->add_option("--fraction", split.fraction, "validation share")->capture_default_str();
  c->add_option("--format", split.format)->capture_default_str();
  c->add_option("--seed", split.seed)->capture_default_str();
  c->callback([&] { run_split(split); });

  PrefsMixArgs prefs;
  c = data_cmd->add_subcommand("prefs-mix", "in/out-of-distribution preference mix");
  c->add_option("--in-dist", prefs.in_dist)->required()->check(CLI::ExistingFile);
  c->add_option("--out-dist", prefs.out_dist)->required()->check(CLI::ExistingFile);
  c->add_option("--output", prefs.output)->required();
  c->add_option("--scale", prefs.scale, "scale of the 10000:5000 base counts")->capture_default_str();
  c->add_option("--in-count", prefs.in_count, "explicit in-distribution count");
  c->add_option("--out-count", prefs.out_count, "explicit out-of-distribution count");
  c->add_option("--seed", prefs.seed)->capture_default_str();
  c->callback([&] { run_prefs_mix(prefs); });

  // train
  auto* train_cmd = app.add_subcommand("train", "SFT and DPO training")->require_subcommand(1);
  TrainArgs sft;
  c = train_cmd->add_subcommand("sft", "supervised fine-tuning of a byte-level transformer");
  add_train_options(c, sft);
  c->add_option("--format", sft.format, "instruction | dialogue")->capture_default_str();
  c->add_option("--init", sft.init, "start from this checkpoint")->check(CLI::ExistingFile);
  c->callback([&] { run_train_sft(sft); });

  TrainArgs dpo;
  dpo.cfg.beta = kDefaultBeta;
  c = train_cmd->add_subcommand("dpo", "direct preference optimization against a frozen reference");
  add_train_options(c, dpo);
  c->add_option("--reference", dpo.reference, "reference (SFT) checkpoint")->required()->check(CLI::ExistingFile);
  c->add_option("--beta", dpo.cfg.beta, "KL strength")->capture_default_str();
  c->add_option("--init", dpo.init, "start from this checkpoint instead of the reference")->check(CLI::ExistingFile);
  c->callback([&] { run_train_dpo(dpo); });

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "numerical verification suites")->require_subcommand(1);
  VerifyArgs gc, cf, bs;
  c = verify_cmd->add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  c->add_option("--fixture", gc.fixtures, "tabular reward fixture(s)")->check(CLI::ExistingFile);
  c->add_option("--beta", gc.betas, "betas for the tabular DPO check");
  c->add_option("--tolerance", gc.tolerance, "tabular tolerance (default 1e-4)");
  c->add_option("--seed", gc.seed)->capture_default_str();
  c->add_flag("!--no-neural", gc.neural, "skip the neural checks");
  c->callback([&] { run_gradcheck(gc); });

  c = verify_cmd->add_subcommand("closed-form", "DPO training recovers the optimal policy");
  c->add_option("--fixture", cf.fixtures)->required()->check(CLI::ExistingFile);
  c->add_option("--beta", cf.betas, "default 0.1 0.5 1.0");
  c->add_option("--steps", cf.steps)->capture_default_str();
  c->add_option("--samples", cf.samples, "train on this many sampled pairs instead of exact weights");
  c->add_option("--tolerance", cf.tolerance, "TV tolerance (default 1e-3 exact, 0.05 sampled)");
  c->add_option("--seed", cf.seed)->capture_default_str();
  c->callback([&] { run_closed_form(cf); });

  c = verify_cmd->add_subcommand("beta-sweep", "mean KL of the optimal policy falls as beta grows");
  c->add_option("--fixture", bs.fixtures)->required()->check(CLI::ExistingFile);
  c->add_option("--beta", bs.betas, "increasing betas (default 0.01 0.1 0.5 1.0)");
  c->callback([&] { run_beta_sweep(bs); });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "pairwise judging")->require_subcommand(1);
  PairwiseArgs pw;
  c = eval_cmd->add_subcommand("pairwise", "judge answer pairs: JSON lines with question, answer_a, answer_b");
  c->add_option("--input", pw.input)->required()->check(CLI::ExistingFile);
  c->add_option("--output", pw.output, "report JSON");
  c->add_option("--results", pw.results, "per-item results (JSON lines)");
  c->add_option("--model-a", pw.model_a)->capture_default_str();
  c->add_option("--model-b", pw.model_b)->capture_default_str();
  c->add_option("--seed", pw.seed)->capture_default_str();
  add_judge_options(c, pw.judge);
  c->callback([&] { run_eval_pairwise(pw); });

  ImportArgs imp;
  c = eval_cmd->add_subcommand("import", "aggregate externally produced verdicts");
  c->add_option("--verdicts", imp.verdicts, "JSON lines with item_id, verdict, judge_id")->required()->check(CLI::ExistingFile);
  c->add_option("--output", imp.output, "report JSON");
  c->callback([&] { run_eval_import(imp); });

  AblateArgs ab;
  c = eval_cmd->add_subcommand("ablate", "compare pre- and post-DPO checkpoints");
  c->add_option("--pre", ab.pre)->required()->check(CLI::ExistingFile);
  c->add_option("--post", ab.post)->required()->check(CLI::ExistingFile);
  c->add_option("--prompts", ab.prompts, "held-out prompts")->required()->check(CLI::ExistingFile);
  c->add_option("--exclude", ab.exclude, "training corpus; prompts found in it are rejected")->check(CLI::ExistingFile);
  c->add_option("--exclude-format", ab.exclude_format)->capture_default_str();
  c->add_option("--output", ab.output, "report JSON");
  c->add_option("--results", ab.results, "per-item results (JSON lines)");
  c->add_option("--seed", ab.seed)->capture_default_str();
  c->add_option("--temperature", ab.temperature)->capture_default_str();
  c->add_flag("--greedy", ab.greedy);
  c->add_option("--max-tokens", ab.max_tokens)->capture_default_str();
  add_judge_options(c, ab.judge);
  c->callback([&] { run_eval_ablate(ab); });

  // generation and annotation
  GenerateArgs gen;
  c = app.add_subcommand("generate", "sample responses for prompts");
  c->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingFile);
  c->add_option("--prompts", gen.prompts)->required()->check(CLI::ExistingFile);
  c->add_option("--output", gen.output)->required();
  c->add_option("--samples", gen.samples, "responses per prompt")->capture_default_str();
  c->add_option("--seed", gen.seed)->capture_default_str();
  c->add_option("--temperature", gen.temperature)->capture_default_str();
  c->add_flag("--greedy", gen.greedy);
  c->add_option("--max-tokens", gen.max_tokens)->capture_default_str();
  c->callback([&] { run_generate(gen); });

  auto* tasks_cmd = app.add_subcommand("tasks", "annotation tasks in an on-disk store")->require_subcommand(1);
  TasksArgs tasks;
  c = tasks_cmd->add_subcommand("import", "create tasks from generated pairs (service stopped)");
  c->add_option("--log", tasks.log, "annotation event log")->required();
  c->add_option("--input", tasks.input, "JSON lines with context, response_a, response_b")->required()->check(CLI::ExistingFile);
  c->add_option("--source", tasks.source)->capture_default_str();
  c->add_option("--seed", tasks.seed, "presentation-order seed")->capture_default_str();
  c->callback([&] { run_tasks_import(tasks); });

  ServeArgs serve;
  c = app.add_subcommand("serve", "run the annotation service");
  c->add_option("--service-config", serve.config, "key=value service configuration")->required()->check(CLI::ExistingFile);
  c->add_option("--host", serve.host);
  c->add_option("--port", serve.port);
  c->add_option("--log", serve.log, "event log path");
  c->callback([&] { run_serve(serve); });

  ExportArgs ex;
  c = app.add_subcommand("export-prefs", "write resolved preferences as JSON lines");
  c->add_option("--log", ex.log, "read an on-disk event log")->check(CLI::ExistingFile);
  c->add_option("--url", ex.url, "or pull from a running service, e.g. http://127.0.0.1:8080");
  c->add_option("--token-env", ex.token_env, "environment variable holding an expert token")->capture_default_str();
  c->add_option("--output", ex.output)->required();
  c->callback([&] { run_export(ex); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what(), command_path(app));
    return 2;
  } catch (const prefalign::Error& e) {
    error_line(std::string(error_code_name(e.code())), e.what(), command_path(app));
    return 1;
  } catch (const std::exception& e) {
    error_line("internal", e.what(), command_path(app));
    return 1;
  }
  return 0;
}
