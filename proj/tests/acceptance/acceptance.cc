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


// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Pass criterion numbers to run a subset.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prefalign/align_math.hpp"
#include "prefalign/annotation/store.hpp"
#include "prefalign/data/deid.hpp"
#include "prefalign/data/mixing.hpp"
#include "prefalign/data/records.hpp"
#include "prefalign/eval/harness.hpp"
#include "prefalign/eval/judge.hpp"
#include "prefalign/pipeline.hpp"
#include "prefalign/reward_fixture.hpp"
#include "prefalign/runner.hpp"
#include "prefalign/verification.hpp"

namespace {

using namespace prefalign;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<fs::path> shipped_fixtures() {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(PREFALIGN_FIXTURE_DIR)) {
    const auto name = e.path().filename().string();
    if (name.rfind("tabular_", 0) == 0 && e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RewardFixture fixture_3x4() { return load_reward_fixture(fs::path(PREFALIGN_FIXTURE_DIR) / "tabular_3x4.json"); }

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& g, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

std::vector<std::string> names(const char* prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// --- 1 -----------------------------------------------------------------------

Outcome zero_margin_anchor() {
  std::mt19937_64 g(101);
  double worst = 0.0;
  for (int f = 0; f < 100; ++f) {
    const std::size_t nx = 1 + g() % 5, ny = 2 + g() % 6;
    const TabularPolicy ref(names("x", nx), names("y", ny), random_matrix(nx, ny, g, 3.0));
    const RewardTable reward(names("x", nx), names("y", ny), random_matrix(nx, ny, g, 1.0));
    const auto pairs = bradley_terry_pair_set(reward, uniform_contexts(nx));
    const auto snap = snapshot_reference(ref, "reference");
    for (double b : {0.01, 0.1, 1.0, 10.0}) {
      worst = std::max(worst, std::abs(dpo_loss(ref, snap, pairs, Beta{b}) - std::log(2.0)));
    }
  }
  return {worst <= 1e-12, "max |loss - ln 2| = " + fmt("%.2e", worst) + " over 100 fixtures x 4 betas (<= 1e-12)"};
}

// --- 2 -----------------------------------------------------------------------

Outcome gradient_fidelity() {
  double tab = 0.0;
  std::uint64_t seed = 1;
  for (const auto& path : shipped_fixtures()) {
    const RewardFixture f = load_reward_fixture(path);
    for (double b : {0.1, 0.5, 1.0}) tab = std::max(tab, tabular_dpo_gradcheck(f, b, seed++).max_relative_error);
    tab = std::max(tab, tabular_sft_gradcheck(f, seed++).max_relative_error);
  }
  const double dpo = neural_dpo_gradcheck(7).max_relative_error;
  const double sft = neural_sft_gradcheck(7).max_relative_error;
  const double neural = std::max(dpo, sft);
  return {tab <= 1e-4 && neural <= 1e-3, "tabular max rel err " + fmt("%.2e", tab) + " (<= 1e-4); neural dpo " +
                                             fmt("%.2e", dpo) + ", sft " + fmt("%.2e", sft) + " (<= 1e-3, dropout off)"};
}

// --- 3, 4 --------------------------------------------------------------------

Outcome closed_form_recovery() {
  const RewardFixture f = fixture_3x4();
  double worst = 0.0;
  std::string per;
  for (double b : {0.1, 0.5, 1.0}) {
    const auto fit = fit_tabular_dpo(f.reference, bradley_terry_pair_set(f.reward, f.context_distribution),
                                     tabular_dpo_config(b));
    const double tv = total_variation(fit.policy, optimal_policy(f.reference, f.reward, Beta{b}));
    worst = std::max(worst, tv);
    per += (per.empty() ? "" : ", ") + fmt("beta %g", b) + fmt(": %.2e", tv);
  }
  return {worst <= 1e-3, "TV " + per + " (<= 1e-3)"};
}

Outcome sampled_consistency() {
  const RewardFixture f = fixture_3x4();
  double worst_tv = 0.0, worst_rho = 1.0;
  std::string per;
  std::uint64_t seed = 40;
  for (double b : {0.1, 0.5, 1.0}) {
    const auto sampled = sample_bradley_terry_pairs(f.reward, f.context_distribution, 50000, seed++);
    const auto pairs = aggregate_pairs(sampled, f.reference.num_contexts(), f.reference.num_responses());
    const auto fit = fit_tabular_dpo(f.reference, pairs, tabular_dpo_config(b));
    const double tv = total_variation(fit.policy, optimal_policy(f.reference, f.reward, Beta{b}));
    const auto rho = implicit_reward_rank_correlation(fit.policy, f.reference, f.reward, Beta{b});
    const double r = *std::min_element(rho.begin(), rho.end());
    worst_tv = std::max(worst_tv, tv);
    worst_rho = std::min(worst_rho, r);
    per += (per.empty() ? "" : "; ") + fmt("beta %g", b) + fmt(": TV %.4f", tv) + fmt(", min rho %.4f", r);
  }
  return {worst_tv <= 0.05 && worst_rho >= 0.9, "50000 pairs; " + per + " (TV <= 0.05, rho >= 0.9)"};
}

// --- 5, 6 --------------------------------------------------------------------

Outcome shift_invariance() {
  std::mt19937_64 g(55);
  double worst_pi = 0.0, worst_bt = 0.0;
  for (const auto& path : shipped_fixtures()) {
    const RewardFixture f = load_reward_fixture(path);
    const std::size_t nx = f.reference.num_contexts(), ny = f.reference.num_responses();
    for (int trial = 0; trial < 20; ++trial) {
      Vector shift(static_cast<Eigen::Index>(nx));
      std::uniform_real_distribution<double> u(-50.0, 50.0);
      for (Eigen::Index i = 0; i < shift.size(); ++i) shift(i) = u(g);
      const RewardTable moved = f.reward.shifted(shift);
      for (double b : {0.1, 0.5, 1.0}) {
        const auto a = optimal_policy(f.reference, f.reward, Beta{b});
        const auto c = optimal_policy(f.reference, moved, Beta{b});
        for (std::size_t x = 0; x < nx; ++x) {
          worst_pi = std::max(worst_pi, (a.probabilities(x) - c.probabilities(x)).cwiseAbs().maxCoeff());
        }
      }
      for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t i = 0; i < ny; ++i)
          for (std::size_t j = 0; j < ny; ++j) {
            worst_bt = std::max(worst_bt, std::abs(bt_preference_prob(f.reward, x, i, j) - bt_preference_prob(moved, x, i, j)));
          }
    }
  }
  return {worst_pi <= 1e-12 && worst_bt <= 1e-12, "max change: optimal policy " + fmt("%.2e", worst_pi) +
                                                      ", preference prob " + fmt("%.2e", worst_bt) + " (<= 1e-12)"};
}

Outcome beta_sweep_monotone() {
  const std::vector<double> grid = {0.01, 0.1, 0.5, 1.0};
  bool ok = true;
  std::string per;
  for (const auto& path : shipped_fixtures()) {
    const RewardFixture f = load_reward_fixture(path);
    const auto kl = beta_sweep(f.reference, f.reward, grid);
    for (std::size_t i = 1; i < kl.size(); ++i) ok &= kl[i] <= kl[i - 1];
    per += (per.empty() ? "" : "; ") + f.name + ":";
    for (double k : kl) per += fmt(" %.4f", k);
  }
  return {ok, "mean KL at beta 0.01/0.1/0.5/1.0: " + per};
}

// --- 7, 8 --------------------------------------------------------------------

std::vector<NeuralSftExample> instruction_examples(const std::string& file) {
  const auto corpus = data::load_corpus<data::InstructionRecord>(fs::path(PREFALIGN_FIXTURE_DIR) / file);
  require(corpus.errors.empty(), file + " has invalid records");
  return neural_sft_examples(corpus.records);
}

Outcome sft_memorization() {
  const auto corpus = data::load_corpus<data::InstructionRecord>(fs::path(PREFALIGN_FIXTURE_DIR) / "instructions_36.jsonl");
  const auto parts = data::split(corpus.records, 0.1, 17);
  const auto train = neural_sft_examples(parts.train), val = neural_sft_examples(parts.validation);
  NeuralConfig nc;
  nc.context_window = 256;
  NeuralPolicy p(nc, 1);
  TrainConfig cfg;
  cfg.lr_max = 0.01;
  cfg.lr_min = 1e-4;
  cfg.total_steps = 2000;
  cfg.batch_size = 8;
  cfg.seed = 3;
  cfg.eval_interval = 250;
  // Memorization is a property of the trained weights, not of the early
  // checkpoint that the 4 held-out records would select.
  run_sft(p, std::span<const NeuralSftExample>(train), std::span<const NeuralSftExample>(val), cfg, {},
          Selection::kFinal);
  const double nll = sft_loss(p, train);
  const bool split_ok = parts.train.size() == 32 && parts.validation.size() == 4;
  return {split_ok && nll < 0.05, "split " + std::to_string(parts.train.size()) + "/" +
                                       std::to_string(parts.validation.size()) + " of " +
                                       std::to_string(corpus.records.size()) + "; train NLL per sequence " +
                                       fmt("%.5f", nll) + " after 2000 steps (< 0.05)"};
}

Outcome lora_contracts() {
  NeuralConfig nc;
  nc.context_window = 256;
  nc.dropout = 0.0;
  const NeuralPolicy base(nc, 1);
  const auto examples = instruction_examples("instructions_ambiguous.jsonl");

  // Adapters at init leave log-probabilities unchanged.
  LoraConfig lc;
  lc.rank = 32;
  lc.targets = {kWq, kWk, kWv, kWo, kW1, kW2};
  lc.include_output_head = true;
  lc.scaling = 1.0;
  lc.init_std = 0.01;
  const NeuralPolicy at_init = apply_lora(base, lc);
  double init_gap = 0.0;
  for (const auto& e : examples) {
    init_gap = std::max(init_gap, std::abs(at_init.log_prob(e.context, e.response) - base.log_prob(e.context, e.response)));
  }

  TrainConfig cfg;
  cfg.lr_max = 0.01;
  cfg.lr_min = 1e-4;
  cfg.total_steps = 600;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.dropout = 0.0;
  cfg.eval_interval = 600;
  const std::span<const NeuralSftExample> data(examples);

  NeuralPolicy adapted = at_init;
  run_sft(adapted, data, data, cfg);
  bool frozen = adapted.tensors().size() == base.tensors().size();
  for (std::size_t i = 0; frozen && i < base.tensors().size(); ++i) {
    const Matrix& a = adapted.tensors()[i];
    const Matrix& b = base.tensors()[i];
    frozen = a.rows() == b.rows() && a.cols() == b.cols() &&
             std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
  }

  NeuralPolicy full = base;
  run_sft(full, data, data, cfg);
  const double lora_loss = sft_loss(adapted, examples), full_loss = sft_loss(full, examples);
  const double rel = std::abs(lora_loss - full_loss) / full_loss;
  return {init_gap <= 1e-12 && frozen && rel <= 0.05,
          "init log-prob gap " + fmt("%.2e", init_gap) + " (<= 1e-12); base tensors " +
              (frozen ? "bitwise unchanged" : "CHANGED") + "; rank-32 adapter loss " + fmt("%.4f", lora_loss) +
              " vs full " + fmt("%.4f", full_loss) + fmt(" (%.2f%%, <= 5%%)", 100.0 * rel)};
}

// --- 9 -----------------------------------------------------------------------

Outcome pipeline_exactness() {
  std::mt19937_64 g(9);
  const std::vector<std::string> people = {"张伟", "王芳", "李娜", "Zhang Wei", "Li Na"};
  const data::Deidentifier deid(data::default_deid_rules(people));
  std::vector<std::string> planted;
  std::size_t survivors = 0;
  for (int i = 0; i < 200; ++i) {
    std::string id;
    for (int k = 0; k < 17; ++k) id.push_back(static_cast<char>('0' + g() % 10));
    id.push_back(g() % 11 == 10 ? 'X' : static_cast<char>('0' + g() % 10));
    const std::string dob = std::to_string(1940 + g() % 80) + "年" + std::to_string(1 + g() % 12) + "月" +
                            std::to_string(1 + g() % 28) + "日";
    const std::string& who = people[g() % people.size()];
    const std::string text = "患者" + who + "，身份证" + id + "，出生于" + dob + "。复诊：" + who + " id:" + id + ".";
    const std::string out = deid.apply(text).text;
    for (const auto& s : {id, dob, who}) survivors += out.find(s) != std::string::npos;
    planted.push_back(text);
  }

  auto dialogue = [&](int turns, int tag) {
    data::DialogueRecord d;
    for (int t = 0; t < turns; ++t) {
      d.turns.push_back({t % 2 == 0 ? data::Role::kUser : data::Role::kAssistant, "turn " + std::to_string(tag) + "." + std::to_string(t)});
    }
    return d;
  };
  std::vector<data::DialogueRecord> single, multi;
  for (int i = 0; i < 130; ++i) single.push_back(dialogue(2, i));
  for (int i = 0; i < 90; ++i) multi.push_back(dialogue(4 + 2 * (i % 3), 1000 + i));
  const auto mixed = data::mix_dialogues(single, multi, data::MixRatio{1, 1}, 5);
  std::size_t ns = 0, nm = 0;
  for (const auto& d : mixed) (d.is_single_turn() ? ns : nm)++;

  auto pref = [](int i, const char* src) {
    data::PreferenceRecord r;
    r.context = "q" + std::to_string(i);
    r.chosen = "good " + std::to_string(i);
    r.rejected = "bad " + std::to_string(i);
    r.dimension = "safety";
    r.source = src;
    return r;
  };
  std::vector<data::PreferenceRecord> in, out;
  for (int i = 0; i < 160; ++i) in.push_back(pref(i, "in_distribution"));
  for (int i = 0; i < 90; ++i) out.push_back(pref(1000 + i, "out_of_distribution"));
  const auto mix = data::build_preference_mix(in, out, data::scaled_preference_counts(0.01), 6);
  std::size_t pin = 0, pout = 0;
  for (const auto& r : mix) (r.source == "in_distribution" ? pin : pout)++;

  const bool ok = survivors == 0 && ns == nm && ns == 90 && pin == 100 && pout == 50;
  return {ok, std::to_string(survivors) + " identifier survivors in " + std::to_string(planted.size()) +
                  " records; dialogue mix " + std::to_string(ns) + ":" + std::to_string(nm) + "; preference mix " +
                  std::to_string(pin) + ":" + std::to_string(pout)};
}

// --- 10 ----------------------------------------------------------------------

using annotation::AnnotationStore;
using annotation::Preference;
using annotation::TaskId;
using annotation::TaskStatus;

annotation::Vote make_vote(TaskId id, const std::string& who, Preference p, const std::string& dim) {
  annotation::Vote v;
  v.task_id = id;
  v.annotator = who;
  v.preferred = p;
  v.decisive_dimension = dim;
  return v;
}

annotation::Resolution make_resolution(TaskId id, const std::string& who, Preference p) {
  annotation::Resolution r;
  r.task_id = id;
  r.expert = who;
  r.preferred = p;
  r.decisive_dimension = "safety";
  r.note = "reviewed";
  return r;
}

std::vector<annotation::PairInput> task_pairs(int n, int offset = 0) {
  std::vector<annotation::PairInput> out;
  for (int i = 0; i < n; ++i) {
    const auto k = std::to_string(offset + i);
    out.push_back({"context " + k, "first answer " + k, "second answer " + k, std::nullopt, "in_distribution"});
  }
  return out;
}

// Expected outcome per scripted task, by the pair of votes cast.
bool scripted_driver(std::string& detail) {
  AnnotationStore::Options o;
  o.seed = 3;
  AnnotationStore s(o);
  s.create_tasks(task_pairs(5));
  // task: alice, bob votes (canonical labels)
  const std::map<TaskId, std::pair<Preference, Preference>> plan = {
      {1, {Preference::kA, Preference::kA}},      // agree
      {2, {Preference::kB, Preference::kB}},      // agree
      {3, {Preference::kA, Preference::kB}},      // disagree, expert picks B
      {4, {Preference::kTie, Preference::kTie}},  // tie: resolved, never exported
      {5, {Preference::kA, Preference::kTie}},    // disagree, expert says tie
  };
  for (const std::string who : {"alice", "bob"}) {
    while (auto t = s.next_task(who)) {
      const auto& [a, b] = plan.at(t->id);
      s.submit_vote(make_vote(t->id, who, who == "alice" ? a : b, "professionalism"));
    }
  }
  bool ok = s.get(3)->status == TaskStatus::kConflicted && s.get(5)->status == TaskStatus::kConflicted &&
            s.get(4)->status == TaskStatus::kResolved && s.conflicted().size() == 2;
  // Before expert review only the agreed non-tie tasks export.
  ok &= s.export_preferences().size() == 2;
  s.resolve(make_resolution(3, "erin", Preference::kB));
  s.resolve(make_resolution(5, "erin", Preference::kTie));
  const auto recs = s.export_preferences();
  std::set<std::string> contexts;
  for (const auto& r : recs) contexts.insert(r.context);
  ok &= contexts == std::set<std::string>{"context 0", "context 1", "context 2"};
  for (const auto& r : recs) {
    if (r.context == "context 0") ok &= r.chosen == "first answer 0" && r.resolution == "agreed";
    if (r.context == "context 1") ok &= r.chosen == "second answer 1";
    if (r.context == "context 2") ok &= r.chosen == "second answer 2" && r.resolution == "expert_resolved";
  }
  for (const auto& t : s.tasks()) ok &= t.status == TaskStatus::kResolved;
  ok &= s.check_invariants().empty();
  detail = "scripted export " + std::to_string(recs.size()) + " records (expected 3)";
  return ok;
}

std::size_t fuzz_violations(std::size_t& exported_unresolved) {
  std::mt19937_64 rng(2025);
  const std::vector<std::string> people = {"a1", "a2", "a3", "a4", "e1", "e2"};
  const std::vector<std::string> dims = {"safety", "professionalism", "fluency", "tone"};
  std::size_t violations = 0;
  for (int seq = 0; seq < 10000; ++seq) {
    AnnotationStore::Options o;
    o.seed = static_cast<std::uint64_t>(seq);
    AnnotationStore s(o);
    s.create_tasks(task_pairs(1 + static_cast<int>(rng() % 4)));
    const int calls = 5 + static_cast<int>(rng() % 30);
    for (int c = 0; c < calls; ++c) {
      const std::string& who = people[rng() % people.size()];
      const TaskId id = 1 + rng() % (s.size() + 1);
      const auto p = static_cast<Preference>(rng() % 3);
      try {
        switch (rng() % 5) {
          case 0: s.next_task(who); break;
          case 1:
          case 2: s.submit_vote(make_vote(id, who, p, dims[rng() % dims.size()])); break;
          case 3: s.resolve(make_resolution(id, who, p)); break;
          case 4: s.create_tasks(task_pairs(1, 100 + c)); break;
        }
      } catch (const Error&) {
      }
    }
    violations += s.check_invariants().size();
    std::set<std::string> resolved_non_tie;
    for (const auto& t : s.tasks()) {
      if (t.status != TaskStatus::kResolved) continue;
      resolved_non_tie.insert(t.context);
    }
    for (const auto& r : s.export_preferences()) exported_unresolved += resolved_non_tie.count(r.context) == 0;
  }
  return violations;
}

// A child process votes through a logged store and reports each
// acknowledged vote over a pipe, then is killed mid-run. Replay must hold
// every acknowledged vote.
bool crash_replay(std::string& detail) {
  const fs::path log = fs::temp_directory_path() / ("prefalign_accept_" + std::to_string(::getpid()) + ".log");
  fs::remove(log);
  {
    AnnotationStore::Options o;
    o.log_path = log;
    AnnotationStore s(o);
    s.create_tasks(task_pairs(400));
  }
  int fds[2];
  if (::pipe(fds) != 0) return false;
  const pid_t child = ::fork();
  if (child == 0) {
    ::close(fds[0]);
    AnnotationStore::Options o;
    o.log_path = log;
    AnnotationStore s(o);
    for (int round = 0;; ++round) {
      for (const std::string who : {"ann1", "ann2", "ann3"}) {
        auto t = s.next_task(who);
        if (!t) ::_exit(0);
        s.submit_vote(make_vote(t->id, who, t->id % 4 == 0 ? Preference::kB : Preference::kA, "fluency"));
        const std::string line = std::to_string(t->id) + " " + who + "\n";
        if (::write(fds[1], line.data(), line.size()) < 0) ::_exit(3);
      }
    }
  }
  ::close(fds[1]);
  std::string acked;
  char buf[4096];
  bool killed = false;
  while (true) {
    const ssize_t n = ::read(fds[0], buf, sizeof buf);
    if (n <= 0) break;
    acked.append(buf, static_cast<std::size_t>(n));
    if (!killed && std::count(acked.begin(), acked.end(), '\n') >= 150) {
      ::kill(child, SIGKILL);
      killed = true;
    }
  }
  ::close(fds[0]);
  int status = 0;
  ::waitpid(child, &status, 0);
  // Also leave a half-written record behind, as a crash inside write() would.
  std::ofstream(log, std::ios::app | std::ios::binary) << R"({"type":"vote","task_id":9,"annota)";

  AnnotationStore::Options o;
  o.log_path = log;
  AnnotationStore back(o);
  std::istringstream in(acked);
  TaskId id = 0;
  std::string who;
  std::size_t total = 0, lost = 0;
  while (in >> id >> who) {
    ++total;
    const auto t = back.get(id);
    lost += !(t && t->has_voted(who));
  }
  fs::remove(log);
  detail = "crash replay: " + std::to_string(lost) + " of " + std::to_string(total) + " acknowledged votes lost";
  return killed && total >= 150 && lost == 0 && back.check_invariants().empty();
}

Outcome annotation_state_machine() {
  std::string scripted, crash;
  const bool a = scripted_driver(scripted);
  std::size_t unresolved_exports = 0;
  const std::size_t violations = fuzz_violations(unresolved_exports);
  const bool c = crash_replay(crash);
  return {a && violations == 0 && unresolved_exports == 0 && c,
          scripted + "; fuzz 10000 sequences: " + std::to_string(violations) + " invariant violations, " +
              std::to_string(unresolved_exports) + " unresolved exports; " + crash};
}

// --- 11 ----------------------------------------------------------------------

Outcome judge_protocol() {
  std::ifstream in(fs::path(PREFALIGN_GOLDEN_DIR) / "judge_prompt.txt", std::ios::binary);
  std::stringstream golden;
  golden << in.rdbuf();
  const std::string rendered = eval::render_judge_prompt("q", "a1", "a2");
  const bool golden_ok = rendered == golden.str() && rendered.find("Output as: Win, Lose, Tie.") != std::string::npos;

  bool tokens_ok = eval::parse_verdict("Win") == eval::Verdict::kWin && eval::parse_verdict("Lose") == eval::Verdict::kLose &&
                   eval::parse_verdict("Tie") == eval::Verdict::kTie;
  for (const std::string bad : {"", "Draw", "Win Lose", "winner", "A", "Tie or Win", "Output: none"}) {
    try {
      eval::parse_verdict(bad);
      tokens_ok = false;
    } catch (const Error& e) {
      tokens_ok &= e.code() == ErrorCode::kParse;
    }
  }

  std::mt19937_64 g(11);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<eval::MatchResult> rs(1 + g() % 200);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      rs[i].item_id = std::to_string(i);
      if (g() % 10 != 0 || i == 0) rs[i].verdict = static_cast<eval::Verdict>(g() % 3);
    }
    const auto rep = eval::aggregate(rs);
    worst = std::max(worst, std::abs(rep.win_rate + rep.tie_rate + rep.loss_rate - 1.0));
  }
  return {golden_ok && tokens_ok && worst <= 1e-12,
          std::string("golden prompt ") + (golden_ok ? "matches" : "DIFFERS") + "; verdict tokens " +
              (tokens_ok ? "exactly Win/Lose/Tie" : "WRONG") + "; max |rates sum - 1| " + fmt("%.1e", worst) +
              " over 1000 reports (<= 1e-12)"};
}

// --- 12 ----------------------------------------------------------------------

// Responses are the word "ok" repeated 1 to 4 times; the true reward of a
// response is its token count. Preferences are Bradley-Terry draws under
// that reward.
Outcome directional_ablation() {
  std::vector<std::string> responses;
  for (int k = 1; k <= 4; ++k) {
    std::string s = "ok";
    for (int i = 1; i < k; ++i) s += " ok";
    responses.push_back(s + ".");
  }
  auto context = [](int c) { return "ask " + std::to_string(c); };
  std::vector<NeuralSftExample> sft_train, sft_val;
  for (int c = 0; c < 40; ++c)
    for (const auto& r : responses) (c < 36 ? sft_train : sft_val).push_back(neural_sft_example(context(c), r));

  NeuralConfig nc;
  nc.context_window = 64;
  NeuralPolicy policy(nc, 1);
  TrainConfig sft;
  sft.lr_max = 0.01;
  sft.lr_min = 1e-4;
  sft.total_steps = 600;
  sft.batch_size = 16;
  sft.seed = 3;
  sft.eval_interval = 100;
  run_sft(policy, std::span<const NeuralSftExample>(sft_train), std::span<const NeuralSftExample>(sft_val), sft);
  Checkpoint pre{AnyPolicy(policy)};
  pre.stage = "sft";

  Rng rng(11);
  std::vector<NeuralPair> train, val;
  std::vector<std::string> training_contexts;
  for (int c = 0; c < 40; ++c) {
    training_contexts.push_back(context(c));
    for (std::size_t i = 0; i < responses.size(); ++i)
      for (std::size_t j = i + 1; j < responses.size(); ++j) {
        const auto ri = static_cast<double>(Vocabulary::response_tokens(responses[i]).size());
        const auto rj = static_cast<double>(Vocabulary::response_tokens(responses[j]).size());
        const bool j_wins = rng.bernoulli(1.0 / (1.0 + std::exp(ri - rj)));
        const auto& chosen = j_wins ? responses[j] : responses[i];
        const auto& rejected = j_wins ? responses[i] : responses[j];
        (c < 36 ? train : val)
            .push_back({Vocabulary::prompt_tokens(context(c)), Vocabulary::response_tokens(chosen),
                        Vocabulary::response_tokens(rejected), 1.0});
      }
  }
  const auto reference = snapshot_reference(policy, "sft");
  TrainConfig dpo;
  dpo.stage = Stage::kDpo;
  dpo.beta = 0.1;
  dpo.lr_max = 0.001;
  dpo.lr_min = 1e-5;
  dpo.total_steps = 200;
  dpo.batch_size = 16;
  dpo.seed = 4;
  dpo.eval_interval = 50;
  run_dpo(policy, reference, std::span<const NeuralPair>(train), std::span<const NeuralPair>(val), dpo);
  Checkpoint post{AnyPolicy(policy)};
  post.stage = "dpo";

  std::vector<eval::EvalPrompt> prompts;
  for (int c = 100; c < 160; ++c) prompts.push_back({std::to_string(c), context(c)});
  eval::LocalKeywordJudge judge({"ok"});
  eval::AblationOptions opts;
  opts.training_contexts = training_contexts;
  const auto res = eval::ablation_compare(pre, post, prompts, judge, 7, opts);
  const auto& r = res.report;
  return {r.mean_length_a > r.mean_length_b && r.win_rate > 0.5,
          "post-DPO mean length " + fmt("%.2f", r.mean_length_a) + " vs pre " + fmt("%.2f", r.mean_length_b) +
              "; post win rate " + fmt("%.3f", r.win_rate) + fmt(" (tie %.3f", r.tie_rate) +
              fmt(", loss %.3f) over ", r.loss_rate) + std::to_string(r.judged) + " held-out prompts (> 0.5)"};
}

struct Criterion {
  int number;
  const char* name;
  double time_limit_s;  // 0: none
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "zero-margin anchor", 1, zero_margin_anchor},
      {2, "gradient fidelity", 30, gradient_fidelity},
      {3, "closed-form recovery", 60, closed_form_recovery},
      {4, "sampled-preference consistency", 300, sampled_consistency},
      {5, "reward shift invariance", 0, shift_invariance},
      {6, "beta-sweep monotonicity", 0, beta_sweep_monotone},
      {7, "SFT memorization", 300, sft_memorization},
      {8, "LoRA contracts", 0, lora_contracts},
      {9, "pipeline exactness", 0, pipeline_exactness},
      {10, "annotation state machine", 0, annotation_state_machine},
      {11, "judge protocol", 0, judge_protocol},
      {12, "directional ablation", 300, directional_ablation},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2f s", secs);
    if (c.time_limit_s > 0) {
      timing += fmt(" (limit %g s)", c.time_limit_s);
      if (secs >= c.time_limit_s) o.pass = false;
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.number << " " << c.name << ": " << o.detail << " ["
              << timing << "]" << std::endl;
    failed += !o.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion(s) failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
