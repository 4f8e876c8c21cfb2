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


#ifndef PREFALIGN_RUNNER_HPP_
#define PREFALIGN_RUNNER_HPP_

#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/align_math.hpp"
#include "prefalign/reference.hpp"
#include "prefalign/training.hpp"

namespace prefalign {

// Receives one JSON object per training step (and per validation pass).
using MetricsSink = std::function<void(const nlohmann::json&)>;

// Which validated checkpoint a run leaves behind.
enum class Selection { kBestValidation, kFinal };

inline Selection parse_selection(const std::string& s) {
  if (s == "best") return Selection::kBestValidation;
  if (s == "final") return Selection::kFinal;
  fail(ErrorCode::kInvalidArgument, "checkpoint selection must be best or final, got '" + s + "'");
}

struct RunResult {
  std::vector<ValidationPoint> history;
  long best_step = -1;
  double best_validation_loss = 0.0;
  double last_train_loss = 0.0;
  TrainState state;  // state at the selected checkpoint
};

// Seeded minibatch order: each epoch is a fresh permutation; batches never
// straddle epochs. A batch size at least the corpus size means full batch in
// input order.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(std::min(batch_size, n)), seed_(seed) {
    require(n > 0, "training set is empty");
    require(batch_size > 0, "batch_size must be positive");
  }

  std::vector<std::size_t> next() {
    if (batch_ == n_) {
      std::vector<std::size_t> all(n_);
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    if (pos_ + batch_ > order_.size()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), 0);
      Rng rng(derive_seed(seed_, 0x6261746368ULL + epoch_++));
      rng.shuffle(order_);
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

namespace detail {

inline nlohmann::json step_record(const StepResult& r, const TrainState& st) {
  return nlohmann::json{{"event", "step"},
                        {"step", r.step},
                        {"loss", std::isfinite(r.loss) ? nlohmann::json(r.loss) : nlohmann::json(nullptr)},
                        {"grad_norm", std::isfinite(r.grad_norm) ? nlohmann::json(r.grad_norm) : nlohmann::json(nullptr)},
                        {"lr", r.lr},
                        {"guard", guard_action_name(r.action)},
                        {"explosion_events", st.explosion_events}};
}

// Runs cfg.total_steps steps, validating every eval_interval steps and after
// the last one, and leaves `policy` at the checkpoint with the lowest
// validation loss (or at the last step).
template <TrainablePolicy P, class Item, class StepFn, class ValFn>
RunResult run_loop(P& policy, std::span<const Item> train, const TrainConfig& cfg, StepFn&& step_fn,
                   ValFn&& val_fn, const MetricsSink& sink, Selection selection) {
  RunResult result;
  TrainState st = init_train_state(policy, cfg);
  BatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed);
  std::optional<P> best;
  std::vector<Item> batch;
  for (int s = 0; s < cfg.total_steps; ++s) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(train[i]);
    const StepResult r = step_fn(policy, std::span<const Item>(batch), st);
    result.last_train_loss = r.loss;
    if (sink) sink(step_record(r, st));
    const bool last = s + 1 == cfg.total_steps;
    if ((s + 1) % cfg.eval_interval == 0 || last) {
      const double v = val_fn(policy);
      const ValidationPoint point{st.step, v};
      result.history.push_back(point);
      if (sink) sink(nlohmann::json{{"event", "validation"}, {"step", st.step}, {"validation_loss", v}});
      const bool take = selection == Selection::kFinal ? last : select_checkpoint(result.history) == st.step;
      if (take) {
        best = policy;
        result.state = st;
        result.best_step = st.step;
        result.best_validation_loss = v;
      }
    }
  }
  if (best) policy = std::move(*best);
  if (sink) {
    sink(nlohmann::json{{"event", "selected"},
                        {"step", result.best_step},
                        {"validation_loss", result.best_validation_loss}});
  }
  return result;
}

}  // namespace detail

template <TrainablePolicy P>
RunResult run_sft(P& policy, std::span<const SftExampleFor<P>> train, std::span<const SftExampleFor<P>> validation,
                  const TrainConfig& cfg, const MetricsSink& sink = {},
                  Selection selection = Selection::kBestValidation) {
  require(cfg.stage == Stage::kSft, "run_sft needs an SFT configuration");
  require(!validation.empty(), "validation set is empty");
  return detail::run_loop<P, SftExampleFor<P>>(
      policy, train, cfg,
      [&](P& p, std::span<const SftExampleFor<P>> b, TrainState& st) { return train_step(p, b, cfg, st); },
      [&](const P& p) { return sft_loss(p, validation); }, sink, selection);
}

template <TrainablePolicy P>
RunResult run_dpo(P& policy, const ReferenceSnapshot<P>& reference, std::span<const PairFor<P>> train,
                  std::span<const PairFor<P>> validation, const TrainConfig& cfg, const MetricsSink& sink = {},
                  Selection selection = Selection::kBestValidation) {
  require(cfg.stage == Stage::kDpo, "run_dpo needs a DPO configuration");
  require(!validation.empty(), "validation set is empty");
  const Beta beta{cfg.beta};
  return detail::run_loop<P, PairFor<P>>(
      policy, train, cfg,
      [&](P& p, std::span<const PairFor<P>> b, TrainState& st) { return train_step(p, reference, b, cfg, st); },
      [&](const P& p) { return dpo_loss(p, reference, validation, beta); }, sink, selection);
}

}  // namespace prefalign

#endif  // PREFALIGN_RUNNER_HPP_
