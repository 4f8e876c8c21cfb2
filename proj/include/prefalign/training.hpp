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

// Supervised fine-tuning and preference-optimization steps over any
// TrainablePolicy, with AdamW, cosine learning-rate annealing, gradient
// accumulation and a guard against exploding gradients.

#ifndef PREFALIGN_TRAINING_HPP_
#define PREFALIGN_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/align_math.hpp"
#include "prefalign/error.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/reference.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

enum class Stage { kSft, kDpo };

inline std::string stage_name(Stage s) { return s == Stage::kSft ? "sft" : "dpo"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "sft") return Stage::kSft;
  if (s == "dpo") return Stage::kDpo;
  fail(ErrorCode::kInvalidArgument, "unknown training stage '" + s + "'");
}

struct TrainConfig {
  Stage stage = Stage::kSft;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  int total_steps = 1000;
  int batch_size = 8;
  int accumulation_steps = 1;
  double beta = kDefaultBeta;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  double validation_fraction = 0.10;
  int lora_rank = 0;  // 0 = full fine-tune
  double lora_scaling = 1.0;
  double explosion_threshold = 1e3;
  double explosion_lr_decay = 0.9;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_interval = 100;

  void validate() const {
    require(lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max, "need 0 <= lr_min <= lr_max, lr_max > 0");
    require(total_steps > 0, "total_steps must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(accumulation_steps > 0, "accumulation_steps must be positive");
    if (stage == Stage::kDpo) (void)Beta{beta};
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    require(validation_fraction > 0.0 && validation_fraction < 1.0, "validation_fraction must lie in (0, 1)");
    require(lora_rank >= 0, "lora_rank must be non-negative");
    require(explosion_threshold > 0.0, "explosion_threshold must be positive");
    require(explosion_lr_decay > 0.0 && explosion_lr_decay <= 1.0, "explosion_lr_decay must lie in (0, 1]");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "Adam betas must lie in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(eval_interval > 0, "eval_interval must be positive");
  }
};

// lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2
inline double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    fail(ErrorCode::kInvalidArgument, "cosine_lr step " + std::to_string(step) + " outside [0, " +
                                          std::to_string(total_steps) + "]");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

// --- AdamW -----------------------------------------------------------------

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline OptimizerState make_optimizer_state(const std::vector<ParamRef>& params, const TrainConfig& cfg) {
  OptimizerState s;
  s.weight_decay = cfg.weight_decay;
  s.beta1 = cfg.adam_beta1;
  s.beta2 = cfg.adam_beta2;
  s.eps = cfg.adam_eps;
  for (const auto& p : params) {
    s.first_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    s.second_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }
  return s;
}

// Decoupled weight decay: theta *= (1 - lr wd), then the bias-corrected Adam
// step theta -= lr m_hat / (sqrt(v_hat) + eps).
inline void adamw_update(const std::vector<ParamRef>& params, const GradientSet& grads, OptimizerState& s,
                         double lr) {
  require(params.size() == grads.size() && params.size() == s.first_moment.size(),
          "optimizer state does not match parameters");
  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& theta = *params[i].value;
    Matrix& m = s.first_moment[i];
    Matrix& v = s.second_moment[i];
    const Matrix& g = grads[i];
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
    if (s.weight_decay != 0.0) theta *= (1.0 - lr * s.weight_decay);
    const auto denom = (v.array() / bc2).sqrt() + s.eps;
    theta.array() -= lr * (m.array() / bc1) / denom;
  }
}

// --- exploding-gradient guard ---------------------------------------------

enum class GuardAction { kProceed, kHalveLossAndDecayLr, kSkip };

inline const char* guard_action_name(GuardAction a) {
  switch (a) {
    case GuardAction::kProceed: return "proceed";
    case GuardAction::kHalveLossAndDecayLr: return "scale_loss_half_and_decay_lr";
    case GuardAction::kSkip: return "skip_non_finite";
  }
  return "unknown";
}

inline GuardAction explosion_guard(double loss, double grad_norm, const TrainConfig& cfg) {
  if (!std::isfinite(loss) || !std::isfinite(grad_norm)) return GuardAction::kSkip;
  if (grad_norm > cfg.explosion_threshold) return GuardAction::kHalveLossAndDecayLr;
  return GuardAction::kProceed;
}

// --- training state and steps -----------------------------------------------

struct TrainState {
  OptimizerState optimizer;
  double lr_max = 0.0;  // decays after guard events
  long step = 0;
  int explosion_events = 0;
};

struct StepResult {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  GuardAction action = GuardAction::kProceed;
};

template <class Context, class Response>
struct SftExample {
  Context context{};
  Response response{};
};

template <class P>
using SftExampleFor = SftExample<typename P::context_type, typename P::response_type>;

template <TrainablePolicy P>
TrainState init_train_state(P& policy, const TrainConfig& cfg) {
  cfg.validate();
  if constexpr (requires { policy.set_dropout(cfg.dropout); }) policy.set_dropout(cfg.dropout);
  TrainState st;
  st.optimizer = make_optimizer_state(policy.trainable_parameters(), cfg);
  st.lr_max = cfg.lr_max;
  return st;
}

// Mean negative log-likelihood of the responses (contexts are conditioning
// only and contribute nothing).
template <ScoringPolicy P>
double sft_loss(const P& policy, std::span<const SftExampleFor<P>> batch) {
  require(!batch.empty(), "SFT batch must be non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      total -= policy.log_prob(batch[i].context, batch[i].response);
    } catch (const Error& e) {
      throw Error(e.code(), "example " + std::to_string(i) + ": " + e.what());
    }
  }
  return total / static_cast<double>(batch.size());
}

template <ScoringPolicy P>
double sft_loss(const P& policy, const std::vector<SftExampleFor<P>>& batch) {
  return sft_loss(policy, std::span<const SftExampleFor<P>>(batch));
}

namespace detail {

template <class Item, class Fn>
void for_each_micro_batch(std::span<const Item> batch, int accumulation_steps, Fn&& fn) {
  const std::size_t n = batch.size();
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(accumulation_steps), n);
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t end = begin + (n - begin) / (chunks - c);
    fn(batch.subspan(begin, end - begin));
    begin = end;
  }
}

// Loss and gradient of the SFT objective; gradient accumulated into grads.
template <TrainablePolicy P>
double sft_loss_and_grad(const P& policy, std::span<const SftExampleFor<P>> batch, int accumulation_steps,
                         const ForwardOptions& opts, GradientSet& grads) {
  require(!batch.empty(), "SFT batch must be non-empty");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for_each_micro_batch(batch, accumulation_steps, [&](std::span<const SftExampleFor<P>> micro) {
    for (const auto& ex : micro) {
      const auto trace = policy.forward(ex.context, ex.response, opts);
      loss -= trace.log_prob * inv_n;
      policy.backward(trace, -inv_n, grads);
    }
  });
  return loss;
}

template <TrainablePolicy P, class R>
double dpo_loss_and_grad(const P& policy, const R& reference, std::span<const PairFor<P>> batch, Beta beta,
                         int accumulation_steps, const ForwardOptions& opts, GradientSet& grads) {
  require(!batch.empty(), "DPO batch must be non-empty");
  double weight_sum = 0.0;
  for (const auto& pair : batch) weight_sum += pair.weight;
  require(weight_sum > 0.0, "DPO batch weights must sum to a positive value");
  const double b = beta.value();
  double loss = 0.0;
  std::size_t index = 0;
  for_each_micro_batch(batch, accumulation_steps, [&](std::span<const PairFor<P>> micro) {
    for (const auto& pair : micro) {
      const auto tw = policy.forward(pair.context, pair.chosen, opts);
      const auto tl = policy.forward(pair.context, pair.rejected, opts);
      const double rw = reference.log_prob(pair.context, pair.chosen);
      const double rl = reference.log_prob(pair.context, pair.rejected);
      const PairLogRatios ratios{tw.log_prob - rw, tl.log_prob - rl};
      if (!std::isfinite(ratios.chosen) || !std::isfinite(ratios.rejected)) {
        fail(ErrorCode::kNumeric, "pair " + std::to_string(index) + " has a non-finite log-ratio");
      }
      const double margin = dpo_margin(b, ratios);
      const double w = pair.weight / weight_sum;
      loss += w * dpo_pair_loss(margin);
      // d/dmargin softplus(-margin) = -sigmoid(-margin)
      const double s = sigmoid(-margin);
      policy.backward(tw, -w * b * s, grads);
      policy.backward(tl, w * b * s, grads);
      ++index;
    }
  });
  return loss;
}

template <TrainablePolicy P>
StepResult apply_step(P& policy, GradientSet& grads, double loss, const TrainConfig& cfg, TrainState& st) {
  StepResult r;
  r.loss = loss;
  r.grad_norm = gradient_norm(grads);
  r.action = explosion_guard(loss, r.grad_norm, cfg);
  const long schedule_step = std::min<long>(st.step, cfg.total_steps);
  r.lr = cosine_lr(schedule_step, cfg.total_steps, st.lr_max, std::min(cfg.lr_min, st.lr_max));
  if (r.action == GuardAction::kSkip) {
    ++st.explosion_events;
  } else {
    if (r.action == GuardAction::kHalveLossAndDecayLr) {
      for (auto& g : grads) g *= 0.5;
    }
    adamw_update(policy.trainable_parameters(), grads, st.optimizer, r.lr);
    if (r.action == GuardAction::kHalveLossAndDecayLr) {
      st.lr_max *= cfg.explosion_lr_decay;
      ++st.explosion_events;
    }
  }
  r.step = st.step;
  ++st.step;
  return r;
}

}  // namespace detail

// One SFT optimizer step over `batch` (the effective batch; it is split into
// cfg.accumulation_steps micro-batches whose gradients are summed).
template <TrainablePolicy P>
StepResult train_step(P& policy, std::span<const SftExampleFor<P>> batch, const TrainConfig& cfg, TrainState& st) {
  require(cfg.stage == Stage::kSft, "SFT batch given to a non-SFT configuration");
  GradientSet grads = policy.make_gradients();
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(st.step)));
  const ForwardOptions opts{true, &rng};
  const double loss = detail::sft_loss_and_grad(policy, batch, cfg.accumulation_steps, opts, grads);
  return detail::apply_step(policy, grads, loss, cfg, st);
}

// One DPO optimizer step. The reference is a frozen snapshot.
template <TrainablePolicy P>
StepResult train_step(P& policy, const ReferenceSnapshot<P>& reference, std::span<const PairFor<P>> batch,
                      const TrainConfig& cfg, TrainState& st) {
  require(cfg.stage == Stage::kDpo, "preference batch given to a non-DPO configuration");
  GradientSet grads = policy.make_gradients();
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(st.step)));
  const ForwardOptions opts{true, &rng};
  const double loss =
      detail::dpo_loss_and_grad(policy, reference, batch, Beta{cfg.beta}, cfg.accumulation_steps, opts, grads);
  return detail::apply_step(policy, grads, loss, cfg, st);
}

// --- checkpoint selection ---------------------------------------------------

struct ValidationPoint {
  long step = 0;
  double loss = 0.0;
};

// Step with the lowest validation loss; ties go to the later step.
inline long select_checkpoint(std::span<const ValidationPoint> history) {
  require(!history.empty(), "validation history is empty");
  const ValidationPoint* best = &history[0];
  for (const auto& p : history) {
    if (p.loss < best->loss || (p.loss == best->loss && p.step >= best->step)) best = &p;
  }
  return best->step;
}

inline long select_checkpoint(const std::vector<ValidationPoint>& history) {
  return select_checkpoint(std::span<const ValidationPoint>(history));
}

// --- gradient checking ------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t components = 0;
  std::string worst_parameter;
};

struct GradCheckOptions {
  double epsilon = 1e-6;
  // Denominator floor: relative error is |a - n| / max(|a|, |n|, floor).
  double relative_floor = 1e-3;
  // Check at most this many components per tensor (evenly strided); 0 = all.
  std::size_t max_components_per_tensor = 0;
};

// Compares the analytic gradient (loss_fn with a non-null gradient set) with
// central finite differences of loss_fn evaluated without gradients.
inline GradCheckResult grad_check(const std::function<double(GradientSet*)>& loss_fn,
                                  const std::vector<ParamRef>& params, GradientSet analytic,
                                  const GradCheckOptions& opts = {}) {
  zero_gradients(analytic);
  loss_fn(&analytic);
  GradCheckResult out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& theta = *params[t].value;
    const Eigen::Index n = theta.size();
    Eigen::Index stride = 1;
    if (opts.max_components_per_tensor > 0 && static_cast<std::size_t>(n) > opts.max_components_per_tensor) {
      stride = (n + static_cast<Eigen::Index>(opts.max_components_per_tensor) - 1) /
               static_cast<Eigen::Index>(opts.max_components_per_tensor);
    }
    for (Eigen::Index i = 0; i < n; i += stride) {
      double& v = theta.data()[i];
      const double saved = v;
      v = saved + opts.epsilon;
      const double up = loss_fn(nullptr);
      v = saved - opts.epsilon;
      const double down = loss_fn(nullptr);
      v = saved;
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double a = analytic[t].data()[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.relative_floor});
      out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst_parameter = params[t].name + "[" + std::to_string(i) + "]";
      }
      ++out.components;
    }
  }
  return out;
}

}  // namespace prefalign

#endif  // PREFALIGN_TRAINING_HPP_
