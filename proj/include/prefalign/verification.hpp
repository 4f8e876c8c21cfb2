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


#ifndef PREFALIGN_VERIFICATION_HPP_
#define PREFALIGN_VERIFICATION_HPP_

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "prefalign/align_math.hpp"
#include "prefalign/neural_policy.hpp"
#include "prefalign/reference.hpp"
#include "prefalign/reward_fixture.hpp"
#include "prefalign/training.hpp"

namespace prefalign {

// Optimizer settings for fitting a tabular policy to a weighted pair set.
// The logit displacement needed to reach the optimum scales with 1/beta, so
// the step size does too; no weight decay, so the fixed point is exact.
inline TrainConfig tabular_dpo_config(double beta, int total_steps = 6000) {
  TrainConfig cfg;
  cfg.stage = Stage::kDpo;
  cfg.beta = beta;
  cfg.lr_max = 0.002 / beta;
  cfg.lr_min = cfg.lr_max * 1e-3;
  cfg.total_steps = total_steps;
  cfg.weight_decay = 0.0;
  cfg.dropout = 0.0;
  cfg.eval_interval = total_steps;
  return cfg;
}

struct TabularFit {
  TabularPolicy policy;
  std::vector<double> losses;  // full-batch loss before each step
};

// Full-batch DPO from the reference on a fixed pair set.
inline TabularFit fit_tabular_dpo(const TabularPolicy& reference, const std::vector<TabularPair>& pairs,
                                  const TrainConfig& cfg) {
  TabularFit out{reference, {}};
  const auto ref = snapshot_reference(reference, "reference");
  TrainState st = init_train_state(out.policy, cfg);
  out.losses.reserve(static_cast<std::size_t>(cfg.total_steps));
  for (int s = 0; s < cfg.total_steps; ++s) {
    out.losses.push_back(train_step(out.policy, ref, std::span<const TabularPair>(pairs), cfg, st).loss);
  }
  return out;
}

// Ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length samples of size >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  require(saa > 0.0 && sbb > 0.0, "spearman undefined for a constant sample");
  return sab / std::sqrt(saa * sbb);
}

// For each context, Spearman correlation between implicit-reward differences
// and true reward differences over all unordered response pairs.
inline std::vector<double> implicit_reward_rank_correlation(const TabularPolicy& policy, const TabularPolicy& reference,
                                                            const RewardTable& reward, Beta beta) {
  std::vector<double> out;
  const std::size_t ny = policy.num_responses();
  for (std::size_t x = 0; x < policy.num_contexts(); ++x) {
    std::vector<double> implied, truth;
    for (std::size_t i = 0; i < ny; ++i)
      for (std::size_t j = i + 1; j < ny; ++j) {
        implied.push_back(implicit_reward(policy, reference, x, i, beta) -
                          implicit_reward(policy, reference, x, j, beta));
        truth.push_back(reward(x, i) - reward(x, j));
      }
    out.push_back(spearman(implied, truth));
  }
  return out;
}

// Mean over contexts of KL(pi* || pi_ref) for each beta.
inline std::vector<double> beta_sweep(const TabularPolicy& reference, const RewardTable& reward,
                                      std::span<const double> betas) {
  std::vector<double> out;
  for (double b : betas) {
    const TabularPolicy opt = optimal_policy(reference, reward, Beta{b});
    double total = 0.0;
    for (std::size_t x = 0; x < reference.num_contexts(); ++x) total += kl_divergence(opt, reference, x);
    out.push_back(total / static_cast<double>(reference.num_contexts()));
  }
  return out;
}

inline const std::vector<double>& default_beta_grid() {
  static const std::vector<double> grid = {0.01, 0.1, 0.5, 1.0};
  return grid;
}

// --- gradient-check suites ----------------------------------------------------

// DPO on the exact pair set at a random policy near the fixture's reference.
inline GradCheckResult tabular_dpo_gradcheck(const RewardFixture& f, double beta, std::uint64_t seed) {
  TabularPolicy p = f.reference;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.mutable_logits().size(); ++i) p.mutable_logits().data()[i] += rng.normal();
  const auto ref = snapshot_reference(f.reference, "reference");
  const auto pairs = bradley_terry_pair_set(f.reward, f.context_distribution);
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    return detail::dpo_loss_and_grad(p, ref, std::span<const TabularPair>(pairs), Beta{beta}, 1, ForwardOptions{},
                                     g ? *g : local);
  };
  return grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
}

inline GradCheckResult tabular_sft_gradcheck(const RewardFixture& f, std::uint64_t seed) {
  TabularPolicy p = f.reference;
  Rng rng(seed);
  std::vector<SftExampleFor<TabularPolicy>> data;
  for (int i = 0; i < 16; ++i) {
    data.push_back({static_cast<std::size_t>(rng.below(p.num_contexts())), static_cast<std::size_t>(rng.below(p.num_responses()))});
  }
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    return detail::sft_loss_and_grad(p, std::span<const SftExampleFor<TabularPolicy>>(data), 1, ForwardOptions{},
                                     g ? *g : local);
  };
  return grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
}

// A deliberately tiny transformer so every parameter can be perturbed.
inline NeuralConfig gradcheck_neural_config() {
  NeuralConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ff_mult = 2;
  cfg.context_window = 32;
  cfg.dropout = 0.0;
  cfg.begin_response = 4;
  cfg.end_response = 5;
  return cfg;
}

inline GradCheckResult neural_dpo_gradcheck(std::uint64_t seed) {
  const NeuralConfig cfg = gradcheck_neural_config();
  NeuralPolicy p(cfg, seed);
  const auto ref = snapshot_reference(NeuralPolicy(cfg, seed + 1));
  const std::vector<PairFor<NeuralPolicy>> batch = {{{0, 1, 2}, {3, 3, 5}, {1, 5}, 1.0},
                                                    {{2, 2}, {0, 5}, {1, 2, 3, 5}, 0.5}};
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    return detail::dpo_loss_and_grad(p, ref, std::span<const PairFor<NeuralPolicy>>(batch), Beta{0.5}, 1,
                                     ForwardOptions{}, g ? *g : local);
  };
  return grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
}

inline GradCheckResult neural_sft_gradcheck(std::uint64_t seed) {
  const NeuralConfig cfg = gradcheck_neural_config();
  NeuralPolicy p(cfg, seed);
  const std::vector<SftExampleFor<NeuralPolicy>> batch = {{{0, 1, 2}, {3, 3, 5}}, {{2}, {1, 0, 2, 5}}};
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    return detail::sft_loss_and_grad(p, std::span<const SftExampleFor<NeuralPolicy>>(batch), 1, ForwardOptions{},
                                     g ? *g : local);
  };
  return grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
}

}  // namespace prefalign

#endif  // PREFALIGN_VERIFICATION_HPP_
