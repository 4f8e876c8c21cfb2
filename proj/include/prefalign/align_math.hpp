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

// KL-regularized preference alignment in closed form.
//
// The objective  E_x E_{y~pi}[r(x,y)] - beta * KL(pi(.|x) || pi_ref(.|x))  is
// maximized by  pi*(y|x) = pi_ref(y|x) exp(r(x,y)/beta) / Z(x).  Inverting that
// relation expresses the reward through the policy,
//   r(x,y) = beta log(pi(y|x)/pi_ref(y|x)) + beta log Z(x),
// and under a Bradley-Terry comparison model the Z(x) terms cancel in every
// pairwise difference, leaving the preference loss
//   -log sigmoid(beta [log pi(yw|x)/pi_ref(yw|x) - log pi(yl|x)/pi_ref(yl|x)]).
//
// The enumerable quantities (Z, pi*, KL, the objective itself) are only
// defined for the tabular backend.

#ifndef PREFALIGN_ALIGN_MATH_HPP_
#define PREFALIGN_ALIGN_MATH_HPP_

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "prefalign/error.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/reference.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/tabular_policy.hpp"

namespace prefalign {

inline constexpr double kDefaultBeta = 0.1;

class Beta {
 public:
  explicit Beta(double value = kDefaultBeta) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      fail(ErrorCode::kInvalidArgument, "beta must be positive and finite, got " + std::to_string(value));
    }
  }
  double value() const { return value_; }

 private:
  double value_;
};

struct RewardTable {
  std::vector<std::string> contexts;
  std::vector<std::string> responses;
  Matrix rewards;  // |X| x |Y|

  RewardTable() = default;
  explicit RewardTable(Matrix r) : rewards(std::move(r)) {
    for (Eigen::Index i = 0; i < rewards.rows(); ++i) contexts.push_back("x" + std::to_string(i));
    for (Eigen::Index j = 0; j < rewards.cols(); ++j) responses.push_back("y" + std::to_string(j));
    validate();
  }
  RewardTable(std::vector<std::string> xs, std::vector<std::string> ys, Matrix r)
      : contexts(std::move(xs)), responses(std::move(ys)), rewards(std::move(r)) {
    validate();
  }

  void validate() const {
    require(rewards.rows() == static_cast<Eigen::Index>(contexts.size()) &&
                rewards.cols() == static_cast<Eigen::Index>(responses.size()),
            "reward table shape does not match its names");
    if (!rewards.allFinite()) fail(ErrorCode::kNumeric, "reward table entries must be finite");
  }

  double operator()(std::size_t x, std::size_t y) const {
    return rewards(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
  }

  // Adds shift[x] to every reward of context x.
  RewardTable shifted(const Vector& shift) const {
    require(shift.size() == rewards.rows(), "shift length must equal the number of contexts");
    RewardTable out = *this;
    out.rewards.colwise() += shift;
    return out;
  }
};

template <class Context, class Response>
struct PreferencePair {
  Context context{};
  Response chosen{};
  Response rejected{};
  double weight = 1.0;
};

template <class P>
using PairFor = PreferencePair<typename P::context_type, typename P::response_type>;

using TabularPair = PreferencePair<std::size_t, std::size_t>;

// Log-ratios of one pair under policy and reference.
struct PairLogRatios {
  double chosen = 0.0;
  double rejected = 0.0;
};

template <class P, class R, class Pair>
PairLogRatios pair_log_ratios(const P& policy, const R& reference, const Pair& pair, std::size_t index = 0) {
  const double pc = policy.log_prob(pair.context, pair.chosen);
  const double pr = policy.log_prob(pair.context, pair.rejected);
  const double rc = reference.log_prob(pair.context, pair.chosen);
  const double rr = reference.log_prob(pair.context, pair.rejected);
  PairLogRatios out{pc - rc, pr - rr};
  if (!std::isfinite(out.chosen) || !std::isfinite(out.rejected)) {
    fail(ErrorCode::kNumeric, "pair " + std::to_string(index) +
                                  " has a non-finite log-ratio (policy " + std::to_string(pc) + "/" +
                                  std::to_string(pr) + ", reference " + std::to_string(rc) + "/" +
                                  std::to_string(rr) + ")");
  }
  return out;
}

// -log sigmoid(margin), computed as softplus(-margin).
inline double dpo_pair_loss(double margin) { return softplus(-margin); }

inline double dpo_margin(double beta, const PairLogRatios& r) { return beta * (r.chosen - r.rejected); }

// Weighted mean of dpo_pair_loss over the batch. Weights default to 1, which
// gives the plain batch mean.
template <class P, class R, class Pair>
double dpo_loss(const P& policy, const R& reference, std::span<const Pair> batch, Beta beta) {
  require(!batch.empty(), "DPO batch must be non-empty");
  double total = 0.0;
  double weight = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairLogRatios r = pair_log_ratios(policy, reference, batch[i], i);
    total += batch[i].weight * dpo_pair_loss(dpo_margin(beta.value(), r));
    weight += batch[i].weight;
  }
  require(weight > 0.0, "DPO batch weights must sum to a positive value");
  return total / weight;
}

template <class P, class R, class Pair>
double dpo_loss(const P& policy, const R& reference, const std::vector<Pair>& batch, Beta beta) {
  return dpo_loss(policy, reference, std::span<const Pair>(batch), beta);
}

// beta * log(pi(y|x) / pi_ref(y|x)); the context-only term beta log Z(x) is
// omitted, so only differences within one context are meaningful.
template <class P, class R>
double implicit_reward(const P& policy, const R& reference, const typename P::context_type& x,
                       const typename P::response_type& y, Beta beta) {
  const double lp = policy.log_prob(x, y);
  const double lr = reference.log_prob(x, y);
  if (!std::isfinite(lp) || !std::isfinite(lr)) {
    fail(ErrorCode::kNumeric, "implicit reward undefined for zero-probability responses");
  }
  return beta.value() * (lp - lr);
}

// The same loss assembled from implicit-reward differences.
template <class P, class R, class Pair>
double dpo_loss_via_implicit_rewards(const P& policy, const R& reference, std::span<const Pair> batch, Beta beta) {
  require(!batch.empty(), "DPO batch must be non-empty");
  double total = 0.0;
  double weight = 0.0;
  for (const Pair& pair : batch) {
    const double rw = implicit_reward(policy, reference, pair.context, pair.chosen, beta);
    const double rl = implicit_reward(policy, reference, pair.context, pair.rejected, beta);
    total += pair.weight * softplus(-(rw - rl));
    weight += pair.weight;
  }
  return total / weight;
}

// --- enumerable (tabular) quantities ----------------------------------------

template <class R>
const TabularPolicy& as_tabular(const R& policy) {
  if constexpr (std::is_same_v<R, TabularPolicy>) {
    return policy;
  } else if constexpr (std::is_same_v<R, ReferenceSnapshot<TabularPolicy>>) {
    return policy.policy();
  } else {
    fail(ErrorCode::kUnsupported, "operation requires an enumerable (tabular) policy");
  }
}

inline void check_reward_shape(const TabularPolicy& ref, const RewardTable& reward) {
  require(reward.rewards.rows() == static_cast<Eigen::Index>(ref.num_contexts()) &&
              reward.rewards.cols() == static_cast<Eigen::Index>(ref.num_responses()),
          "reward table shape does not match the policy");
}

template <class R>
double log_partition_function(const R& reference, const RewardTable& reward, Beta beta, std::size_t x) {
  const TabularPolicy& ref = as_tabular(reference);
  check_reward_shape(ref, reward);
  const Eigen::RowVectorXd tilted =
      ref.log_probabilities(x) + reward.rewards.row(static_cast<Eigen::Index>(x)) / beta.value();
  return log_sum_exp(tilted);
}

// Z(x) = sum_y pi_ref(y|x) exp(r(x,y)/beta)
template <class R>
double partition_function(const R& reference, const RewardTable& reward, Beta beta, std::size_t x) {
  return std::exp(log_partition_function(reference, reward, beta, x));
}

template <class R>
TabularPolicy optimal_policy(const R& reference, const RewardTable& reward, Beta beta) {
  const TabularPolicy& ref = as_tabular(reference);
  check_reward_shape(ref, reward);
  Matrix logits(ref.num_contexts(), ref.num_responses());
  for (std::size_t x = 0; x < ref.num_contexts(); ++x) {
    const Eigen::RowVectorXd tilted =
        ref.log_probabilities(x) + reward.rewards.row(static_cast<Eigen::Index>(x)) / beta.value();
    logits.row(static_cast<Eigen::Index>(x)) = tilted.array() - log_sum_exp(tilted);
  }
  return TabularPolicy(ref.context_names(), ref.response_names(), std::move(logits));
}

// KL(p || q) for two strictly positive distributions over the same support.
inline double kl_divergence(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
  require(p.size() == q.size(), "distributions must have the same support");
  if (!(p.array() > 0.0).all() || !(q.array() > 0.0).all()) {
    fail(ErrorCode::kNumeric, "KL divergence needs strictly positive rows");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  return kl < 0.0 ? 0.0 : kl;
}

template <class P, class R>
double kl_divergence(const P& policy, const R& reference, std::size_t x) {
  const TabularPolicy& pol = as_tabular(policy);
  const TabularPolicy& ref = as_tabular(reference);
  require(pol.num_responses() == ref.num_responses(), "policies have different response sets");
  const Eigen::RowVectorXd lp = pol.log_probabilities(x);
  const Eigen::RowVectorXd lq = ref.log_probabilities(x);
  const Eigen::RowVectorXd p = lp.array().exp();
  if (!(p.array() > 0.0).all() || !(lq.array().exp() > 0.0).all()) {
    fail(ErrorCode::kNumeric, "KL divergence needs strictly positive rows");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * (lp(i) - lq(i));
  return kl < 0.0 ? 0.0 : kl;
}

inline void check_context_distribution(std::span<const double> rho, std::size_t num_contexts) {
  require(rho.size() == num_contexts, "context distribution has the wrong length");
  double sum = 0.0;
  for (double w : rho) {
    require(w >= 0.0 && std::isfinite(w), "context weights must be non-negative and finite");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "context distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

inline std::vector<double> uniform_contexts(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

// E_{x~rho} [ E_{y~pi}[r(x,y)] - beta KL(pi(.|x) || pi_ref(.|x)) ]
template <class P, class R>
double rlhf_objective(const P& policy, const R& reference, const RewardTable& reward, Beta beta,
                      std::span<const double> context_distribution) {
  const TabularPolicy& pol = as_tabular(policy);
  const TabularPolicy& ref = as_tabular(reference);
  check_reward_shape(ref, reward);
  check_reward_shape(pol, reward);
  check_context_distribution(context_distribution, pol.num_contexts());
  double total = 0.0;
  for (std::size_t x = 0; x < pol.num_contexts(); ++x) {
    const double rho = context_distribution[x];
    if (rho == 0.0) continue;
    const Eigen::RowVectorXd p = pol.probabilities(x);
    const double expected_reward = p.dot(reward.rewards.row(static_cast<Eigen::Index>(x)));
    total += rho * (expected_reward - beta.value() * kl_divergence(pol, ref, x));
  }
  return total;
}

// P(y1 preferred over y2 | x) under Bradley-Terry: sigmoid(r(x,y1) - r(x,y2)).
inline double bt_preference_prob(const RewardTable& reward, std::size_t x, std::size_t y1, std::size_t y2) {
  return sigmoid(reward(x, y1) - reward(x, y2));
}

// Max over contexts of the total-variation distance between two tabular
// policies.
inline double total_variation(const TabularPolicy& a, const TabularPolicy& b) {
  require(a.num_contexts() == b.num_contexts() && a.num_responses() == b.num_responses(),
          "policies have different shapes");
  double worst = 0.0;
  for (std::size_t x = 0; x < a.num_contexts(); ++x) {
    const double tv = 0.5 * (a.probabilities(x) - b.probabilities(x)).cwiseAbs().sum();
    worst = std::max(worst, tv);
  }
  return worst;
}

// Every ordered pair (i, j), i != j, in every context, weighted by
// rho(x) * P(i > j) / #unordered pairs. Minimizing the weighted DPO loss over
// this set is minimizing the exact expected loss under uniform pair sampling.
inline std::vector<TabularPair> bradley_terry_pair_set(const RewardTable& reward,
                                                       std::span<const double> context_distribution) {
  const auto nx = static_cast<std::size_t>(reward.rewards.rows());
  const auto ny = static_cast<std::size_t>(reward.rewards.cols());
  require(ny >= 2, "need at least two responses to form pairs");
  check_context_distribution(context_distribution, nx);
  const double npairs = static_cast<double>(ny * (ny - 1) / 2);
  std::vector<TabularPair> out;
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t i = 0; i < ny; ++i) {
      for (std::size_t j = 0; j < ny; ++j) {
        if (i == j) continue;
        out.push_back(TabularPair{x, i, j, context_distribution[x] * bt_preference_prob(reward, x, i, j) / npairs});
      }
    }
  }
  return out;
}

// Draws `count` labelled comparisons: x ~ rho, an unordered pair of distinct
// responses uniformly, and the winner from Bradley-Terry.
inline std::vector<TabularPair> sample_bradley_terry_pairs(const RewardTable& reward,
                                                           std::span<const double> context_distribution,
                                                           std::size_t count, std::uint64_t seed) {
  const auto nx = static_cast<std::size_t>(reward.rewards.rows());
  const auto ny = static_cast<std::size_t>(reward.rewards.cols());
  require(ny >= 2, "need at least two responses to form pairs");
  check_context_distribution(context_distribution, nx);
  Rng rng(seed);
  std::vector<TabularPair> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    double u = rng.uniform();
    std::size_t x = nx - 1;
    for (std::size_t i = 0; i < nx; ++i) {
      u -= context_distribution[i];
      if (u < 0.0) {
        x = i;
        break;
      }
    }
    const std::size_t a = static_cast<std::size_t>(rng.below(ny));
    std::size_t b = static_cast<std::size_t>(rng.below(ny - 1));
    if (b >= a) ++b;
    if (rng.uniform() < bt_preference_prob(reward, x, a, b)) {
      out.push_back(TabularPair{x, a, b, 1.0});
    } else {
      out.push_back(TabularPair{x, b, a, 1.0});
    }
  }
  return out;
}

}  // namespace prefalign

#endif  // PREFALIGN_ALIGN_MATH_HPP_
