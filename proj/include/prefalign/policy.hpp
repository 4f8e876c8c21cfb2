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

// Shared vocabulary for the two policy backends (tabular and neural): the
// concepts the training and alignment code is written against, plus the
// parameter/gradient views used by the optimizer.

#ifndef PREFALIGN_POLICY_HPP_
#define PREFALIGN_POLICY_HPP_

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prefalign/rng.hpp"

namespace prefalign {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParamRef {
  std::string name;
  Matrix* value;
};

// One matrix per trainable parameter, aligned with trainable_parameters().
using GradientSet = std::vector<Matrix>;

struct ForwardOptions {
  bool train = false;   // enables dropout
  Rng* rng = nullptr;   // required when train is set and dropout > 0
};

struct SampleOptions {
  int max_new_tokens = 64;
  double temperature = 1.0;
  bool greedy = false;
  std::uint64_t seed = 0;
};

template <class P>
concept ScoringPolicy = requires(const P& p, const typename P::context_type& c,
                                 const typename P::response_type& r) {
  { p.log_prob(c, r) } -> std::convertible_to<double>;
};

template <class P>
concept TrainablePolicy =
    ScoringPolicy<P> &&
    requires(P& p, const P& cp, const typename P::context_type& c,
             const typename P::response_type& r, const typename P::trace_type& trace,
             ForwardOptions opts, double coef, GradientSet& grads) {
      { cp.forward(c, r, opts) } -> std::same_as<typename P::trace_type>;
      { trace.log_prob } -> std::convertible_to<double>;
      cp.backward(trace, coef, grads);
      { p.trainable_parameters() } -> std::same_as<std::vector<ParamRef>>;
      { cp.make_gradients() } -> std::same_as<GradientSet>;
    };

inline void zero_gradients(GradientSet& grads) {
  for (auto& g : grads) g.setZero();
}

inline double gradient_norm(const GradientSet& grads) {
  double sum = 0.0;
  for (const auto& g : grads) sum += g.squaredNorm();
  return std::sqrt(sum);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Numerically stable log(1 + exp(x)).
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace prefalign

#endif  // PREFALIGN_POLICY_HPP_
