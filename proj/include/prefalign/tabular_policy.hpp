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

#ifndef PREFALIGN_TABULAR_POLICY_HPP_
#define PREFALIGN_TABULAR_POLICY_HPP_

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/error.hpp"
#include "prefalign/policy.hpp"

namespace prefalign {

// A softmax policy over a finite response set, one logit row per context.
// Every quantity (normalizer, KL, expectations) is exactly enumerable.
class TabularPolicy {
 public:
  using context_type = std::size_t;
  using response_type = std::size_t;

  struct Trace {
    std::size_t context = 0;
    std::size_t response = 0;
    double log_prob = 0.0;
  };
  using trace_type = Trace;

  TabularPolicy() = default;

  TabularPolicy(std::vector<std::string> contexts, std::vector<std::string> responses,
                Matrix logits)
      : contexts_(std::move(contexts)), responses_(std::move(responses)),
        logits_(std::move(logits)) {
    require(!contexts_.empty() && !responses_.empty(), "tabular policy needs contexts and responses");
    require(logits_.rows() == static_cast<Eigen::Index>(contexts_.size()) &&
                logits_.cols() == static_cast<Eigen::Index>(responses_.size()),
            "logit matrix shape does not match context/response sets");
    if (!logits_.allFinite()) fail(ErrorCode::kNumeric, "tabular logits must be finite");
  }

  static TabularPolicy uniform(std::size_t num_contexts, std::size_t num_responses) {
    return TabularPolicy(default_names("x", num_contexts), default_names("y", num_responses),
                         Matrix::Zero(static_cast<Eigen::Index>(num_contexts),
                                      static_cast<Eigen::Index>(num_responses)));
  }

  static TabularPolicy from_logits(Matrix logits) {
    const auto nx = static_cast<std::size_t>(logits.rows());
    const auto ny = static_cast<std::size_t>(logits.cols());
    return TabularPolicy(default_names("x", nx), default_names("y", ny), std::move(logits));
  }

  // Rows must be strictly positive; they are renormalized.
  static TabularPolicy from_probabilities(const Matrix& probs) {
    if (!(probs.array() > 0.0).all()) {
      fail(ErrorCode::kNumeric, "tabular probabilities must be strictly positive");
    }
    return from_logits(probs.array().log().matrix());
  }

  std::size_t num_contexts() const { return contexts_.size(); }
  std::size_t num_responses() const { return responses_.size(); }
  const std::vector<std::string>& context_names() const { return contexts_; }
  const std::vector<std::string>& response_names() const { return responses_; }
  const Matrix& logits() const { return logits_; }
  Matrix& mutable_logits() { return logits_; }

  double log_prob(std::size_t x, std::size_t y) const {
    check_index(x, y);
    return logits_(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) -
           log_sum_exp(logits_.row(static_cast<Eigen::Index>(x)));
  }

  Eigen::RowVectorXd log_probabilities(std::size_t x) const {
    check_index(x, 0);
    const auto row = logits_.row(static_cast<Eigen::Index>(x));
    return row.array() - log_sum_exp(row);
  }

  Eigen::RowVectorXd probabilities(std::size_t x) const {
    return log_probabilities(x).array().exp();
  }

  // Full |X|x|Y| probability table.
  Matrix probability_table() const {
    Matrix out(logits_.rows(), logits_.cols());
    for (Eigen::Index x = 0; x < logits_.rows(); ++x) {
      out.row(x) = probabilities(static_cast<std::size_t>(x));
    }
    return out;
  }

  std::size_t sample(std::size_t x, const SampleOptions& opts) const {
    check_index(x, 0);
    const auto row = logits_.row(static_cast<Eigen::Index>(x));
    if (opts.greedy) {
      Eigen::Index best = 0;
      row.maxCoeff(&best);
      return static_cast<std::size_t>(best);
    }
    require(opts.temperature > 0.0, "temperature must be positive");
    const Eigen::RowVectorXd scaled = row / opts.temperature;
    const Eigen::RowVectorXd p = (scaled.array() - log_sum_exp(scaled)).exp();
    Rng rng(opts.seed);
    double u = rng.uniform();
    for (Eigen::Index y = 0; y < p.size(); ++y) {
      u -= p(y);
      if (u < 0.0) return static_cast<std::size_t>(y);
    }
    return static_cast<std::size_t>(p.size() - 1);
  }

  Trace forward(std::size_t x, std::size_t y, const ForwardOptions& = {}) const {
    return Trace{x, y, log_prob(x, y)};
  }

  // grads[0] += coef * d log pi(y|x) / d logits
  void backward(const Trace& trace, double coef, GradientSet& grads) const {
    const Eigen::RowVectorXd p = probabilities(trace.context);
    auto row = grads[0].row(static_cast<Eigen::Index>(trace.context));
    row -= coef * p;
    row(static_cast<Eigen::Index>(trace.response)) += coef;
  }

  std::vector<ParamRef> trainable_parameters() { return {ParamRef{"logits", &logits_}}; }

  GradientSet make_gradients() const {
    return {Matrix::Zero(logits_.rows(), logits_.cols())};
  }

  bool parameters_finite() const { return logits_.allFinite(); }

 private:
  static std::vector<std::string> default_names(const char* prefix, std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  }

  void check_index(std::size_t x, std::size_t y) const {
    if (x >= contexts_.size() || y >= responses_.size()) {
      fail(ErrorCode::kInvalidArgument, "tabular index out of range: context " + std::to_string(x) +
                                            ", response " + std::to_string(y));
    }
  }

  std::vector<std::string> contexts_;
  std::vector<std::string> responses_;
  Matrix logits_;
};

}  // namespace prefalign

#endif  // PREFALIGN_TABULAR_POLICY_HPP_
