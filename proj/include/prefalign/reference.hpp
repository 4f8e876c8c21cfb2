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

#ifndef PREFALIGN_REFERENCE_HPP_
#define PREFALIGN_REFERENCE_HPP_

#include <memory>
#include <string>
#include <utility>

#include "prefalign/error.hpp"
#include "prefalign/policy.hpp"

namespace prefalign {

// Frozen deep copy of a policy. Holds the only reference to its copy through a
// pointer-to-const, so nothing can train it; copies of the snapshot share it.
template <ScoringPolicy P>
class ReferenceSnapshot {
 public:
  using context_type = typename P::context_type;
  using response_type = typename P::response_type;

  ReferenceSnapshot(const P& policy, std::string stage)
      : policy_(std::make_shared<const P>(policy)), stage_(std::move(stage)) {
    if (!policy_->parameters_finite()) {
      fail(ErrorCode::kNumeric, "cannot snapshot a policy with non-finite parameters");
    }
  }

  double log_prob(const context_type& x, const response_type& y) const { return policy_->log_prob(x, y); }

  const P& policy() const { return *policy_; }
  const std::string& stage() const { return stage_; }

 private:
  std::shared_ptr<const P> policy_;
  std::string stage_;
};

template <ScoringPolicy P>
ReferenceSnapshot<P> snapshot_reference(const P& policy, std::string stage = "sft") {
  return ReferenceSnapshot<P>(policy, std::move(stage));
}

}  // namespace prefalign

#endif  // PREFALIGN_REFERENCE_HPP_
