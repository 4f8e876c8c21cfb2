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


#ifndef PREFALIGN_REWARD_FIXTURE_HPP_
#define PREFALIGN_REWARD_FIXTURE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "prefalign/align_math.hpp"
#include "prefalign/checkpoint.hpp"
#include "prefalign/tabular_policy.hpp"

namespace prefalign {

// A known reward over a small enumerable space, with the reference policy and
// context distribution to verify against.
//
//   {"name": "...", "contexts": [...], "responses": [...],
//    "rewards": [[...], ...],
//    "reference_logits": [[...], ...],        optional, uniform if absent
//    "context_distribution": [...]}           optional, uniform if absent
struct RewardFixture {
  std::string name;
  RewardTable reward;
  TabularPolicy reference;
  std::vector<double> context_distribution;
};

inline Matrix nested_matrix(const Json& rows, std::size_t nr, std::size_t nc, const std::string& what) {
  if (!rows.is_array() || rows.size() != nr) fail(ErrorCode::kParse, what + " must have " + std::to_string(nr) + " rows");
  Matrix m(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc));
  for (std::size_t i = 0; i < nr; ++i) {
    if (!rows[i].is_array() || rows[i].size() != nc) {
      fail(ErrorCode::kParse, what + " row " + std::to_string(i) + " must have " + std::to_string(nc) + " entries");
    }
    for (std::size_t j = 0; j < nc; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return m;
}

inline RewardFixture reward_fixture_from_json(const Json& j) {
  try {
    RewardFixture f;
    f.name = j.value("name", "fixture");
    auto xs = j.at("contexts").get<std::vector<std::string>>();
    auto ys = j.at("responses").get<std::vector<std::string>>();
    const Matrix r = nested_matrix(j.at("rewards"), xs.size(), ys.size(), "rewards");
    Matrix ref = Matrix::Zero(r.rows(), r.cols());
    if (j.contains("reference_logits")) ref = nested_matrix(j.at("reference_logits"), xs.size(), ys.size(), "reference_logits");
    f.reward = RewardTable(xs, ys, r);
    f.reference = TabularPolicy(std::move(xs), std::move(ys), std::move(ref));
    f.context_distribution = j.contains("context_distribution")
                                 ? j.at("context_distribution").get<std::vector<double>>()
                                 : uniform_contexts(f.reference.num_contexts());
    check_context_distribution(f.context_distribution, f.reference.num_contexts());
    return f;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed reward fixture: ") + e.what());
  }
}

inline RewardFixture load_reward_fixture(const std::filesystem::path& path) {
  return reward_fixture_from_json(parse_json(read_file(path), "fixture " + path.string()));
}

// Collapses identical (context, chosen, rejected) pairs into one pair whose
// weight is the summed weight. The weighted-mean DPO loss is unchanged.
inline std::vector<TabularPair> aggregate_pairs(const std::vector<TabularPair>& pairs, std::size_t num_contexts,
                                                std::size_t num_responses) {
  std::vector<double> w(num_contexts * num_responses * num_responses, 0.0);
  for (const auto& p : pairs) {
    require(p.context < num_contexts && p.chosen < num_responses && p.rejected < num_responses,
            "pair index out of range");
    w[(p.context * num_responses + p.chosen) * num_responses + p.rejected] += p.weight;
  }
  std::vector<TabularPair> out;
  for (std::size_t x = 0; x < num_contexts; ++x)
    for (std::size_t a = 0; a < num_responses; ++a)
      for (std::size_t b = 0; b < num_responses; ++b) {
        const double v = w[(x * num_responses + a) * num_responses + b];
        if (v > 0.0) out.push_back(TabularPair{x, a, b, v});
      }
  return out;
}

}  // namespace prefalign

#endif  // PREFALIGN_REWARD_FIXTURE_HPP_
