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


#ifndef PREFALIGN_PIPELINE_HPP_
#define PREFALIGN_PIPELINE_HPP_

#include <string>
#include <vector>

#include "prefalign/align_math.hpp"
#include "prefalign/data/mixing.hpp"
#include "prefalign/data/records.hpp"
#include "prefalign/neural_policy.hpp"
#include "prefalign/training.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign {

using NeuralSftExample = SftExampleFor<NeuralPolicy>;
using NeuralPair = PairFor<NeuralPolicy>;

inline NeuralSftExample neural_sft_example(const std::string& context, const std::string& response) {
  require(!response.empty(), "empty response");
  return {Vocabulary::prompt_tokens(context), Vocabulary::response_tokens(response)};
}

inline std::vector<NeuralSftExample> neural_sft_examples(const std::vector<data::InstructionRecord>& records) {
  std::vector<NeuralSftExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(neural_sft_example(data::instruction_context(r), r.output));
  return out;
}

// One example per assistant turn, conditioned on the dialogue so far.
inline std::vector<NeuralSftExample> neural_sft_examples(const std::vector<data::DialogueRecord>& records) {
  std::vector<NeuralSftExample> out;
  for (const auto& r : records) {
    for (const auto& ex : data::flatten_dialogue(r)) out.push_back(neural_sft_example(ex.context, ex.response));
  }
  return out;
}

inline std::vector<NeuralPair> neural_pairs(const std::vector<data::PreferenceRecord>& records) {
  std::vector<NeuralPair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({Vocabulary::prompt_tokens(r.context), Vocabulary::response_tokens(r.chosen),
                   Vocabulary::response_tokens(r.rejected), 1.0});
  }
  return out;
}

}  // namespace prefalign

#endif  // PREFALIGN_PIPELINE_HPP_
