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


#ifndef PREFALIGN_DATA_MIXING_HPP_
#define PREFALIGN_DATA_MIXING_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/data/records.hpp"
#include "prefalign/error.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign::data {

namespace detail {

template <class T>
std::vector<T> pick(const std::vector<T>& pool, std::size_t k, Rng& rng) {
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i : rng.sample_indices(pool.size(), k)) out.push_back(pool[i]);
  return out;
}

}  // namespace detail

struct MixRatio {
  std::size_t single = 1;
  std::size_t multi = 1;
};

// Draws single- and multi-turn dialogues in the exact ratio single:multi, as
// many as the smaller scaled pool allows, then shuffles.
inline std::vector<DialogueRecord> mix_dialogues(const std::vector<DialogueRecord>& single,
                                                 const std::vector<DialogueRecord>& multi, MixRatio ratio,
                                                 std::uint64_t seed) {
  require(!single.empty(), "single-turn pool is empty");
  require(!multi.empty(), "multi-turn pool is empty");
  require(ratio.single > 0 && ratio.multi > 0, "mix ratio terms must be positive");
  for (std::size_t i = 0; i < single.size(); ++i) {
    validate(single[i]);
    require(single[i].is_single_turn(), "single-turn pool record " + std::to_string(i) + " has " +
                                            std::to_string(single[i].turn_count()) + " turns");
  }
  for (std::size_t i = 0; i < multi.size(); ++i) {
    validate(multi[i]);
    require(!multi[i].is_single_turn(), "multi-turn pool record " + std::to_string(i) + " is single-turn");
  }
  const std::size_t k = std::min(single.size() / ratio.single, multi.size() / ratio.multi);
  require(k > 0, "pools too small for the requested ratio");
  Rng rng(seed);
  std::vector<DialogueRecord> out = detail::pick(single, k * ratio.single, rng);
  auto more = detail::pick(multi, k * ratio.multi, rng);
  out.insert(out.end(), more.begin(), more.end());
  rng.shuffle(out);
  return out;
}

// Smallest general count g with round(fraction * (domain + g)) == g.
inline std::size_t general_count_for(std::size_t domain, double fraction) {
  require(fraction >= 0.0 && fraction < 1.0, "general fraction must lie in [0, 1)");
  const double d = static_cast<double>(domain);
  const auto guess = static_cast<std::size_t>(std::llround(fraction * d / (1.0 - fraction)));
  const std::size_t lo = guess > 2 ? guess - 2 : 0;
  for (std::size_t g = lo; g <= guess + 2; ++g) {
    if (static_cast<std::size_t>(std::llround(fraction * (d + static_cast<double>(g)))) == g) return g;
  }
  return guess;
}

// Adds general-domain records so they make up `fraction` of the output. Domain
// records keep their relative order; general ones land at seeded positions.
template <class T>
std::vector<T> blend_general(const std::vector<T>& domain, const std::vector<T>& general, double fraction,
                             std::uint64_t seed) {
  const std::size_t g = general_count_for(domain.size(), fraction);
  if (g > general.size()) {
    fail(ErrorCode::kInvalidArgument, "general fraction " + std::to_string(fraction) + " over " +
                                          std::to_string(domain.size()) + " domain records needs " +
                                          std::to_string(g) + " general records, pool has " +
                                          std::to_string(general.size()));
  }
  if (g == 0) return domain;
  Rng rng(seed);
  const std::vector<T> drawn = detail::pick(general, g, rng);
  const std::size_t total = domain.size() + g;
  std::vector<bool> is_general(total, false);
  for (std::size_t pos : rng.sample_indices(total, g)) is_general[pos] = true;
  std::vector<T> out;
  out.reserve(total);
  std::size_t di = 0, gi = 0;
  for (std::size_t pos = 0; pos < total; ++pos) out.push_back(is_general[pos] ? drawn[gi++] : domain[di++]);
  return out;
}

struct FlatExample {
  std::string context;  // prior turns joined with the turn separator
  std::string response;

  bool operator==(const FlatExample&) const = default;
};

// One example per assistant turn.
inline std::vector<FlatExample> flatten_dialogue(const DialogueRecord& record) {
  validate(record);
  std::vector<FlatExample> out;
  std::vector<std::string> history;
  for (const auto& t : record.turns) {
    if (t.role == Role::kAssistant) out.push_back({Vocabulary::join_turns(history), t.text});
    history.push_back(t.text);
  }
  return out;
}

// Inverse of flatten_dialogue: the final example carries the whole history.
inline DialogueRecord reconstruct_dialogue(const std::vector<FlatExample>& examples) {
  require(!examples.empty(), "no examples to reconstruct from");
  DialogueRecord r;
  const auto turns = Vocabulary::split_turns(examples.back().context);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    r.turns.push_back(Turn{i % 2 == 0 ? Role::kUser : Role::kAssistant, turns[i]});
  }
  r.turns.push_back(Turn{Role::kAssistant, examples.back().response});
  validate(r);
  const auto check = flatten_dialogue(r);
  require(check == examples, "examples do not come from a single dialogue");
  return r;
}

template <class T>
struct SplitResult {
  std::vector<T> train;
  std::vector<T> validation;
};

// Validation gets round(fraction * N) records chosen by seed; both parts keep
// input order.
template <class T>
SplitResult<T> split(const std::vector<T>& corpus, double validation_fraction, std::uint64_t seed) {
  require(validation_fraction > 0.0 && validation_fraction < 1.0, "validation fraction must lie in (0, 1)");
  if (corpus.size() < 10) {
    fail(ErrorCode::kInvalidArgument, "corpus has " + std::to_string(corpus.size()) + " records; at least 10 needed");
  }
  const auto v = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(corpus.size())));
  require(v > 0 && v < corpus.size(), "validation fraction leaves an empty part");
  Rng rng(seed);
  std::vector<bool> in_val(corpus.size(), false);
  for (std::size_t i : rng.sample_indices(corpus.size(), v)) in_val[i] = true;
  SplitResult<T> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (in_val[i] ? out.validation : out.train).push_back(corpus[i]);
  return out;
}

struct PreferenceCounts {
  std::size_t in_distribution = 10000;
  std::size_t out_of_distribution = 5000;
};

// Scales both counts by the same factor (e.g. 0.01 gives 100 and 50).
inline PreferenceCounts scaled_preference_counts(double scale, PreferenceCounts base = {}) {
  require(scale > 0.0, "scale must be positive");
  return {static_cast<std::size_t>(std::llround(scale * static_cast<double>(base.in_distribution))),
          static_cast<std::size_t>(std::llround(scale * static_cast<double>(base.out_of_distribution)))};
}

inline std::vector<PreferenceRecord> build_preference_mix(const std::vector<PreferenceRecord>& in_dist,
                                                          const std::vector<PreferenceRecord>& out_dist,
                                                          PreferenceCounts counts, std::uint64_t seed) {
  if (in_dist.size() < counts.in_distribution || out_dist.size() < counts.out_of_distribution ||
      out_dist.empty() || in_dist.empty()) {
    const auto gap = [](std::size_t want, std::size_t have) { return want > have ? want - have : 0; };
    fail(ErrorCode::kInvalidArgument,
         "preference pools too small: in-distribution " + std::to_string(in_dist.size()) + "/" +
             std::to_string(counts.in_distribution) + " (short " +
             std::to_string(gap(counts.in_distribution, in_dist.size())) + "), out-of-distribution " +
             std::to_string(out_dist.size()) + "/" + std::to_string(counts.out_of_distribution) + " (short " +
             std::to_string(gap(counts.out_of_distribution, out_dist.size())) + ")");
  }
  Rng rng(seed);
  std::vector<PreferenceRecord> out = detail::pick(in_dist, counts.in_distribution, rng);
  for (auto& r : out) r.source = "in_distribution";
  for (auto r : detail::pick(out_dist, counts.out_of_distribution, rng)) {
    r.source = "out_of_distribution";
    out.push_back(std::move(r));
  }
  for (const auto& r : out) validate(r);
  rng.shuffle(out);
  return out;
}

}  // namespace prefalign::data

#endif  // PREFALIGN_DATA_MIXING_HPP_
