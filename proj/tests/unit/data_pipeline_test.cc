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


#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "prefalign/data/deid.hpp"
#include "prefalign/data/mixing.hpp"
#include "prefalign/data/records.hpp"

namespace prefalign::data {
namespace {

DialogueRecord Dialogue(std::size_t turns, const std::string& tag) {
  DialogueRecord d;
  for (std::size_t i = 0; i < turns; ++i) {
    d.turns.push_back({i % 2 == 0 ? Role::kUser : Role::kAssistant, tag + "-" + std::to_string(i)});
  }
  return d;
}

std::vector<DialogueRecord> Pool(std::size_t n, std::size_t turns, const std::string& tag) {
  std::vector<DialogueRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Dialogue(turns, tag + std::to_string(i)));
  return out;
}

PreferenceRecord Pref(const std::string& tag) {
  return {"ctx " + tag, "good " + tag, "bad " + tag, "safety", "in_distribution", {"a1", "a2"}, "agreed"};
}

std::filesystem::path TempFile(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("prefalign_data_" + name);
}

TEST(LoadCorpusTest, EmptyFile) {
  const auto c = parse_corpus<DialogueRecord>("");
  EXPECT_TRUE(c.records.empty());
  EXPECT_TRUE(c.errors.empty());
}

TEST(LoadCorpusTest, RoleOrderViolationReported) {
  const std::string text =
      R"({"turns":[{"role":"user","text":"hi"},{"role":"assistant","text":"hello"}]})"
      "\n"
      R"({"turns":[{"role":"assistant","text":"hi"},{"role":"user","text":"hello"}]})"
      "\n";
  const auto c = parse_corpus<DialogueRecord>(text);
  ASSERT_EQ(c.records.size(), 1u);
  ASSERT_EQ(c.errors.size(), 1u);
  EXPECT_EQ(c.errors[0].line, 2u);
}

TEST(LoadCorpusTest, MalformedLinesNeverDropped) {
  const std::string text = "not json\n\n{\"instruction\":\"a\",\"query\":\"b\",\"output\":\"c\",\"task_kind\":\"nope\"}\n"
                           "{\"instruction\":\"a\",\"query\":\"b\",\"output\":\"c\",\"task_kind\":\"diagnosis\"}\n";
  const auto c = parse_corpus<InstructionRecord>(text);
  EXPECT_EQ(c.records.size(), 1u);
  ASSERT_EQ(c.errors.size(), 2u);
  EXPECT_EQ(c.errors[0].line, 1u);
  EXPECT_EQ(c.errors[1].line, 3u);
}

TEST(LoadCorpusTest, CustomTaskRegistry) {
  const TaskKindRegistry kinds({"a", "b", "c", "d", "e", "f"});
  const std::string line = "{\"instruction\":\"x\",\"query\":\"y\",\"output\":\"z\",\"task_kind\":\"c\"}\n";
  EXPECT_EQ(parse_corpus<InstructionRecord>(line, kinds).records.size(), 1u);
  EXPECT_EQ(parse_corpus<InstructionRecord>(line).records.size(), 0u);
  EXPECT_THROW(TaskKindRegistry({"a", "b"}), Error);
  EXPECT_THROW(TaskKindRegistry({"a", "a", "c", "d", "e", "f"}), Error);
}

TEST(LoadCorpusTest, UnreadableFileIsFatal) {
  EXPECT_THROW(load_corpus<DialogueRecord>("/nonexistent/corpus.jsonl"), Error);
}

TEST(LoadCorpusTest, RoundTripThousandRecords) {
  Rng rng(1);
  const TaskKindRegistry kinds;
  std::vector<InstructionRecord> ins;
  std::vector<DialogueRecord> dia;
  std::vector<PreferenceRecord> prefs;
  for (int i = 0; i < 1000; ++i) {
    const std::string s = std::to_string(rng.next_u64());
    InstructionRecord r{"指令 " + s, "问题 \"" + s + "\"\n", "答案\t" + s, std::nullopt,
                        kinds.kinds()[rng.below(6)]};
    if (i % 3 == 0) r.department = "内科";
    ins.push_back(r);
    dia.push_back(Dialogue(2 + 2 * rng.below(3), s));
    prefs.push_back(Pref(s));
  }
  const auto p1 = TempFile("ins.jsonl"), p2 = TempFile("dia.jsonl"), p3 = TempFile("pref.jsonl");
  write_corpus(p1, ins);
  write_corpus(p2, dia);
  write_corpus(p3, prefs);
  const auto a = load_corpus<InstructionRecord>(p1);
  const auto b = load_corpus<DialogueRecord>(p2);
  const auto c = load_corpus<PreferenceRecord>(p3);
  EXPECT_TRUE(a.errors.empty() && b.errors.empty() && c.errors.empty());
  EXPECT_EQ(a.records, ins);
  EXPECT_EQ(b.records, dia);
  EXPECT_EQ(c.records, prefs);
}

TEST(RecordTest, PreferenceInvariants) {
  PreferenceRecord r = Pref("x");
  EXPECT_NO_THROW(validate(r));
  r.rejected = r.chosen;
  EXPECT_THROW(validate(r), Error);
  r = Pref("x");
  r.dimension = "politeness";
  EXPECT_THROW(validate(r), Error);
}

TEST(RecordTest, DialogueMustEndWithAssistant) {
  DialogueRecord d = Dialogue(3, "t");
  EXPECT_THROW(validate(d), Error);
  d = Dialogue(2, "t");
  d.turns[1].text = "a\x1e" "b";
  EXPECT_THROW(validate(d), Error);
}

TEST(DeidTest, NationalIdReplaced) {
  const auto r = deidentify("患者身份证号11010519491231002X，复诊", default_deid_rules());
  EXPECT_EQ(r.text, "患者身份证号⟨ID⟩，复诊");
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].rule, "national_id");
  EXPECT_EQ(r.matches[0].end - r.matches[0].begin, 18u);
}

TEST(DeidTest, DateOfBirthReplaced) {
  const auto r = deidentify("出生于1990年01月01日。", default_deid_rules());
  EXPECT_EQ(r.text, "出生于⟨DOB⟩。");
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].rule, "date_of_birth");
}

TEST(DeidTest, NoMatchIsIdentity) {
  const auto r = deidentify("头痛三天, phone 12345", default_deid_rules({"张三"}));
  EXPECT_EQ(r.text, "头痛三天, phone 12345");
  EXPECT_TRUE(r.matches.empty());
}

TEST(DeidTest, LongerDigitRunsAreNotIds) {
  const std::string s = "order 1234567890123456789 and 12345678901234567";
  EXPECT_EQ(deidentify(s, default_deid_rules()).text, s);
}

TEST(DeidTest, AdjacentIdsAndStartOfText) {
  const auto r = deidentify("110105194912310021,110105194912310039", default_deid_rules());
  EXPECT_EQ(r.text, "⟨ID⟩,⟨ID⟩");
}

TEST(DeidTest, IdempotentAndOrderIndependent) {
  const std::string s = "张三 11010519491231002x 生于1949年12月31日, 李四.";
  auto rules = default_deid_rules({"张三", "李四"});
  const auto once = deidentify(s, rules);
  EXPECT_EQ(deidentify(once.text, rules).text, once.text);
  EXPECT_TRUE(deidentify(once.text, rules).matches.empty());
  std::reverse(rules.begin(), rules.end());
  EXPECT_EQ(deidentify(s, rules).text, once.text);
}

TEST(DeidTest, PlantedIdentifiersAllRemoved) {
  Rng rng(9);
  const std::vector<std::string> names = {"王小明", "Li Wei", "赵六"};
  std::vector<std::string> planted_ids, planted_dobs;
  std::string corpus;
  std::size_t planted_names = 0;
  for (int k = 0; k < 200; ++k) {
    std::string id;
    for (int i = 0; i < 17; ++i) id += static_cast<char>('0' + rng.below(10));
    id += rng.below(11) == 10 ? 'X' : static_cast<char>('0' + rng.below(10));
    std::string dob = std::to_string(1930 + rng.below(90)) + "年" + std::to_string(1 + rng.below(12)) + "月" +
                      std::to_string(1 + rng.below(28)) + "日";
    corpus += "患者" + names[k % 3] + "，证件" + id + "，生日" + dob + "；";
    ++planted_names;
    planted_ids.push_back(id);
    planted_dobs.push_back(dob);
  }
  const auto r = deidentify(corpus, default_deid_rules(names));
  std::size_t n_id = 0, n_dob = 0, n_name = 0;
  for (const auto& m : r.matches) {
    n_id += m.rule == "national_id";
    n_dob += m.rule == "date_of_birth";
    n_name += m.rule == "name";
  }
  EXPECT_EQ(n_id, 200u);
  EXPECT_EQ(n_dob, 200u);
  EXPECT_EQ(n_name, planted_names);
  for (const auto& id : planted_ids) EXPECT_EQ(r.text.find(id), std::string::npos);
  for (const auto& d : planted_dobs) EXPECT_EQ(r.text.find(d), std::string::npos);
  for (const auto& n : names) EXPECT_EQ(r.text.find(n), std::string::npos);
}

TEST(DeidTest, RejectsDigitReplacementAndBadPattern) {
  EXPECT_THROW(Deidentifier({{"x", "a", "<1>", 0}}), Error);
  EXPECT_THROW(Deidentifier({{"x", "(", "<X>", 0}}), Error);
}

TEST(MixTest, LimitedBySmallerPool) {
  const auto out = mix_dialogues(Pool(100, 2, "s"), Pool(60, 4, "m"), {1, 1}, 3);
  std::size_t single = 0, multi = 0;
  for (const auto& d : out) (d.is_single_turn() ? single : multi)++;
  EXPECT_EQ(single, 60u);
  EXPECT_EQ(multi, 60u);
  std::set<std::string> seen;
  for (const auto& d : out) EXPECT_TRUE(seen.insert(d.turns[0].text).second);
}

TEST(MixTest, BalancedPoolsUsesEverything) {
  EXPECT_EQ(mix_dialogues(Pool(60, 2, "s"), Pool(60, 6, "m"), {1, 1}, 3).size(), 120u);
}

TEST(MixTest, OtherRatiosExact) {
  const auto out = mix_dialogues(Pool(50, 2, "s"), Pool(50, 4, "m"), {2, 3}, 3);
  std::size_t single = 0;
  for (const auto& d : out) single += d.is_single_turn();
  EXPECT_EQ(single, 32u);
  EXPECT_EQ(out.size() - single, 48u);
}

TEST(MixTest, DeterministicAndValidated) {
  const auto s = Pool(30, 2, "s"), m = Pool(20, 4, "m");
  EXPECT_EQ(mix_dialogues(s, m, {1, 1}, 5), mix_dialogues(s, m, {1, 1}, 5));
  EXPECT_NE(mix_dialogues(s, m, {1, 1}, 5), mix_dialogues(s, m, {1, 1}, 6));
  EXPECT_THROW(mix_dialogues({}, m, {1, 1}, 5), Error);
  EXPECT_THROW(mix_dialogues(m, m, {1, 1}, 5), Error);
}

TEST(BlendTest, ZeroFractionIsIdentity) {
  const auto d = Pool(10, 2, "d");
  EXPECT_EQ(blend_general(d, Pool(5, 2, "g"), 0.0, 1), d);
}

TEST(BlendTest, QuarterOfNinety) {
  const auto d = Pool(90, 2, "d");
  const auto out = blend_general(d, Pool(40, 2, "g"), 0.25, 1);
  ASSERT_EQ(out.size(), 120u);
  std::vector<DialogueRecord> domain_part;
  std::size_t general = 0;
  for (const auto& r : out) {
    if (r.turns[0].text[0] == 'g') {
      ++general;
    } else {
      domain_part.push_back(r);
    }
  }
  EXPECT_EQ(general, 30u);
  EXPECT_EQ(domain_part, d);
  EXPECT_EQ(blend_general(d, Pool(40, 2, "g"), 0.25, 1), out);
}

TEST(BlendTest, ExactCountForAwkwardFractions) {
  for (std::size_t n : {7u, 13u, 50u, 101u}) {
    for (double f : {0.1, 0.2, 1.0 / 3.0, 0.45}) {
      const std::size_t g = general_count_for(n, f);
      EXPECT_EQ(static_cast<std::size_t>(std::llround(f * static_cast<double>(n + g))), g) << n << " " << f;
    }
  }
}

TEST(BlendTest, UnattainableReportsCounts) {
  try {
    blend_general(Pool(90, 2, "d"), Pool(10, 2, "g"), 0.25, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("needs 30"), std::string::npos) << e.what();
  }
  EXPECT_THROW(blend_general(Pool(9, 2, "d"), Pool(10, 2, "g"), 1.0, 1), Error);
}

TEST(FlattenTest, SingleTurn) {
  const auto ex = flatten_dialogue(Dialogue(2, "t"));
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].context, "t-0");
  EXPECT_EQ(ex[0].response, "t-1");
}

TEST(FlattenTest, TwoRoundsAndInverse) {
  const DialogueRecord d = Dialogue(4, "t");
  const auto ex = flatten_dialogue(d);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[1].context, "t-0\x1et-1\x1et-2");
  EXPECT_EQ(ex[1].response, "t-3");
  EXPECT_EQ(reconstruct_dialogue(ex), d);
  for (const auto& r : Pool(50, 8, "p")) EXPECT_EQ(reconstruct_dialogue(flatten_dialogue(r)), r);
}

TEST(SplitTest, NinetyTen) {
  std::vector<int> corpus(100);
  for (int i = 0; i < 100; ++i) corpus[static_cast<std::size_t>(i)] = i;
  const auto s = split(corpus, 0.10, 4);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.validation.size(), 10u);
  std::set<int> all(s.train.begin(), s.train.end());
  for (int v : s.validation) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), 100u);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  EXPECT_EQ(split(corpus, 0.10, 4).validation, s.validation);
}

TEST(SplitTest, Rejections) {
  std::vector<int> corpus(100, 1);
  EXPECT_THROW(split(corpus, 0.0, 1), Error);
  EXPECT_THROW(split(std::vector<int>(9, 1), 0.1, 1), Error);
}

TEST(SplitTest, NoRecordLoss) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 10 + rng.below(500);
    const double f = 0.05 + 0.5 * rng.uniform();
    const auto s = split(std::vector<std::size_t>(n, 0), f, rng.next_u64());
    EXPECT_EQ(s.train.size() + s.validation.size(), n);
  }
}

TEST(PreferenceMixTest, DefaultCountsTwoToOne) {
  std::vector<PreferenceRecord> in, out;
  for (int i = 0; i < 10000; ++i) in.push_back(Pref("i" + std::to_string(i)));
  for (int i = 0; i < 5000; ++i) out.push_back(Pref("o" + std::to_string(i)));
  const auto mix = build_preference_mix(in, out, {}, 1);
  EXPECT_EQ(mix.size(), 15000u);
}

TEST(PreferenceMixTest, DeskScale) {
  std::vector<PreferenceRecord> in, out;
  for (int i = 0; i < 300; ++i) in.push_back(Pref("i" + std::to_string(i)));
  for (int i = 0; i < 70; ++i) out.push_back(Pref("o" + std::to_string(i)));
  const auto counts = scaled_preference_counts(0.01);
  EXPECT_EQ(counts.in_distribution, 100u);
  EXPECT_EQ(counts.out_of_distribution, 50u);
  const auto mix = build_preference_mix(in, out, counts, 1);
  std::size_t n_in = 0, n_out = 0;
  for (const auto& r : mix) {
    if (r.source == "in_distribution") {
      ++n_in;
      EXPECT_EQ(r.context[4], 'i');
    } else {
      ++n_out;
      EXPECT_EQ(r.context[4], 'o');
    }
  }
  EXPECT_EQ(n_in, 100u);
  EXPECT_EQ(n_out, 50u);
}

TEST(PreferenceMixTest, EmptyOutOfDistributionRejected) {
  std::vector<PreferenceRecord> in(200, Pref("i"));
  try {
    build_preference_mix(in, {}, {100, 50}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("short 50"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace prefalign::data
