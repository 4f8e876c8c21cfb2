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


#ifndef PREFALIGN_DATA_DEID_HPP_
#define PREFALIGN_DATA_DEID_HPP_

#include <algorithm>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/error.hpp"

namespace prefalign::data {

// A named pattern whose matches (or whose capture group `group`) are
// replaced by `replacement`.
struct DeidRule {
  std::string name;
  std::string pattern;
  std::string replacement;
  int group = 0;
};

inline const std::string kIdToken = "⟨ID⟩";
inline const std::string kDobToken = "⟨DOB⟩";
inline const std::string kNameToken = "⟨NAME⟩";

// 18-character national ID: 17 digits and a digit or X check character, not
// embedded in a longer digit run.
inline DeidRule national_id_rule() {
  return {"national_id", "(?:^|[^0-9])([0-9]{17}[0-9Xx])(?![0-9])", kIdToken, 1};
}

inline DeidRule date_of_birth_rule() {
  return {"date_of_birth", "[0-9]{4}年[0-9]{1,2}月[0-9]{1,2}日", kDobToken, 0};
}

inline std::string regex_escape(const std::string& s) {
  static const std::string special = R"(\^$.|?*+()[]{}/-)";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

// Exact-match rule for a configured list of names. Longer names are tried
// first so one name that prefixes another cannot shadow it.
inline DeidRule name_list_rule(std::vector<std::string> names) {
  require(!names.empty(), "name list is empty");
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  std::string pattern;
  for (const auto& n : names) {
    require(!n.empty(), "empty name in name list");
    if (!pattern.empty()) pattern += '|';
    pattern += regex_escape(n);
  }
  return {"name", "(?:" + pattern + ")", kNameToken, 0};
}

inline std::vector<DeidRule> default_deid_rules(const std::vector<std::string>& names = {}) {
  std::vector<DeidRule> rules = {national_id_rule(), date_of_birth_rule()};
  if (!names.empty()) rules.push_back(name_list_rule(names));
  return rules;
}

struct DeidMatch {
  std::string rule;
  std::size_t begin = 0;  // byte offsets into the original text
  std::size_t end = 0;
};

struct DeidResult {
  std::string text;
  std::vector<DeidMatch> matches;
};

inline nlohmann::json to_json(const DeidMatch& m) {
  return nlohmann::json{{"rule", m.rule}, {"begin", m.begin}, {"end", m.end}};
}

class Deidentifier {
 public:
  explicit Deidentifier(std::vector<DeidRule> rules) : rules_(std::move(rules)) {
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const DeidRule& r = rules_[i];
      require(!r.name.empty(), "de-identification rule needs a name");
      for (std::size_t j = 0; j < i; ++j) require(rules_[j].name != r.name, "duplicate rule name " + r.name);
      require(r.group >= 0, "rule " + r.name + " has a negative capture group");
      try {
        compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
      } catch (const std::regex_error& e) {
        fail(ErrorCode::kInvalidArgument, "rule " + r.name + " has an invalid pattern: " + e.what());
      }
      for (char c : r.replacement) {
        require(c < '0' || c > '9', "rule " + r.name + " replacement must not contain digits");
      }
    }
  }

  const std::vector<DeidRule>& rules() const { return rules_; }

  // Every rule is matched against the original text; overlapping matches keep
  // the one that starts first (then the longer, then the rule name), and all
  // replacements happen in one pass. The outcome does not depend on rule
  // order.
  DeidResult apply(const std::string& text) const {
    std::vector<DeidMatch> found;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const int g = rules_[i].group;
      for (auto it = std::sregex_iterator(text.begin(), text.end(), compiled_[i]); it != std::sregex_iterator();
           ++it) {
        const auto& m = *it;
        if (!m[g].matched || m.length(g) == 0) continue;
        const auto b = static_cast<std::size_t>(m.position(g));
        found.push_back({rules_[i].name, b, b + static_cast<std::size_t>(m.length(g))});
      }
    }
    std::sort(found.begin(), found.end(), [](const DeidMatch& a, const DeidMatch& b) {
      if (a.begin != b.begin) return a.begin < b.begin;
      if (a.end != b.end) return a.end > b.end;
      return a.rule < b.rule;
    });
    DeidResult out;
    std::size_t cursor = 0;
    for (const auto& m : found) {
      if (m.begin < cursor) continue;
      out.text.append(text, cursor, m.begin - cursor);
      out.text += replacement_for(m.rule);
      cursor = m.end;
      out.matches.push_back(m);
    }
    out.text.append(text, cursor, std::string::npos);
    return out;
  }

 private:
  const std::string& replacement_for(const std::string& name) const {
    for (const auto& r : rules_)
      if (r.name == name) return r.replacement;
    fail(ErrorCode::kNotFound, "no rule named " + name);
  }

  std::vector<DeidRule> rules_;
  std::vector<std::regex> compiled_;
};

inline DeidResult deidentify(const std::string& text, const std::vector<DeidRule>& rules) {
  return Deidentifier(rules).apply(text);
}

}  // namespace prefalign::data

#endif  // PREFALIGN_DATA_DEID_HPP_
