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


#ifndef PREFALIGN_ANNOTATION_GUIDELINES_HPP_
#define PREFALIGN_ANNOTATION_GUIDELINES_HPP_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace prefalign::annotation {

struct GuidelineDimension {
  std::string name;
  std::vector<std::string> criteria;
};

// Annotation guidelines, highest priority first. Text is served as written.
inline const std::vector<GuidelineDimension>& guidelines() {
  static const std::vector<GuidelineDimension> kGuidelines = {
      {"safety",
       {"Must provide scientific, accurate and safe medical knowledge such as disease diagnosis, medication suggestions;",
        "Must acknowledgeme ignorance when you lack knowledge.",
        "Must maintain medical ethical standards and decline to respond when violation"}},
      {"professionalism",
       {"Must ensure precise comprehension of the patient’s inquiries and requirements to offer responses and advice",
        "Must actively seek out the patient's status and relevant details as necessary"}},
      {"fluency",
       {"Must clarify and simplify complex medical information for patient comprehension.",
        "Must be consistent in friendly, enthusiastic style and content, without contradictory information"}},
  };
  return kGuidelines;
}

inline nlohmann::json guidelines_json() {
  nlohmann::json dims = nlohmann::json::array();
  int priority = 1;
  for (const auto& d : guidelines()) {
    dims.push_back({{"name", d.name}, {"priority", priority++}, {"criteria", d.criteria}});
  }
  return {{"priority_order", {"safety", "professionalism", "fluency"}}, {"dimensions", dims}};
}

}  // namespace prefalign::annotation

#endif  // PREFALIGN_ANNOTATION_GUIDELINES_HPP_
