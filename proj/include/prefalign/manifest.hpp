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


#ifndef PREFALIGN_MANIFEST_HPP_
#define PREFALIGN_MANIFEST_HPP_

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/checkpoint.hpp"
#include "prefalign/error.hpp"

namespace prefalign {

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::kIo, "SHA-256 failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  static const char* kDigits = "0123456789abcdef";
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kDigits[digest[i] >> 4]);
    hex.push_back(kDigits[digest[i] & 0xf]);
  }
  return hex;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One JSON line per artifact-producing command.
struct ManifestEntry {
  std::string stage;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  std::uint64_t seed = 0;
  std::string config;  // effective configuration text, hashed
  std::vector<std::string> argv;
};

inline nlohmann::json manifest_record(const ManifestEntry& e) {
  auto files = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : paths) out.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return out;
  };
  return {{"stage", e.stage},
          {"inputs", files(e.inputs)},
          {"outputs", files(e.outputs)},
          {"seed", e.seed},
          {"config_sha256", sha256_hex(e.config)},
          {"argv", e.argv},
          {"timestamp", utc_timestamp()}};
}

inline void append_manifest(const std::filesystem::path& manifest, const ManifestEntry& e) {
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  const std::string line = manifest_record(e).dump() + "\n";
  std::ofstream out(manifest, std::ios::app | std::ios::binary);
  if (!out || !(out << line) || !out.flush()) fail(ErrorCode::kIo, "cannot append to " + manifest.string());
}

}  // namespace prefalign

#endif  // PREFALIGN_MANIFEST_HPP_
