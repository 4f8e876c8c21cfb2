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

#ifndef PREFALIGN_VOCABULARY_HPP_
#define PREFALIGN_VOCABULARY_HPP_

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace prefalign {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

// Separator between dialogue turns inside a context string (ASCII record
// separator). Turn texts never contain it; the data loaders enforce that.
inline constexpr std::string_view kTurnSeparatorText = "\x1e";

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three markers.
//
// A context made of dialogue turns u1, a1, u2 is laid out as
//
//   u1 <bor> a1 <eor> <sep> u2
//
// and a scored response is appended as `<bor> response <eor>`, so scoring a
// dialogue turn by turn visits exactly the same token stream as scoring the
// whole dialogue in one pass.
class Vocabulary {
 public:
  static constexpr Token kBeginResponse = 256;
  static constexpr Token kEndResponse = 257;
  static constexpr Token kTurnSeparator = 258;
  static constexpr int kSize = 259;

  static constexpr int size() { return kSize; }

  static bool is_marker(Token t) { return t >= 256 && t < kSize; }

  static std::string symbol(Token t) {
    switch (t) {
      case kBeginResponse: return "<bor>";
      case kEndResponse: return "<eor>";
      case kTurnSeparator: return "<sep>";
      default: break;
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", static_cast<unsigned>(t & 0xff));
    return buf;
  }

  static std::vector<std::string> symbols() {
    std::vector<std::string> out;
    out.reserve(kSize);
    for (Token t = 0; t < kSize; ++t) out.push_back(symbol(t));
    return out;
  }

  static TokenSequence encode(std::string_view text) {
    TokenSequence out;
    out.reserve(text.size());
    for (char c : text) out.push_back(static_cast<Token>(static_cast<unsigned char>(c)));
    return out;
  }

  // Markers carry no bytes and are dropped.
  static std::string decode(const TokenSequence& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (Token t : tokens) {
      if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
  }

  // Sampled bytes as storable text: ill-formed UTF-8 and the turn separator
  // byte each become U+FFFD.
  static std::string decode_text(const TokenSequence& tokens) {
    const std::string raw = decode(tokens);
    static const std::string kReplacement = "\xEF\xBF\xBD";
    std::string out;
    std::size_t i = 0;
    while (i < raw.size()) {
      const auto b = static_cast<unsigned char>(raw[i]);
      std::size_t len = 0;
      unsigned lo = 0x80, hi = 0xBF;
      if (b < 0x80) len = 1;
      else if (b >= 0xC2 && b <= 0xDF) len = 2;
      else if (b >= 0xE0 && b <= 0xEF) {
        len = 3;
        if (b == 0xE0) lo = 0xA0;
        if (b == 0xED) hi = 0x9F;
      } else if (b >= 0xF0 && b <= 0xF4) {
        len = 4;
        if (b == 0xF0) lo = 0x90;
        if (b == 0xF4) hi = 0x8F;
      }
      bool ok = len > 0 && i + len <= raw.size();
      for (std::size_t k = 1; ok && k < len; ++k) {
        const auto c = static_cast<unsigned char>(raw[i + k]);
        ok = k == 1 ? (c >= lo && c <= hi) : (c >= 0x80 && c <= 0xBF);
      }
      if (!ok || b == static_cast<unsigned char>(kTurnSeparatorText[0])) {
        out += kReplacement;
        ++i;
      } else {
        out.append(raw, i, len);
        i += len;
      }
    }
    return out;
  }

  static std::vector<std::string> split_turns(std::string_view context) {
    std::vector<std::string> turns;
    if (context.empty()) return turns;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = context.find(kTurnSeparatorText, start);
      if (pos == std::string_view::npos) {
        turns.emplace_back(context.substr(start));
        break;
      }
      turns.emplace_back(context.substr(start, pos - start));
      start = pos + kTurnSeparatorText.size();
    }
    return turns;
  }

  static std::string join_turns(const std::vector<std::string>& turns) {
    std::string out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      if (i > 0) out.append(kTurnSeparatorText);
      out.append(turns[i]);
    }
    return out;
  }

  // Even-indexed turns are user turns, odd-indexed turns assistant turns.
  static TokenSequence encode_turns(const std::vector<std::string>& turns) {
    TokenSequence out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const bool assistant = (i % 2) == 1;
      if (assistant) {
        out.push_back(kBeginResponse);
      } else if (i > 0) {
        out.push_back(kTurnSeparator);
      }
      const TokenSequence body = encode(turns[i]);
      out.insert(out.end(), body.begin(), body.end());
      if (assistant) out.push_back(kEndResponse);
    }
    return out;
  }

  static TokenSequence prompt_tokens(std::string_view context) {
    return encode_turns(split_turns(context));
  }

  static TokenSequence response_tokens(std::string_view response) {
    TokenSequence out = encode(response);
    out.push_back(kEndResponse);
    return out;
  }
};

}  // namespace prefalign

#endif  // PREFALIGN_VOCABULARY_HPP_
