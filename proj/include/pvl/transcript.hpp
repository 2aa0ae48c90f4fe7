/* Copyright 2026 The pvl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Role-annotated conversations over an explicit symbol table.

#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pvl/error.hpp"

namespace pvl {

using TokenId = std::int32_t;

enum class TurnRole : std::uint8_t { kSystem = 0, kUser = 1, kAssistant = 2 };
inline constexpr int kNumRoles = 3;

inline const char* to_string(TurnRole r) {
  switch (r) {
    case TurnRole::kSystem: return "system";
    case TurnRole::kUser: return "user";
    case TurnRole::kAssistant: return "assistant";
  }
  return "?";
}

inline TurnRole role_from_string(std::string_view s) {
  if (s == "system") return TurnRole::kSystem;
  if (s == "user") return TurnRole::kUser;
  if (s == "assistant") return TurnRole::kAssistant;
  fail(ErrorKind::kData, "unknown role '" + std::string(s) + "'");
}

// Header symbols; when present in a vocabulary they open every turn of that
// role in the flattened token stream.
inline const char* header_symbol(TurnRole r) {
  switch (r) {
    case TurnRole::kSystem: return "<system>";
    case TurnRole::kUser: return "<user>";
    case TurnRole::kAssistant: return "<assistant>";
  }
  return "";
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const auto& s = symbols_[i];
      require(!s.empty(), ErrorKind::kData, "empty symbol at index " + std::to_string(i));
      for (char c : s)
        require(!std::isspace(static_cast<unsigned char>(c)), ErrorKind::kData,
                "symbol '" + s + "' contains whitespace");
      auto [it, inserted] = index_.emplace(s, static_cast<TokenId>(i));
      require(inserted, ErrorKind::kData, "duplicate symbol '" + s + "'");
    }
    std::uint64_t h = fnv1a64("pvl-vocab");
    for (const auto& s : symbols_) {
      h = fnv1a64(s, h);
      h = fnv1a64(std::string_view("\0", 1), h);
    }
    id_ = "vocab-" + hex64(h);
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }

  std::optional<TokenId> find(std::string_view sym) const {
    auto it = index_.find(std::string(sym));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  TokenId at(std::string_view sym) const {
    auto t = find(sym);
    require(t.has_value(), ErrorKind::kData, "unknown symbol '" + std::string(sym) + "'");
    return *t;
  }
  const std::string& symbol(TokenId t) const {
    require(t >= 0 && static_cast<std::size_t>(t) < symbols_.size(), ErrorKind::kPrecondition,
            "token id " + std::to_string(t) + " out of range");
    return symbols_[static_cast<std::size_t>(t)];
  }
  std::optional<TokenId> header(TurnRole r) const { return find(header_symbol(r)); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::string id_;
};

// Whitespace-separated exact lookup. Unknown symbols report their character
// offset within `text`.
inline std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    auto sym = text.substr(i, j - i);
    auto t = vocab.find(sym);
    if (!t) {
      fail(ErrorKind::kData,
           "unknown symbol '" + std::string(sym) + "' at offset " + std::to_string(i));
    }
    out.push_back(*t);
    i = j;
  }
  return out;
}

inline std::string detokenize(const Vocabulary& vocab, const std::vector<TokenId>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.symbol(tokens[i]);
  }
  return out;
}

struct Turn {
  TurnRole role = TurnRole::kUser;
  std::string text;
  std::vector<TokenId> tokens;
};

// Flattened view of a transcript: one entry per token position.
struct TokenStream {
  std::vector<TokenId> tokens;
  std::vector<TurnRole> roles;
  std::vector<int> turn_index;

  std::size_t size() const noexcept { return tokens.size(); }
};

class Transcript {
 public:
  Transcript() = default;
  explicit Transcript(std::string vocab_id) : vocab_id_(std::move(vocab_id)) {}

  const std::string& vocab_id() const noexcept { return vocab_id_; }
  const std::vector<Turn>& turns() const noexcept { return turns_; }
  std::size_t size() const noexcept { return turns_.size(); }
  bool empty() const noexcept { return turns_.empty(); }

  // Appends a turn, enforcing: at most one system turn and only first;
  // dialogue roles alternate.
  void add_turn(const Vocabulary& vocab, TurnRole role, std::string text) {
    check_vocab(vocab);
    check_order(role);
    Turn t{role, std::move(text), {}};
    t.tokens = tokenize(vocab, t.text);
    turns_.push_back(std::move(t));
  }

  void add_turn_tokens(const Vocabulary& vocab, TurnRole role, std::vector<TokenId> tokens) {
    check_vocab(vocab);
    check_order(role);
    Turn t{role, detokenize(vocab, tokens), std::move(tokens)};
    turns_.push_back(std::move(t));
  }

  // Extends the final turn in place (continuing generation).
  void extend_last(const Vocabulary& vocab, TokenId token) {
    require(!turns_.empty(), ErrorKind::kPrecondition, "extend_last on empty transcript");
    auto& t = turns_.back();
    t.tokens.push_back(token);
    t.text = detokenize(vocab, t.tokens);
  }

  TokenStream flatten(const Vocabulary& vocab) const {
    check_vocab(vocab);
    TokenStream s;
    for (std::size_t ti = 0; ti < turns_.size(); ++ti) {
      const auto& t = turns_[ti];
      auto push = [&](TokenId tok) {
        s.tokens.push_back(tok);
        s.roles.push_back(t.role);
        s.turn_index.push_back(static_cast<int>(ti));
      };
      if (auto h = vocab.header(t.role)) push(*h);
      for (TokenId tok : t.tokens) push(tok);
    }
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : turns_) turns.push_back({{"role", to_string(t.role)}, {"text", t.text}});
    return {{"vocab_id", vocab_id_}, {"turns", turns}};
  }

  static Transcript from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    try {
      std::string vid = j.value("vocab_id", std::string());
      require(vid.empty() || vid == vocab.id(), ErrorKind::kMismatch,
              "transcript vocab_id '" + vid + "' does not match vocabulary '" + vocab.id() + "'");
      Transcript tr(vocab.id());
      for (const auto& jt : j.at("turns"))
        tr.add_turn(vocab, role_from_string(jt.at("role").get<std::string>()),
                    jt.at("text").get<std::string>());
      return tr;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kData, std::string("malformed transcript: ") + e.what());
    }
  }

  std::string content_hash() const { return hex64(fnv1a64(to_json().dump())); }

  friend bool operator==(const Transcript& a, const Transcript& b) {
    if (a.vocab_id_ != b.vocab_id_ || a.turns_.size() != b.turns_.size()) return false;
    for (std::size_t i = 0; i < a.turns_.size(); ++i)
      if (a.turns_[i].role != b.turns_[i].role || a.turns_[i].tokens != b.turns_[i].tokens)
        return false;
    return true;
  }

 private:
  void check_vocab(const Vocabulary& vocab) const {
    if (vocab_id_.empty()) return;
    require(vocab_id_ == vocab.id(), ErrorKind::kMismatch,
            "transcript vocabulary '" + vocab_id_ + "' != '" + vocab.id() + "'");
  }
  void check_order(TurnRole role) const {
    if (role == TurnRole::kSystem) {
      require(turns_.empty(), ErrorKind::kData, "system turn allowed only as the first turn");
      return;
    }
    if (!turns_.empty() && turns_.back().role == role) {
      fail(ErrorKind::kData, std::string("role-order violation: ") + to_string(role) +
                                 " turn follows another " + to_string(role) + " turn");
    }
  }

  std::string vocab_id_;
  std::vector<Turn> turns_;
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kData, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "malformed JSON in '" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kData, "cannot write '" + path + "'");
  out << text;
}

inline Transcript load_script(const std::string& path, const Vocabulary& vocab) {
  return Transcript::from_json(read_json_file(path), vocab);
}

inline Vocabulary load_vocabulary(const std::string& path) {
  auto j = read_json_file(path);
  require(j.is_array(), ErrorKind::kData, "vocabulary file must be a JSON array of symbols");
  return Vocabulary(j.get<std::vector<std::string>>());
}

}  // namespace pvl
