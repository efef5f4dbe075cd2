// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nqg/errors.hpp"

namespace nqg {

// Bidirectional token <-> id map with the four reserved entries at fixed ids.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int sos_id = 2;
  static constexpr int eos_id = 3;
  static constexpr std::size_t reserved_count = 4;

  static const std::string& pad_token() {
    static const std::string t = "<pad>";
    return t;
  }
  static const std::string& unk_token() {
    static const std::string t = "<unk>";
    return t;
  }
  static const std::string& sos_token() {
    static const std::string t = "<sos>";
    return t;
  }
  static const std::string& eos_token() {
    static const std::string t = "<eos>";
    return t;
  }

  Vocabulary() {
    for (const std::string& t :
         {pad_token(), unk_token(), sos_token(), eos_token()}) {
      ids_[t] = static_cast<int>(tokens_.size());
      tokens_.push_back(t);
    }
  }

  // Rebuilds from an ordered token list (checkpoint load). The reserved
  // entries must be present in their fixed slots.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    if (tokens.size() < reserved_count || tokens[0] != pad_token() ||
        tokens[1] != unk_token() || tokens[2] != sos_token() ||
        tokens[3] != eos_token()) {
      throw ParseError("vocabulary list does not start with the reserved tokens");
    }
    for (std::size_t i = reserved_count; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  // Unknown tokens map to UNK.
  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw UsageError("vocabulary id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Keeps the `cap` most frequent tokens (reserved entries excluded from the
// cap), ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& sequences,
                              std::size_t cap) {
  if (cap < 1) throw ConfigError("build_vocab: cap must be >= 1");
  std::map<std::string, std::size_t> counts;
  Vocabulary reserved_probe;
  for (const auto& seq : sequences) {
    for (const auto& tok : seq) {
      if (tok == Vocabulary::pad_token() || tok == Vocabulary::unk_token() ||
          tok == Vocabulary::sos_token() || tok == Vocabulary::eos_token()) {
        continue;
      }
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (std::size_t i = 0; i < ranked.size() && i < cap; ++i) v.add(ranked[i].first);
  return v;
}

}  // namespace nqg
