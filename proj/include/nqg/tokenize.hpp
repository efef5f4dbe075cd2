// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace nqg {

inline std::string lowercase(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

namespace detail {

inline bool is_detachable_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case '?':
    case '!':
    case ';':
    case ':':
    case '"':
    case '(':
    case ')':
      return true;
    default:
      return false;
  }
}

inline std::string punct_token(char c) {
  if (c == '(') return "-lrb-";
  if (c == ')') return "-rrb-";
  return std::string(1, c);
}

}  // namespace detail

namespace detail {
inline bool abbreviation_like(std::string_view with_period);
}

// Rule-based tokenizer: splits on whitespace and detaches the punctuation
// characters . , ? ! ; : " ( ) from token edges. Parentheses become -lrb- /
// -rrb-. Interior punctuation (decimals, abbreviations, hyphens) is left
// alone. This stands in for a full NLP pipeline; pre-tokenized input can
// bypass it entirely through the pair-file format.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view chunk = text.substr(i, j - i);
    i = j;

    std::size_t lo = 0, hi = chunk.size();
    std::vector<std::string> trailing;
    while (lo < hi && detail::is_detachable_punct(chunk[lo])) {
      out.push_back(detail::punct_token(chunk[lo]));
      ++lo;
    }
    while (hi > lo && detail::is_detachable_punct(chunk[hi - 1])) {
      // a trailing period stays attached to abbreviations ("u.s.", "etc.")
      if (chunk[hi - 1] == '.' &&
          detail::abbreviation_like(chunk.substr(lo, hi - lo))) {
        break;
      }
      trailing.push_back(detail::punct_token(chunk[hi - 1]));
      --hi;
    }
    if (hi > lo) out.emplace_back(chunk.substr(lo, hi - lo));
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

namespace detail {

// Abbreviations whose trailing period does not end a sentence.
inline const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> abbr = {
      "mr.",   "mrs.",  "ms.",  "dr.",  "prof.", "st.",  "jr.",   "sr.",
      "vs.",   "etc.",  "e.g.", "i.e.", "inc.",  "ltd.", "co.",   "corp.",
      "no.",   "vol.",  "fig.", "gen.", "col.",  "lt.",  "sgt.",  "capt.",
      "u.s.",  "u.k.",  "a.m.", "p.m.", "jan.",  "feb.", "mar.",  "apr.",
      "jun.",  "jul.",  "aug.", "sep.", "sept.", "oct.", "nov.",  "dec.",
  };
  return abbr;
}

// True for chunks like "u.s.", "etc.", "J." whose trailing period belongs to
// the token itself.
inline bool abbreviation_like(std::string_view with_period) {
  if (with_period.size() < 2 || with_period.back() != '.') return false;
  std::string_view core = with_period.substr(0, with_period.size() - 1);
  if (core.find('.') != std::string_view::npos) return true;
  if (abbreviations().count(lowercase(with_period))) return true;
  return core.size() == 1 && std::isalpha(static_cast<unsigned char>(core[0]));
}

inline bool ends_with_abbreviation(std::string_view text, std::size_t period_pos) {
  // word = maximal run of letters/periods ending at period_pos (inclusive)
  std::size_t start = period_pos;
  while (start > 0) {
    const char c = text[start - 1];
    const bool wordish = std::isalpha(static_cast<unsigned char>(c)) || c == '.';
    if (!wordish) break;
    --start;
  }
  std::string word = lowercase(text.substr(start, period_pos - start + 1));
  if (abbreviations().count(word)) return true;
  // single-letter initials such as "J."
  return word.size() == 2 && std::isalpha(static_cast<unsigned char>(word[0]));
}

}  // namespace detail

// Splits raw text into sentence character spans [begin, end) that partition
// the whole string. A boundary is a run of . ? ! followed by whitespace,
// unless the period closes a known abbreviation or an initial. Trailing
// whitespace is attached to the preceding sentence so every span starts at a
// non-space character.
inline std::vector<std::pair<std::size_t, std::size_t>> split_sentences(
    std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  if (text.empty()) return spans;
  std::size_t begin = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '.' || c == '?' || c == '!') {
      std::size_t run_end = i;
      while (run_end + 1 < text.size() &&
             (text[run_end + 1] == '.' || text[run_end + 1] == '?' ||
              text[run_end + 1] == '!')) {
        ++run_end;
      }
      const bool at_text_end = run_end + 1 >= text.size();
      const bool followed_by_space =
          !at_text_end && std::isspace(static_cast<unsigned char>(text[run_end + 1]));
      const bool guarded =
          c == '.' && run_end == i && detail::ends_with_abbreviation(text, i);
      if ((followed_by_space || at_text_end) && !guarded) {
        std::size_t end = run_end + 1;
        while (end < text.size() && std::isspace(static_cast<unsigned char>(text[end]))) {
          ++end;
        }
        spans.emplace_back(begin, end);
        begin = end;
        i = end;
        continue;
      }
      i = run_end + 1;
      continue;
    }
    ++i;
  }
  if (begin < text.size()) spans.emplace_back(begin, text.size());
  return spans;
}

}  // namespace nqg
