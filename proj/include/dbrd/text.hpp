#pragma once

// Report text normalization.
//
// clean() works token by token on whitespace boundaries:
//   1. tokens holding any non-ASCII byte are dropped (the "non-English" rule;
//      a dataset in another language would swap this predicate),
//   2. every character other than ASCII letters, digits, '.' and ',' is removed,
//   3. letters are lowercased,
//   4. tokens that end up empty, or whose core (with leading/trailing '.' and
//      ',' trimmed) is a stopword, are dropped.
// Surviving tokens are joined with single spaces. Because every surviving
// token already passes all four rules, clean(clean(x)) == clean(x).

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace dbrd {

// English stopwords (the NLTK list with apostrophes stripped, since step 2
// removes them before the lookup). Sorted for binary search. Changing this
// list changes cleaned text and every downstream artifact.
inline constexpr std::array<std::string_view, 178> kStopwords = {
    "a", "about", "above", "after", "again", "against", "ain", "all", "am",
    "an", "and", "any", "are", "aren", "arent", "as", "at", "be", "because",
    "been", "before", "being", "below", "between", "both", "but", "by", "can",
    "couldn", "couldnt", "d", "did", "didn", "didnt", "do", "does", "doesn",
    "doesnt", "doing", "don", "dont", "down", "during", "each", "few", "for",
    "from", "further", "had", "hadn", "hadnt", "has", "hasn", "hasnt", "have",
    "haven", "havent", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "isn", "isnt", "it",
    "its", "itself", "just", "ll", "m", "ma", "me", "mightn", "mightnt", "more",
    "most", "mustn", "mustnt", "my", "myself", "needn", "neednt", "no", "nor",
    "not", "now", "o", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "ourselves", "out", "over", "own", "re", "s", "same", "shan",
    "shant", "she", "shes", "should", "shouldn", "shouldnt", "shouldve", "so",
    "some", "such", "t", "than", "that", "thatll", "the", "their", "theirs",
    "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "ve", "very", "was", "wasn",
    "wasnt", "we", "were", "weren", "werent", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "won", "wont", "wouldn",
    "wouldnt", "y", "you", "youd", "youll", "your", "youre", "yours",
    "yourself", "yourselves", "youve",
};

inline bool is_stopword(std::string_view word) {
  return std::binary_search(kStopwords.begin(), kStopwords.end(), word);
}

namespace detail {

constexpr bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

constexpr bool is_kept(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '.' || c == ',';
}

constexpr char to_lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

inline std::string_view trim_punct(std::string_view s) {
  while (!s.empty() && (s.front() == '.' || s.front() == ',')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.remove_suffix(1);
  return s;
}

template <typename Fn>
void for_each_raw_token(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) fn(text.substr(i, j - i));
    i = j;
  }
}

}  // namespace detail

inline std::string clean(std::string_view text) {
  std::string out;
  std::string tok;
  detail::for_each_raw_token(text, [&](std::string_view raw) {
    for (char c : raw) {
      if (static_cast<unsigned char>(c) >= 0x80) return;
    }
    tok.clear();
    for (char c : raw) {
      if (detail::is_kept(c)) tok.push_back(detail::to_lower(c));
    }
    if (tok.empty()) return;
    if (is_stopword(detail::trim_punct(tok))) return;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  });
  return out;
}

// Index terms of cleaned text: tokens with sentence punctuation trimmed.
// "crash." and "crash" are the same term; "org.eclipse.ui" stays whole.
inline std::vector<std::string> terms(std::string_view cleaned) {
  std::vector<std::string> out;
  detail::for_each_raw_token(cleaned, [&](std::string_view raw) {
    auto t = detail::trim_punct(raw);
    if (!t.empty()) out.emplace_back(t);
  });
  return out;
}

}  // namespace dbrd
