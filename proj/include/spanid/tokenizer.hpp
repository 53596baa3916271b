#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spanid/corpus.hpp"

namespace spanid {

// A surface token with its codepoint range in the source text.
struct Token {
  std::string text;
  int start_char = 0;
  int end_char = 0;
};

// Splitter: runs of alphanumerics (any codepoint >= 128 counts as a letter)
// form one token, every other non-whitespace codepoint stands alone.
// "I'm in Atlanta." -> I ' m in Atlanta .
std::vector<Token> tokenize_text(const std::string& text, bool lowercase = false);

class Tokenizer {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;

  std::map<std::string, int> vocab;  // content tokens only; ids start at 4
  bool lowercase = false;

  int id_of(const std::string& token) const;
  std::vector<int> encode(const std::string& text) const;  // no specials added
  int size() const { return static_cast<int>(vocab.size()) + 4; }

  // Stable across platforms; stored in checkpoints so a model is never run
  // against a different vocabulary.
  uint64_t vocab_hash() const;
};

// Counts tokens over train-split documents; keeps those with frequency >=
// min_freq plus every token of the query templates and category
// mentions/definitions (queries must never collapse to UNK). Ids are assigned
// lexicographically after the four specials.
Tokenizer build_vocab(const Dataset& ds, int min_freq = 1, bool lowercase = false);

}  // namespace spanid
