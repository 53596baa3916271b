#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spanid/mrc_data.hpp"
#include "spanid/tokenizer.hpp"

namespace spanid {

// One encoded sequence: [CLS] query [SEP] context [SEP]. Token span indices
// are inclusive on both ends and always inside [context_first, context_last].
struct MrcInput {
  std::vector<int> token_ids;
  int context_first = 0;
  int context_last = -1;  // -1: context fully truncated away

  std::vector<std::pair<int, int>> answer_spans;    // gold, token indices
  std::vector<std::pair<int, int>> negative_spans;  // gold spans of other categories

  // Char offsets of each position's source token; -1 at specials and query.
  std::vector<int> token_char_start;
  std::vector<int> token_char_end;

  std::string doc_id;
  int category_id = 0;
  MrcKind kind = MrcKind::SUB;

  bool answerable() const { return !answer_spans.empty(); }
  int length() const { return static_cast<int>(token_ids.size()); }
  int context_len() const { return context_last < context_first ? 0 : context_last - context_first + 1; }
};

struct EncodeStats {
  int64_t dropped_answers = 0;     // gold answers lost to truncation or misalignment
  int64_t truncated_contexts = 0;  // contexts that did not fit max_len
};

// Maps a char span to the smallest covering token range, or (-1,-1) when the
// range is outside the kept context.
std::pair<int, int> char_span_to_tokens(const std::vector<Token>& context_tokens, int kept, int start_char,
                                        int end_char);

// The query is never truncated; the context is cut to fit max_len. Answers
// that do not survive truncation are dropped and counted in `stats`.
// Negative spans are the doc's gold spans of every other category.
MrcInput encode_example(const MrcExample& ex, const Dataset& ds, const Tokenizer& tok, int max_len,
                        EncodeStats* stats = nullptr);

std::vector<MrcInput> encode_all(const std::vector<MrcExample>& examples, const Dataset& ds, const Tokenizer& tok,
                                 int max_len, EncodeStats* stats = nullptr);

}  // namespace spanid
