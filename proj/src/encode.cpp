#include "spanid/encode.hpp"

#include <algorithm>

namespace spanid {

std::pair<int, int> char_span_to_tokens(const std::vector<Token>& context_tokens, int kept, int start_char,
                                        int end_char) {
  int first = -1, last = -1;
  for (int t = 0; t < kept; ++t) {
    const Token& tk = context_tokens[t];
    if (tk.end_char <= start_char || tk.start_char >= end_char) continue;
    if (first < 0) first = t;
    last = t;
  }
  if (first < 0) return {-1, -1};
  // A span that continues past the kept window is not fully inside it.
  if (end_char > context_tokens[kept - 1].end_char) return {-1, -1};
  return {first, last};
}

MrcInput encode_example(const MrcExample& ex, const Dataset& ds, const Tokenizer& tok, int max_len,
                        EncodeStats* stats) {
  const Document* doc = ds.find_document(ex.doc_id);
  if (doc == nullptr) throw CorpusError("encode_example: unknown doc '" + ex.doc_id + "'");

  std::vector<int> query_ids = tok.encode(ex.query);
  int qlen = static_cast<int>(query_ids.size());
  if (qlen > max_len - 3)
    throw CorpusError("encode_example: query of " + std::to_string(qlen) + " tokens exceeds max_len " +
                      std::to_string(max_len) + " minus specials");

  std::vector<Token> ctx_tokens = tokenize_text(doc->text, tok.lowercase);
  int capacity = max_len - 3 - qlen;
  int kept = std::min<int>(static_cast<int>(ctx_tokens.size()), capacity);
  if (kept < static_cast<int>(ctx_tokens.size()) && stats != nullptr) stats->truncated_contexts += 1;

  MrcInput in;
  in.doc_id = ex.doc_id;
  in.category_id = ex.category_id;
  in.kind = ex.kind;
  in.token_ids.reserve(static_cast<size_t>(qlen) + kept + 3);
  in.token_ids.push_back(Tokenizer::kCls);
  for (int id : query_ids) in.token_ids.push_back(id);
  in.token_ids.push_back(Tokenizer::kSep);
  in.context_first = qlen + 2;
  for (int t = 0; t < kept; ++t) in.token_ids.push_back(tok.id_of(ctx_tokens[t].text));
  in.context_last = in.context_first + kept - 1;
  in.token_ids.push_back(Tokenizer::kSep);

  in.token_char_start.assign(in.token_ids.size(), -1);
  in.token_char_end.assign(in.token_ids.size(), -1);
  for (int t = 0; t < kept; ++t) {
    in.token_char_start[in.context_first + t] = ctx_tokens[t].start_char;
    in.token_char_end[in.context_first + t] = ctx_tokens[t].end_char;
  }

  for (const auto& [cs, ce] : ex.answers) {
    auto [ts, te] = char_span_to_tokens(ctx_tokens, kept, cs, ce);
    if (ts < 0) {
      if (stats != nullptr) stats->dropped_answers += 1;
      continue;
    }
    in.answer_spans.emplace_back(in.context_first + ts, in.context_first + te);
  }
  std::sort(in.answer_spans.begin(), in.answer_spans.end());
  in.answer_spans.erase(std::unique(in.answer_spans.begin(), in.answer_spans.end()), in.answer_spans.end());

  auto by_doc = ds.annotations_by_doc();
  auto it = by_doc.find(ex.doc_id);
  if (it != by_doc.end()) {
    for (size_t idx : it->second) {
      const auto& a = ds.annotations[idx];
      if (a.category_id == ex.category_id) continue;
      auto [ts, te] = char_span_to_tokens(ctx_tokens, kept, a.start_char, a.end_char);
      if (ts < 0) continue;
      in.negative_spans.emplace_back(in.context_first + ts, in.context_first + te);
    }
  }
  std::sort(in.negative_spans.begin(), in.negative_spans.end());
  in.negative_spans.erase(std::unique(in.negative_spans.begin(), in.negative_spans.end()), in.negative_spans.end());
  return in;
}

std::vector<MrcInput> encode_all(const std::vector<MrcExample>& examples, const Dataset& ds, const Tokenizer& tok,
                                 int max_len, EncodeStats* stats) {
  std::vector<MrcInput> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_example(ex, ds, tok, max_len, stats));
  return out;
}

}  // namespace spanid
