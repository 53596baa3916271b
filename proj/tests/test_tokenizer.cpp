#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>
#include <string>

#include "doctest.h"
#include "spanid/corpus.hpp"
#include "spanid/encode.hpp"
#include "spanid/mrc_data.hpp"
#include "spanid/text.hpp"
#include "spanid/tokenizer.hpp"

using namespace spanid;

namespace {

Dataset atlanta_dataset() {
  Dataset ds;
  Category c;
  c.id = 0;
  c.name = "GPE";
  c.mention = "person names";
  c.definition = "";
  ds.categories = {c};
  ds.documents = {{"d1", "I'm in Atlanta.", Split::train}};
  SpanAnnotation a;
  a.doc_id = "d1";
  a.start_char = 7;
  a.end_char = 14;
  a.category_id = 0;
  a.surface = "Atlanta";
  ds.annotations = {a};
  return ds;
}

}  // namespace

TEST_CASE("tokenize_text splits alnum runs and isolates punctuation") {
  auto toks = tokenize_text("I'm in Atlanta.");
  REQUIRE(toks.size() == 6);
  const char* expect_text[] = {"I", "'", "m", "in", "Atlanta", "."};
  int expect_off[][2] = {{0, 1}, {1, 2}, {2, 3}, {4, 6}, {7, 14}, {14, 15}};
  for (size_t i = 0; i < 6; ++i) {
    CHECK(toks[i].text == expect_text[i]);
    CHECK(toks[i].start_char == expect_off[i][0]);
    CHECK(toks[i].end_char == expect_off[i][1]);
  }
}

TEST_CASE("tokenize_text treats non-ascii codepoints as letters") {
  auto toks = tokenize_text("S\xc3\xa3o Paulo");
  REQUIRE(toks.size() == 2);
  CHECK(toks[0].text == "S\xc3\xa3o");
  CHECK(toks[0].start_char == 0);
  CHECK(toks[0].end_char == 3);  // codepoints, not bytes
  CHECK(toks[1].start_char == 4);
  CHECK(toks[1].end_char == 9);
}

TEST_CASE("tokenize_text keeps each punctuation codepoint separate") {
  auto toks = tokenize_text("a--b");
  REQUIRE(toks.size() == 4);
  CHECK(toks[1].text == "-");
  CHECK(toks[2].text == "-");
  CHECK(toks[1].start_char == 1);
  CHECK(toks[2].start_char == 2);

  auto mixed = tokenize_text("x2go");
  REQUIRE(mixed.size() == 1);  // digits extend an alnum run
  CHECK(mixed[0].text == "x2go");
}

TEST_CASE("tokenize_text lowercase mode folds ascii only") {
  auto toks = tokenize_text("Atlanta GPE", true);
  REQUIRE(toks.size() == 2);
  CHECK(toks[0].text == "atlanta");
  CHECK(toks[1].text == "gpe");
  CHECK(toks[0].start_char == 0);
  CHECK(toks[0].end_char == 7);
}

TEST_CASE("build_vocab: specials, lexicographic ids, min_freq") {
  Dataset ds;
  Category c;
  c.id = 0;
  c.name = "X";
  c.mention = "zulu";
  c.definition = "";
  ds.categories = {c};
  ds.documents = {{"d1", "bb aa bb cc", Split::train}, {"d2", "devonly devonly devonly", Split::dev}};

  Tokenizer tok = build_vocab(ds, 2);
  // bb appears twice; aa and cc once and are dropped; dev text never counts;
  // the template and the mention stay regardless of frequency.
  CHECK(tok.vocab.count("bb") == 1);
  CHECK(tok.vocab.count("aa") == 0);
  CHECK(tok.vocab.count("cc") == 0);
  CHECK(tok.vocab.count("devonly") == 0);
  CHECK(tok.vocab.count("zulu") == 1);
  CHECK(tok.vocab.count("Highlight") == 1);
  CHECK(tok.vocab.count("(") == 1);
  CHECK(tok.vocab.count(".") == 1);

  // ids: 0..3 reserved, then sorted content tokens
  std::vector<std::string> sorted;
  for (const auto& [t, id] : tok.vocab) sorted.push_back(t);
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) CHECK(tok.vocab.at(sorted[i]) == static_cast<int>(i) + 4);
  CHECK(tok.size() == static_cast<int>(tok.vocab.size()) + 4);

  CHECK(tok.id_of("bb") >= 4);
  CHECK(tok.id_of("missing") == Tokenizer::kUnk);
}

TEST_CASE("build_vocab keeps definition tokens and respects lowercase") {
  Dataset ds;
  Category c;
  c.id = 0;
  c.name = "X";
  c.mention = "Thing";
  c.definition = "Rare jargon";
  ds.categories = {c};
  ds.documents = {{"d1", "plain text", Split::train}};

  Tokenizer tok = build_vocab(ds, 5, true);
  CHECK(tok.lowercase);
  CHECK(tok.vocab.count("jargon") == 1);
  CHECK(tok.vocab.count("thing") == 1);
  CHECK(tok.vocab.count("Thing") == 0);
  // frequency threshold still drops corpus-only tokens
  CHECK(tok.vocab.count("plain") == 0);
}

TEST_CASE("vocab_hash is stable and sensitive") {
  Dataset ds = atlanta_dataset();
  Tokenizer a = build_vocab(ds, 1);
  Tokenizer b = build_vocab(ds, 1);
  CHECK(a.vocab_hash() == b.vocab_hash());

  Tokenizer c = a;
  c.vocab["zzzz"] = c.size();
  CHECK(c.vocab_hash() != a.vocab_hash());

  Tokenizer d = a;
  d.lowercase = !d.lowercase;
  CHECK(d.vocab_hash() != a.vocab_hash());
}

TEST_CASE("encode maps unknown tokens to UNK without specials") {
  Dataset ds = atlanta_dataset();
  Tokenizer tok = build_vocab(ds, 1);
  auto ids = tok.encode("in Atlanta xyzzy");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == tok.id_of("in"));
  CHECK(ids[1] == tok.id_of("Atlanta"));
  CHECK(ids[2] == Tokenizer::kUnk);
  for (int id : ids) CHECK(id != Tokenizer::kCls);
}

TEST_CASE("encode_example lays out [CLS] query [SEP] context [SEP]") {
  Dataset ds = atlanta_dataset();
  Tokenizer tok = build_vocab(ds, 1);
  auto subs = build_sub_examples(ds);
  REQUIRE(subs.size() == 1);
  CHECK(subs[0].query == "Highlight the parts (if any) related to person names.");

  MrcInput in = encode_example(subs[0], ds, tok, 64);
  // query: Highlight the parts ( if any ) related to person names . = 12 tokens
  REQUIRE(in.length() == 1 + 12 + 1 + 6 + 1);
  CHECK(in.token_ids[0] == Tokenizer::kCls);
  CHECK(in.token_ids[13] == Tokenizer::kSep);
  CHECK(in.token_ids[20] == Tokenizer::kSep);
  CHECK(in.context_first == 14);
  CHECK(in.context_last == 19);
  CHECK(in.context_len() == 6);
  CHECK(in.token_ids[14] == tok.id_of("I"));
  CHECK(in.token_ids[18] == tok.id_of("Atlanta"));

  REQUIRE(in.answer_spans.size() == 1);
  CHECK(in.answer_spans[0] == std::pair<int, int>{18, 18});
  CHECK(in.negative_spans.empty());

  CHECK(in.token_char_start[18] == 7);
  CHECK(in.token_char_end[18] == 14);
  CHECK(in.token_char_start[0] == -1);   // CLS
  CHECK(in.token_char_start[5] == -1);   // query region
  CHECK(in.token_char_start[13] == -1);  // SEP
  CHECK(in.token_char_start[20] == -1);  // final SEP
  CHECK(in.token_char_start[14] == 0);
  CHECK(in.token_char_end[19] == 15);
}

TEST_CASE("encode_example truncates the context, never the query") {
  Dataset ds = atlanta_dataset();
  Tokenizer tok = build_vocab(ds, 1);
  auto subs = build_sub_examples(ds);

  // 1 CLS + 12 query + SEP = 14; max_len 17 leaves room for 2 context tokens + SEP
  EncodeStats stats;
  MrcInput in = encode_example(subs[0], ds, tok, 17, &stats);
  CHECK(in.length() == 17);
  CHECK(in.context_first == 14);
  CHECK(in.context_last == 15);
  CHECK(in.context_len() == 2);
  CHECK(in.token_ids[16] == Tokenizer::kSep);
  CHECK(in.answer_spans.empty());  // Atlanta fell off
  CHECK(stats.dropped_answers == 1);
  CHECK(stats.truncated_contexts == 1);

  // query alone too long for max_len
  CHECK_THROWS_AS(encode_example(subs[0], ds, tok, 10), CorpusError);
}

TEST_CASE("char_span_to_tokens covers partial overlaps and misses") {
  auto toks = tokenize_text("I'm in Atlanta.");
  // exact token
  CHECK(char_span_to_tokens(toks, 6, 7, 14) == std::pair<int, int>{4, 4});
  // covers "in Atlanta" -> tokens 3..4
  CHECK(char_span_to_tokens(toks, 6, 4, 14) == std::pair<int, int>{3, 4});
  // starts mid-token: smallest covering range still includes the token
  CHECK(char_span_to_tokens(toks, 6, 8, 14) == std::pair<int, int>{4, 4});
  // whitespace-only range maps nowhere
  CHECK(char_span_to_tokens(toks, 6, 3, 4) == std::pair<int, int>{-1, -1});
  // past the kept prefix
  CHECK(char_span_to_tokens(toks, 4, 7, 14) == std::pair<int, int>{-1, -1});
  CHECK(char_span_to_tokens(toks, 6, 14, 15) == std::pair<int, int>{5, 5});
}

TEST_CASE("negative spans are other categories' gold spans") {
  Dataset ds;
  Category gpe;
  gpe.id = 0;
  gpe.name = "GPE";
  gpe.mention = "places";
  Category per;
  per.id = 1;
  per.name = "PER";
  per.mention = "people";
  ds.categories = {gpe, per};
  ds.documents = {{"d1", "Ada visited Atlanta today.", Split::train}};
  auto add = [&](int s, int e, int cat) {
    SpanAnnotation a;
    a.doc_id = "d1";
    a.start_char = s;
    a.end_char = e;
    a.category_id = cat;
    a.surface = cp_slice(ds.documents[0].text, s, e);
    ds.annotations.push_back(a);
  };
  add(12, 19, 0);  // Atlanta
  add(0, 3, 1);    // Ada

  Tokenizer tok = build_vocab(ds, 1);
  auto subs = build_sub_examples(ds);
  for (const auto& ex : subs) {
    MrcInput in = encode_example(ex, ds, tok, 64);
    REQUIRE(in.answer_spans.size() == 1);
    REQUIRE(in.negative_spans.size() == 1);
    CHECK(in.answer_spans[0] != in.negative_spans[0]);
    // both kinds sit inside the context window
    for (auto [s, e] : in.negative_spans) {
      CHECK(s >= in.context_first);
      CHECK(e <= in.context_last);
    }
  }
}

TEST_CASE("encode_all preserves order and accumulates stats") {
  Dataset ds = gen_synthetic(5, 30, 1.0);
  Tokenizer tok = build_vocab(ds, 1);
  auto subs = build_sub_examples(ds);
  EncodeStats stats;
  auto inputs = encode_all(subs, ds, tok, 64, &stats);
  REQUIRE(inputs.size() == subs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    CHECK(inputs[i].doc_id == subs[i].doc_id);
    CHECK(inputs[i].category_id == subs[i].category_id);
    size_t gold = subs[i].answers.size();
    CHECK(inputs[i].answer_spans.size() <= gold);
  }
  CHECK(stats.dropped_answers >= 0);

  // tight budget: room for every query plus a 5-token context window
  size_t maxq = 0;
  for (const auto& ex : subs) maxq = std::max(maxq, tokenize_text(ex.query, false).size());
  EncodeStats tight;
  auto small = encode_all(subs, ds, tok, static_cast<int>(maxq) + 3 + 5, &tight);
  CHECK(tight.truncated_contexts > 0);
  CHECK(small.size() == subs.size());
}
