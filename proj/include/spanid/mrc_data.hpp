#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spanid/corpus.hpp"

namespace spanid {

enum class MrcKind { SUB, PR };

const char* mrc_kind_name(MrcKind k);

// Instance identity for spans feeding peer pairing: (doc_id, start, end).
// Equal surfaces at different positions are distinct members.
struct SpanRef {
  std::string doc_id;
  int start_char = 0;
  int end_char = 0;
  std::string surface;

  auto key() const { return std::tie(doc_id, start_char, end_char); }
  bool operator==(const SpanRef& o) const { return key() == o.key(); }
  bool operator<(const SpanRef& o) const { return key() < o.key(); }
};

// All train-split spans of one category, sorted by instance key.
struct SpanSet {
  int category_id = 0;
  std::vector<SpanRef> members;
};

// Ordered: (a,b) and (b,a) are different pairs.
struct PeerPair {
  SpanRef query_span;
  SpanRef answer_span;
  int category_id = 0;

  bool operator==(const PeerPair& o) const {
    return query_span == o.query_span && answer_span == o.answer_span && category_id == o.category_id;
  }
};

enum class AugmentStrategy { none, size, categ, both };

const char* strategy_name(AugmentStrategy s);
std::optional<AugmentStrategy> parse_strategy(const std::string& s);

struct AugmentConfig {
  AugmentStrategy strategy = AugmentStrategy::none;
  double lambda = 1.0;  // may be negative; negative requested counts clamp to 0
  uint64_t seed = 0;
};

// Where a PR query came from; serialized so examples can be traced back.
struct PrProvenance {
  std::string doc_id;
  int start_char = 0;
  int end_char = 0;
};

struct MrcExample {
  MrcKind kind = MrcKind::SUB;
  std::string query;
  std::string doc_id;  // context document
  std::vector<std::pair<int, int>> answers;  // char offsets into the context
  int category_id = 0;
  std::optional<PrProvenance> provenance;  // PR only

  bool answerable() const { return !answers.empty(); }
};

// Per-category accounting of one sample_pairs run.
struct AugmentLogRow {
  int category_id = 0;
  int64_t set_size = 0;    // |S_y|
  int64_t pair_count = 0;  // |S_y|*(|S_y|-1)
  int64_t requested = 0;
  int64_t actual = 0;
};

// "Highlight the parts (if any) related to {mention}. Details: {definition}."
// The Details clause is dropped when the definition is empty. Mention and
// definition are whitespace-normalized before substitution.
std::string build_sub_query(const Category& cat);

// "Highlight the parts (if any) similar to {surface}."
std::string build_pr_query(const std::string& query_surface);

// One example per (document of `split`, category): answers are all gold spans
// of that category in the document, possibly none.
std::vector<MrcExample> build_sub_examples(const Dataset& ds, Split split = Split::train);

std::map<int, SpanSet> build_span_sets(const Dataset& ds);

// All |S|*(|S|-1) ordered pairs, sorted by (query key, answer key).
std::vector<PeerPair> enumerate_peer_pairs(const SpanSet& s);

// The pair enumerate_peer_pairs(s)[k], computed without materializing the
// list. k in [0, |S|*(|S|-1)).
PeerPair pair_at(const SpanSet& s, uint64_t k);

// floor(x + 0.5); -4.5 -> -4.
int64_t round_half_up(double x);

// Requested PR count for one category before clamping to |P_y|:
//   size:  max(round(lambda*|S_y|), 0)
//   categ: max(|S_y*| - |S_y|, 0)
//   both:  round(max(lambda*|S_y*| + (|S_y*| - |S_y|), 0))
//   none:  0
int64_t requested_pairs(const AugmentConfig& cfg, int64_t set_size, int64_t max_set_size);

// min(requested, |P_y|) pairs per category, uniform without replacement,
// deterministic per (sets, cfg). y* is the category with the largest set.
std::map<int, std::vector<PeerPair>> sample_pairs(const std::map<int, SpanSet>& sets, const AugmentConfig& cfg,
                                                  std::vector<AugmentLogRow>* log = nullptr);

// One example per pair: query from the first span's surface, context = the
// second span's document, answers = every gold span of the pair's category in
// that document. Always answerable.
std::vector<MrcExample> build_pr_examples(const std::map<int, std::vector<PeerPair>>& pairs, const Dataset& ds);

// Keeps every answerable example; downsamples unanswerable ones to
// min(#unanswerable, round_half_up(ratio * #answerable)), uniformly without
// replacement, preserving input order.
std::vector<MrcExample> balance(const std::vector<MrcExample>& examples, uint64_t seed, double ratio = 1.0);

// For each train annotation, with probability `rate` swaps its surface for a
// different surface of the same category (uniform over the category's train
// surfaces), shifting downstream offsets. Spans that strictly contain another
// span keep their surface; spans sharing an identical range are rewritten
// together. Dev and test documents pass through untouched.
Dataset mention_replace(const Dataset& ds, double rate, uint64_t seed);

std::string serialize_mrc(const std::vector<MrcExample>& examples);
std::vector<MrcExample> parse_mrc(const std::string& jsonl);
void save_mrc(const std::vector<MrcExample>& examples, const std::string& path);
std::vector<MrcExample> load_mrc(const std::string& path);

}  // namespace spanid
