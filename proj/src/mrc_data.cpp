#include "spanid/mrc_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spanid/rng.hpp"
#include "spanid/text.hpp"

namespace spanid {

using nlohmann::json;

const char* mrc_kind_name(MrcKind k) { return k == MrcKind::SUB ? "SUB" : "PR"; }

const char* strategy_name(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::none: return "none";
    case AugmentStrategy::size: return "size";
    case AugmentStrategy::categ: return "categ";
    case AugmentStrategy::both: return "both";
  }
  return "none";
}

std::optional<AugmentStrategy> parse_strategy(const std::string& s) {
  if (s == "none") return AugmentStrategy::none;
  if (s == "size") return AugmentStrategy::size;
  if (s == "categ") return AugmentStrategy::categ;
  if (s == "both") return AugmentStrategy::both;
  return std::nullopt;
}

std::string build_sub_query(const Category& cat) {
  std::string mention = normalize_ws(cat.mention);
  if (mention.empty()) throw CorpusError("build_sub_query: category " + std::to_string(cat.id) + " has empty mention");
  std::string definition = normalize_ws(cat.definition);
  std::string q = "Highlight the parts (if any) related to " + mention + ".";
  if (!definition.empty()) q += " Details: " + definition + ".";
  return q;
}

std::string build_pr_query(const std::string& query_surface) {
  std::string surface = normalize_ws(query_surface);
  if (surface.empty()) throw CorpusError("build_pr_query: empty query surface");
  return "Highlight the parts (if any) similar to " + surface + ".";
}

std::vector<MrcExample> build_sub_examples(const Dataset& ds, Split split) {
  std::vector<MrcExample> out;
  auto by_doc = ds.annotations_by_doc();
  for (const auto& doc : ds.documents) {
    if (doc.split != split) continue;
    auto it = by_doc.find(doc.doc_id);
    for (const auto& cat : ds.categories) {
      MrcExample ex;
      ex.kind = MrcKind::SUB;
      ex.query = build_sub_query(cat);
      ex.doc_id = doc.doc_id;
      ex.category_id = cat.id;
      if (it != by_doc.end()) {
        for (size_t idx : it->second) {
          const auto& a = ds.annotations[idx];
          if (a.category_id == cat.id) ex.answers.emplace_back(a.start_char, a.end_char);
        }
        std::sort(ex.answers.begin(), ex.answers.end());
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::map<int, SpanSet> build_span_sets(const Dataset& ds) {
  std::map<int, SpanSet> sets;
  for (const auto& cat : ds.categories) {
    sets[cat.id].category_id = cat.id;
  }
  for (const auto& a : ds.annotations) {
    const Document* doc = ds.find_document(a.doc_id);
    if (doc == nullptr || doc->split != Split::train) continue;
    sets[a.category_id].members.push_back({a.doc_id, a.start_char, a.end_char, a.surface});
  }
  for (auto& [id, s] : sets) {
    std::sort(s.members.begin(), s.members.end());
    s.members.erase(std::unique(s.members.begin(), s.members.end()), s.members.end());
  }
  return sets;
}

std::vector<PeerPair> enumerate_peer_pairs(const SpanSet& s) {
  std::vector<PeerPair> out;
  size_t n = s.members.size();
  if (n < 2) return out;
  out.reserve(n * (n - 1));
  for (size_t q = 0; q < n; ++q)
    for (size_t a = 0; a < n; ++a)
      if (a != q) out.push_back({s.members[q], s.members[a], s.category_id});
  return out;
}

PeerPair pair_at(const SpanSet& s, uint64_t k) {
  uint64_t n = s.members.size();
  if (n < 2 || k >= n * (n - 1)) throw CorpusError("pair_at: index out of range");
  uint64_t q = k / (n - 1);
  uint64_t r = k % (n - 1);
  uint64_t a = r + (r >= q ? 1 : 0);
  return {s.members[q], s.members[a], s.category_id};
}

int64_t round_half_up(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

int64_t requested_pairs(const AugmentConfig& cfg, int64_t set_size, int64_t max_set_size) {
  switch (cfg.strategy) {
    case AugmentStrategy::none:
      return 0;
    case AugmentStrategy::size:
      return std::max<int64_t>(round_half_up(cfg.lambda * static_cast<double>(set_size)), 0);
    case AugmentStrategy::categ:
      return std::max<int64_t>(max_set_size - set_size, 0);
    case AugmentStrategy::both: {
      double raw = cfg.lambda * static_cast<double>(max_set_size) + static_cast<double>(max_set_size - set_size);
      return round_half_up(std::max(raw, 0.0));
    }
  }
  return 0;
}

std::map<int, std::vector<PeerPair>> sample_pairs(const std::map<int, SpanSet>& sets, const AugmentConfig& cfg,
                                                  std::vector<AugmentLogRow>* log) {
  int64_t max_set_size = 0;
  for (const auto& [id, s] : sets) max_set_size = std::max<int64_t>(max_set_size, s.members.size());

  std::map<int, std::vector<PeerPair>> out;
  if (log != nullptr) log->clear();
  Rng root(cfg.seed);
  for (const auto& [id, s] : sets) {
    auto n = static_cast<int64_t>(s.members.size());
    int64_t pair_count = n * (n - 1);
    int64_t requested = requested_pairs(cfg, n, max_set_size);
    int64_t actual = std::min(requested, pair_count);
    std::vector<PeerPair>& pairs = out[id];
    if (actual > 0) {
      Rng rng = root.fork(static_cast<uint64_t>(id));
      for (uint64_t k : rng.sample_indices(static_cast<uint64_t>(pair_count), static_cast<uint64_t>(actual)))
        pairs.push_back(pair_at(s, k));
    }
    if (log != nullptr) log->push_back({id, n, pair_count, requested, actual});
  }
  return out;
}

std::vector<MrcExample> build_pr_examples(const std::map<int, std::vector<PeerPair>>& pairs, const Dataset& ds) {
  auto by_doc = ds.annotations_by_doc();
  std::vector<MrcExample> out;
  for (const auto& [cat_id, list] : pairs) {
    for (const auto& p : list) {
      auto it = by_doc.find(p.answer_span.doc_id);
      if (it == by_doc.end() || ds.find_document(p.answer_span.doc_id) == nullptr)
        throw CorpusError("build_pr_examples: pair references unknown doc '" + p.answer_span.doc_id + "'");
      MrcExample ex;
      ex.kind = MrcKind::PR;
      ex.query = build_pr_query(p.query_span.surface);
      ex.doc_id = p.answer_span.doc_id;
      ex.category_id = cat_id;
      for (size_t idx : it->second) {
        const auto& a = ds.annotations[idx];
        if (a.category_id == cat_id) ex.answers.emplace_back(a.start_char, a.end_char);
      }
      std::sort(ex.answers.begin(), ex.answers.end());
      if (ex.answers.empty())
        throw CorpusError("build_pr_examples: context '" + p.answer_span.doc_id + "' lost its gold spans");
      ex.provenance = PrProvenance{p.query_span.doc_id, p.query_span.start_char, p.query_span.end_char};
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<MrcExample> balance(const std::vector<MrcExample>& examples, uint64_t seed, double ratio) {
  if (ratio < 0.0) throw CorpusError("balance: ratio must be >= 0");
  std::vector<size_t> unanswerable;
  int64_t n_answerable = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].answerable())
      ++n_answerable;
    else
      unanswerable.push_back(i);
  }
  int64_t target = std::min<int64_t>(static_cast<int64_t>(unanswerable.size()),
                                     std::max<int64_t>(round_half_up(ratio * static_cast<double>(n_answerable)), 0));
  std::set<size_t> keep_unans;
  Rng rng(seed);
  for (uint64_t k : rng.sample_indices(unanswerable.size(), static_cast<uint64_t>(target)))
    keep_unans.insert(unanswerable[k]);

  std::vector<MrcExample> out;
  for (size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].answerable() || keep_unans.count(i) > 0) out.push_back(examples[i]);
  }
  return out;
}

namespace {

struct MutableSpan {
  int start;
  int end;
  size_t source;  // index into ds.annotations
};

}  // namespace

Dataset mention_replace(const Dataset& ds, double rate, uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw CorpusError("mention_replace: rate must be in [0, 1]");

  // Replacement pools: distinct train surfaces per category.
  std::map<int, std::vector<std::string>> pools;
  for (const auto& [id, s] : build_span_sets(ds)) {
    std::set<std::string> uniq;
    for (const auto& m : s.members) uniq.insert(m.surface);
    pools[id].assign(uniq.begin(), uniq.end());
  }

  Dataset out;
  out.categories = ds.categories;
  out.task_mode = ds.task_mode;
  out.documents = ds.documents;
  out.annotations = ds.annotations;

  auto by_doc = out.annotations_by_doc();
  Rng root(seed);

  std::vector<size_t> train_docs;
  for (size_t i = 0; i < out.documents.size(); ++i)
    if (out.documents[i].split == Split::train) train_docs.push_back(i);
  std::sort(train_docs.begin(), train_docs.end(),
            [&](size_t a, size_t b) { return out.documents[a].doc_id < out.documents[b].doc_id; });

  for (size_t doc_idx : train_docs) {
    Document& doc = out.documents[doc_idx];
    auto it = by_doc.find(doc.doc_id);
    if (it == by_doc.end()) continue;

    std::vector<MutableSpan> spans;
    for (size_t idx : it->second) {
      const auto& a = out.annotations[idx];
      spans.push_back({a.start_char, a.end_char, idx});
    }
    std::sort(spans.begin(), spans.end(), [&](const MutableSpan& x, const MutableSpan& y) {
      const auto& a = out.annotations[x.source];
      const auto& b = out.annotations[y.source];
      return std::tie(a.start_char, a.end_char, a.category_id) < std::tie(b.start_char, b.end_char, b.category_id);
    });

    // A span that strictly contains another keeps its surface: rewriting it
    // would wipe out the nested gold span's text.
    auto is_container = [&](size_t i) {
      for (size_t j = 0; j < spans.size(); ++j) {
        if (j == i) continue;
        bool inside = spans[i].start <= spans[j].start && spans[j].end <= spans[i].end;
        bool same_range = spans[i].start == spans[j].start && spans[j].end == spans[i].end;
        if (inside && !same_range) return true;
      }
      return false;
    };

    Rng rng = root.fork(fnv1a64(doc.doc_id.data(), doc.doc_id.size()));
    for (size_t i = 0; i < spans.size(); ++i) {
      const auto& ann = out.annotations[spans[i].source];
      bool chosen = rng.uniform01() < rate;
      if (!chosen || is_container(i)) continue;

      std::vector<std::string> candidates;
      std::string current = cp_slice(doc.text, spans[i].start, spans[i].end);
      for (const auto& surf : pools[ann.category_id])
        if (surf != current) candidates.push_back(surf);
      if (candidates.empty()) continue;

      const std::string& repl = candidates[rng.below(candidates.size())];
      int old_len = spans[i].end - spans[i].start;
      int new_len = static_cast<int>(cp_length(repl));
      int delta = new_len - old_len;

      auto bytes = cp_byte_offsets(doc.text);
      size_t b_start = bytes[spans[i].start];
      size_t b_end = bytes[spans[i].end];
      doc.text = doc.text.substr(0, b_start) + repl + doc.text.substr(b_end);

      int r_start = spans[i].start;
      int r_end = spans[i].end;
      for (auto& sp : spans) {
        if (sp.start == r_start && sp.end == r_end) {
          sp.end = r_start + new_len;  // the replaced span and any range twin
        } else if (sp.start >= r_end) {
          sp.start += delta;
          sp.end += delta;
        } else if (sp.start <= r_start && r_end <= sp.end) {
          sp.end += delta;  // container stretches around the rewrite
        }
      }
    }

    for (const auto& sp : spans) {
      auto& a = out.annotations[sp.source];
      a.start_char = sp.start;
      a.end_char = sp.end;
      a.surface = cp_slice(doc.text, sp.start, sp.end);
    }
  }
  return out;
}

std::string serialize_mrc(const std::vector<MrcExample>& examples) {
  std::ostringstream out;
  for (const auto& ex : examples) {
    json answers = json::array();
    for (const auto& [s, e] : ex.answers) answers.push_back(json::array({s, e}));
    json prov = json::object();
    if (ex.provenance) {
      prov["doc_id"] = ex.provenance->doc_id;
      prov["start"] = ex.provenance->start_char;
      prov["end"] = ex.provenance->end_char;
    }
    json j{{"kind", mrc_kind_name(ex.kind)}, {"query", ex.query},       {"doc_id", ex.doc_id},
           {"answers", answers},             {"category", ex.category_id}, {"provenance", prov}};
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<MrcExample> parse_mrc(const std::string& jsonl) {
  std::vector<MrcExample> out;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      MrcExample ex;
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "SUB")
        ex.kind = MrcKind::SUB;
      else if (kind == "PR")
        ex.kind = MrcKind::PR;
      else
        throw CorpusError("unknown example kind '" + kind + "'");
      ex.query = j.at("query").get<std::string>();
      ex.doc_id = j.at("doc_id").get<std::string>();
      ex.category_id = j.at("category").get<int>();
      for (const auto& a : j.at("answers")) ex.answers.emplace_back(a.at(0).get<int>(), a.at(1).get<int>());
      if (j.contains("provenance") && !j["provenance"].empty()) {
        PrProvenance p;
        p.doc_id = j["provenance"].at("doc_id").get<std::string>();
        p.start_char = j["provenance"].at("start").get<int>();
        p.end_char = j["provenance"].at("end").get<int>();
        ex.provenance = p;
      }
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw CorpusError("mrc examples line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_mrc(const std::vector<MrcExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write mrc file '" + path + "'");
  out << serialize_mrc(examples);
}

std::vector<MrcExample> load_mrc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open mrc file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_mrc(buf.str());
}

}  // namespace spanid
