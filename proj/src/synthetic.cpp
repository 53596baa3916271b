#include <array>
#include <cmath>
#include <cstdio>

#include "spanid/corpus.hpp"
#include "spanid/rng.hpp"
#include "spanid/text.hpp"

namespace spanid {

namespace {

struct Inventory {
  const char* name;
  const char* mention;
  const char* definition;
  std::array<const char*, 8> first;
  std::array<const char*, 5> second;
};

// Surfaces are first+second crossings: 40 per category, every word shared
// between the train and held-out sides so held-out means unseen combination,
// not unseen vocabulary.
const std::array<Inventory, 4> kInventories = {{
    {"person",
     "person names",
     "Full names of individual people",
     {"Alice", "Marcus", "Noora", "Ravi", "Selma", "Tomas", "Yuki", "Priya"},
     {"Hartmann", "Okafor", "Lindqvist", "Marchetti", "Ibarra"}},
    {"place",
     "place names",
     "Names of geographic locations such as towns, rivers, and landmarks",
     {"North", "East", "São", "Upper", "Lower", "Green", "Stone", "Silver"},
     {"Harbor", "Valley", "Ridge", "Falls", "Grove"}},
    {"organization",
     "organization names",
     "Names of companies, agencies, and other institutions",
     {"Apex", "Borealis", "Cedar", "Delta", "Evergreen", "Fulcrum", "Granite", "Helios"},
     {"Labs", "Holdings", "Collective", "Works", "Institute"}},
    {"product",
     "product names",
     "Commercial product and device names",
     {"Pulse", "Nimbus", "Quartz", "Vertex", "Zephyr", "Echo", "Orbit", "Prism"},
     {"Phone", "Tablet", "Router", "Drone", "Speaker"}},
}};

// Sentence frames; "~" is a slot taking a two-word surface of any category.
// Fixed words are category-agnostic so only the filler decides the label.
const std::vector<std::vector<const char*>> kFrames = {
    {"Reports", "about", "~", "reached", "~", "before", "dawn", "."},
    {"Many", "visitors", "praised", "~", "during", "the", "festival", "."},
    {"~", "partnered", "with", "~", "last", "spring", "."},
    {"Critics", "compared", "~", "to", "~", "in", "a", "lengthy", "column", "."},
    {"Nobody", "expected", "~", "to", "endorse", "~", "so", "quickly", "."},
    {"The", "crowd", "cheered", "when", "~", "arrived", "."},
    {"A", "documentary", "about", "~", "premiered", "near", "~", "last", "night", "."},
    {"Few", "remember", "how", "~", "met", "~", "decades", "ago", "."},
    {"Officials", "linked", "~", "with", "~", "after", "the", "audit", "."},
    {"~", "quietly", "backed", "~", "throughout", "the", "campaign", "."},
    {"Guides", "often", "confuse", "~", "with", "~", "on", "older", "maps", "."},
    {"Analysts", "said", "~", "would", "outlast", "~", "eventually", "."},
};

struct SurfacePools {
  std::vector<std::string> train;  // 32 surfaces seen in train docs
  std::vector<std::string> all;    // all 40
  std::vector<std::string> held_out;
};

SurfacePools build_pools(const Inventory& inv, uint64_t hold_offset) {
  SurfacePools pools;
  for (size_t i = 0; i < inv.first.size(); ++i) {
    // Diagonal-shifted holdout: one pair per first word, at most two per
    // second word, so both inventories stay fully covered in train.
    size_t held_j = (i + hold_offset) % inv.second.size();
    for (size_t j = 0; j < inv.second.size(); ++j) {
      std::string surface = std::string(inv.first[i]) + " " + inv.second[j];
      pools.all.push_back(surface);
      if (j == held_j)
        pools.held_out.push_back(surface);
      else
        pools.train.push_back(surface);
    }
  }
  return pools;
}

int draw_category(Rng& rng, const std::vector<int64_t>& weights) {
  int64_t total = 0;
  for (int64_t w : weights) total += w;
  auto u = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
  for (size_t r = 0; r < weights.size(); ++r) {
    if (u < weights[r]) return static_cast<int>(r);
    u -= weights[r];
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

Dataset gen_synthetic(uint64_t seed, int n_docs, double skew, SynthLog* log) {
  if (n_docs < 0) throw CorpusError("gen_synthetic: n_docs must be >= 0");

  Dataset ds;
  ds.task_mode = TaskMode::selector;
  for (size_t c = 0; c < kInventories.size(); ++c) {
    const auto& inv = kInventories[c];
    ds.categories.push_back({static_cast<int>(c), inv.name, inv.mention, inv.definition});
  }

  Rng root(seed);
  Rng rng_hold = root.fork(1);
  Rng rng_docs = root.fork(2);

  std::vector<SurfacePools> pools;
  for (const auto& inv : kInventories) pools.push_back(build_pools(inv, rng_hold.below(inv.second.size())));

  // Rank weights r^(1-skew), integer-scaled so category draws are exact
  // integer arithmetic (no cross-platform pow/compare ambiguity at use time).
  std::vector<int64_t> weights;
  for (size_t r = 1; r <= kInventories.size(); ++r) {
    auto w = std::llround(1e6 * std::pow(static_cast<double>(r), 1.0 - skew));
    weights.push_back(w > 1 ? w : 1);
  }

  int n_train = (n_docs * 8) / 10;
  int n_dev = n_docs / 10;

  for (int m = 0; m < n_docs; ++m) {
    Document doc;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "syn-%04d", m);
    doc.doc_id = buf;
    doc.split = m < n_train ? Split::train : (m < n_train + n_dev ? Split::dev : Split::test);

    int n_sent = 1 + static_cast<int>(rng_docs.below(2));
    std::string text;
    size_t cp_pos = 0;
    std::vector<SpanAnnotation> spans;
    for (int s = 0; s < n_sent; ++s) {
      const auto& frame = kFrames[rng_docs.below(kFrames.size())];
      for (const char* token : frame) {
        if (!text.empty()) {
          text += ' ';
          ++cp_pos;
        }
        std::string word = token;
        if (word == "~") {
          int cat = draw_category(rng_docs, weights);
          const auto& pool = doc.split == Split::train ? pools[cat].train : pools[cat].all;
          word = pool[rng_docs.below(pool.size())];
          SpanAnnotation a;
          a.doc_id = doc.doc_id;
          a.start_char = static_cast<int>(cp_pos);
          a.end_char = static_cast<int>(cp_pos + cp_length(word));
          a.category_id = cat;
          a.surface = word;
          spans.push_back(std::move(a));
        }
        text += word;
        cp_pos += cp_length(word);
      }
    }
    doc.text = std::move(text);
    ds.documents.push_back(std::move(doc));
    for (auto& a : spans) ds.annotations.push_back(std::move(a));
  }

  if (log != nullptr) {
    log->span_counts.clear();
    log->train_span_counts.clear();
    log->held_out_surfaces.clear();
    for (size_t c = 0; c < pools.size(); ++c) {
      log->span_counts[static_cast<int>(c)] = 0;
      log->train_span_counts[static_cast<int>(c)] = 0;
      log->held_out_surfaces[static_cast<int>(c)] = pools[c].held_out;
    }
    for (const auto& a : ds.annotations) {
      log->span_counts[a.category_id] += 1;
      const Document* doc = ds.find_document(a.doc_id);
      if (doc != nullptr && doc->split == Split::train) log->train_span_counts[a.category_id] += 1;
    }
  }
  return ds;
}

}  // namespace spanid
