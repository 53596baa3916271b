#include "spanid/corpus.hpp"

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

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

const Category* Dataset::find_category(int id) const {
  for (const auto& c : categories)
    if (c.id == id) return &c;
  return nullptr;
}

const Document* Dataset::find_document(const std::string& doc_id) const {
  for (const auto& d : documents)
    if (d.doc_id == doc_id) return &d;
  return nullptr;
}

std::unordered_map<std::string, std::vector<size_t>> Dataset::annotations_by_doc() const {
  std::unordered_map<std::string, std::vector<size_t>> out;
  for (size_t i = 0; i < annotations.size(); ++i) out[annotations[i].doc_id].push_back(i);
  return out;
}

size_t Dataset::count_documents(Split s) const {
  size_t n = 0;
  for (const auto& d : documents)
    if (d.split == s) ++n;
  return n;
}

namespace {

void add_issue(LoadReport& report, int line, std::string msg) {
  report.errors.push_back({line, std::move(msg)});
}

std::string span_key(const SpanAnnotation& a) {
  return a.doc_id + "\x1f" + std::to_string(a.start_char) + "\x1f" + std::to_string(a.end_char) + "\x1f" +
         std::to_string(a.category_id);
}

// Overlap law: disjoint is always fine; identical or fully nested ranges need
// allow_nested; anything else is a partial overlap and always an error.
void check_overlaps(const Dataset& ds, bool allow_nested, LoadReport& report) {
  auto by_doc = ds.annotations_by_doc();
  for (auto& [doc_id, idxs] : by_doc) {
    std::vector<size_t> sorted = idxs;
    std::sort(sorted.begin(), sorted.end(), [&](size_t a, size_t b) {
      const auto& x = ds.annotations[a];
      const auto& y = ds.annotations[b];
      return std::tie(x.start_char, x.end_char) < std::tie(y.start_char, y.end_char);
    });
    for (size_t i = 0; i < sorted.size(); ++i) {
      const auto& a = ds.annotations[sorted[i]];
      for (size_t j = i + 1; j < sorted.size(); ++j) {
        const auto& b = ds.annotations[sorted[j]];
        if (b.start_char >= a.end_char) break;  // sorted by start; no later span can overlap a
        bool nested = (a.start_char <= b.start_char && b.end_char <= a.end_char) ||
                      (b.start_char <= a.start_char && a.end_char <= b.end_char);
        if (nested && allow_nested) continue;
        std::ostringstream os;
        os << "doc '" << doc_id << "': spans (" << a.start_char << "," << a.end_char << ") and (" << b.start_char
           << "," << b.end_char << ") " << (nested ? "are nested (pass allow_nested to admit)" : "partially overlap");
        add_issue(report, 0, os.str());
      }
    }
  }
}

}  // namespace

std::vector<LoadIssue> validate_dataset(const Dataset& ds, bool allow_nested) {
  LoadReport report;
  std::set<int> cat_ids;
  for (const auto& c : ds.categories) {
    if (!cat_ids.insert(c.id).second) add_issue(report, 0, "duplicate category id " + std::to_string(c.id));
    if (c.mention.empty()) add_issue(report, 0, "category " + std::to_string(c.id) + " has empty mention");
  }
  std::set<std::string> doc_ids;
  for (const auto& d : ds.documents) {
    if (!doc_ids.insert(d.doc_id).second) add_issue(report, 0, "duplicate doc_id '" + d.doc_id + "'");
    if (d.text.empty()) add_issue(report, 0, "doc '" + d.doc_id + "' has empty text");
  }
  std::set<std::string> seen_spans;
  for (const auto& a : ds.annotations) {
    const Document* doc = ds.find_document(a.doc_id);
    if (doc == nullptr) {
      add_issue(report, 0, "span references unknown doc '" + a.doc_id + "'");
      continue;
    }
    if (ds.find_category(a.category_id) == nullptr)
      add_issue(report, 0, "span in doc '" + a.doc_id + "' references unknown category " + std::to_string(a.category_id));
    int len = static_cast<int>(cp_length(doc->text));
    if (a.start_char < 0 || a.start_char >= a.end_char || a.end_char > len) {
      std::ostringstream os;
      os << "doc '" << a.doc_id << "': span offsets (" << a.start_char << "," << a.end_char
         << ") out of range for text of length " << len;
      add_issue(report, 0, os.str());
      continue;
    }
    std::string slice = cp_slice(doc->text, a.start_char, a.end_char);
    if (slice != a.surface) {
      std::ostringstream os;
      os << "doc '" << a.doc_id << "': span (" << a.start_char << "," << a.end_char << ") surface '" << a.surface
         << "' does not match text slice '" << slice << "'";
      add_issue(report, 0, os.str());
    }
    if (!seen_spans.insert(span_key(a)).second) {
      std::ostringstream os;
      os << "doc '" << a.doc_id << "': duplicate span (" << a.start_char << "," << a.end_char << ") category "
         << a.category_id;
      add_issue(report, 0, os.str());
    }
  }
  check_overlaps(ds, allow_nested, report);
  return report.errors;
}

namespace {

std::string issues_summary(const std::vector<LoadIssue>& issues) {
  std::ostringstream os;
  os << issues.size() << " dataset issue(s):";
  for (const auto& e : issues) {
    os << "\n  ";
    if (e.line > 0) os << "line " << e.line << ": ";
    os << e.message;
  }
  return os.str();
}

}  // namespace

Dataset parse_dataset(const std::string& jsonl, const LoadOptions& options, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report != nullptr ? *report : local;

  Dataset ds;
  std::set<int> cat_ids;
  std::set<std::string> doc_ids;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  // Raw span records; integrity checked after all lines are read so a span
  // may precede its document (only categories are order-constrained).
  struct RawSpan {
    int line;
    SpanAnnotation ann;
  };
  std::vector<RawSpan> raw_spans;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      add_issue(rep, line_no, std::string("malformed JSON: ") + e.what());
      continue;
    }
    try {
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "category") {
        Category c;
        c.id = j.at("id").get<int>();
        c.name = j.at("name").get<std::string>();
        c.mention = j.at("mention").get<std::string>();
        c.definition = j.at("definition").get<std::string>();
        if (!cat_ids.insert(c.id).second) {
          add_issue(rep, line_no, "duplicate category id " + std::to_string(c.id));
          continue;
        }
        if (c.mention.empty()) {
          add_issue(rep, line_no, "category " + std::to_string(c.id) + " has empty mention");
          continue;
        }
        ds.categories.push_back(std::move(c));
      } else if (kind == "doc") {
        Document d;
        d.doc_id = j.at("doc_id").get<std::string>();
        d.text = j.at("text").get<std::string>();
        auto split = parse_split(j.at("split").get<std::string>());
        if (!split) {
          add_issue(rep, line_no, "doc '" + d.doc_id + "': unknown split '" + j.at("split").get<std::string>() + "'");
          continue;
        }
        d.split = *split;
        if (!doc_ids.insert(d.doc_id).second) {
          add_issue(rep, line_no, "duplicate doc_id '" + d.doc_id + "'");
          continue;
        }
        if (d.text.empty()) {
          add_issue(rep, line_no, "doc '" + d.doc_id + "' has empty text");
          continue;
        }
        ds.documents.push_back(std::move(d));
      } else if (kind == "span") {
        RawSpan rs;
        rs.line = line_no;
        rs.ann.doc_id = j.at("doc_id").get<std::string>();
        rs.ann.start_char = j.at("start").get<int>();
        rs.ann.end_char = j.at("end").get<int>();
        rs.ann.category_id = j.at("category").get<int>();
        if (cat_ids.count(rs.ann.category_id) == 0) {
          add_issue(rep, line_no,
                    "span in doc '" + rs.ann.doc_id + "' references category " + std::to_string(rs.ann.category_id) +
                        " not declared on an earlier line");
          continue;
        }
        raw_spans.push_back(std::move(rs));
      } else {
        add_issue(rep, line_no, "unknown line kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      add_issue(rep, line_no, std::string("bad record: ") + e.what());
    }
  }

  std::set<std::string> seen_spans;
  for (auto& rs : raw_spans) {
    SpanAnnotation& a = rs.ann;
    const Document* doc = ds.find_document(a.doc_id);
    if (doc == nullptr) {
      add_issue(rep, rs.line, "span references unknown doc '" + a.doc_id + "'");
      continue;
    }
    int len = static_cast<int>(cp_length(doc->text));
    if (a.start_char < 0 || a.start_char >= a.end_char || a.end_char > len) {
      std::ostringstream os;
      os << "doc '" << a.doc_id << "': span offsets (" << a.start_char << "," << a.end_char
         << ") out of range for text of length " << len;
      add_issue(rep, rs.line, os.str());
      continue;
    }
    a.surface = cp_slice(doc->text, a.start_char, a.end_char);
    if (!seen_spans.insert(span_key(a)).second) {
      std::ostringstream os;
      os << "doc '" << a.doc_id << "': duplicate span (" << a.start_char << "," << a.end_char << ") category "
         << a.category_id;
      add_issue(rep, rs.line, os.str());
      continue;
    }
    ds.annotations.push_back(std::move(a));
  }

  check_overlaps(ds, options.allow_nested, rep);

  if (report == nullptr && !rep.ok()) throw CorpusError(issues_summary(rep.errors));
  return ds;
}

Dataset load_dataset(const std::string& path, const LoadOptions& options, LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open dataset file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), options, report);
}

std::string serialize_dataset(const Dataset& ds) {
  std::vector<const Category*> cats;
  for (const auto& c : ds.categories) cats.push_back(&c);
  std::sort(cats.begin(), cats.end(), [](auto* a, auto* b) { return a->id < b->id; });

  std::vector<const Document*> docs;
  for (const auto& d : ds.documents) docs.push_back(&d);
  std::sort(docs.begin(), docs.end(), [](auto* a, auto* b) { return a->doc_id < b->doc_id; });

  std::vector<const SpanAnnotation*> spans;
  for (const auto& a : ds.annotations) spans.push_back(&a);
  std::sort(spans.begin(), spans.end(), [](auto* a, auto* b) {
    return std::tie(a->doc_id, a->start_char, a->end_char, a->category_id) <
           std::tie(b->doc_id, b->start_char, b->end_char, b->category_id);
  });

  std::ostringstream out;
  for (auto* c : cats) {
    json j{{"kind", "category"}, {"id", c->id}, {"name", c->name}, {"mention", c->mention}, {"definition", c->definition}};
    out << j.dump() << "\n";
  }
  for (auto* d : docs) {
    json j{{"kind", "doc"}, {"doc_id", d->doc_id}, {"text", d->text}, {"split", split_name(d->split)}};
    out << j.dump() << "\n";
  }
  for (auto* a : spans) {
    json j{{"kind", "span"}, {"doc_id", a->doc_id}, {"start", a->start_char}, {"end", a->end_char},
           {"category", a->category_id}};
    out << j.dump() << "\n";
  }
  return out.str();
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write dataset file '" + path + "'");
  out << serialize_dataset(ds);
}

std::string canonicalize_jsonl(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line;
  std::vector<json> cats, docs, spans;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "category") cats.push_back(j);
    else if (kind == "doc") docs.push_back(j);
    else if (kind == "span") spans.push_back(j);
    else throw CorpusError("unknown line kind '" + kind + "'");
  }
  std::sort(cats.begin(), cats.end(), [](const json& a, const json& b) { return a.at("id") < b.at("id"); });
  std::sort(docs.begin(), docs.end(), [](const json& a, const json& b) { return a.at("doc_id") < b.at("doc_id"); });
  std::sort(spans.begin(), spans.end(), [](const json& a, const json& b) {
    auto ka = std::make_tuple(a.at("doc_id").get<std::string>(), a.at("start").get<int>(), a.at("end").get<int>(),
                              a.at("category").get<int>());
    auto kb = std::make_tuple(b.at("doc_id").get<std::string>(), b.at("start").get<int>(), b.at("end").get<int>(),
                              b.at("category").get<int>());
    return ka < kb;
  });
  std::ostringstream out;
  for (const auto& j : cats) out << j.dump() << "\n";
  for (const auto& j : docs) out << j.dump() << "\n";
  for (const auto& j : spans) out << j.dump() << "\n";
  return out.str();
}

Dataset subsample(const Dataset& ds, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw CorpusError("subsample fraction must be in (0, 1], got " + std::to_string(fraction));

  std::vector<std::string> train_ids;
  for (const auto& d : ds.documents)
    if (d.split == Split::train) train_ids.push_back(d.doc_id);
  std::sort(train_ids.begin(), train_ids.end());

  // floor(fraction * n), tolerant of representation error in products like 0.3 * 10.
  size_t keep = static_cast<size_t>(std::floor(fraction * static_cast<double>(train_ids.size()) + 1e-9));
  std::set<std::string> kept;
  if (keep >= train_ids.size()) {
    kept.insert(train_ids.begin(), train_ids.end());
  } else {
    Rng rng(seed);
    for (uint64_t idx : rng.sample_indices(train_ids.size(), keep)) kept.insert(train_ids[idx]);
  }

  Dataset out;
  out.categories = ds.categories;
  out.task_mode = ds.task_mode;
  for (const auto& d : ds.documents)
    if (d.split != Split::train || kept.count(d.doc_id) > 0) out.documents.push_back(d);
  for (const auto& a : ds.annotations) {
    const Document* doc = ds.find_document(a.doc_id);
    if (doc != nullptr && doc->split == Split::train && kept.count(a.doc_id) == 0) continue;
    out.annotations.push_back(a);
  }
  return out;
}

std::vector<CategoryStats> category_stats(const Dataset& ds) {
  std::map<int, CategoryStats> rows;
  for (const auto& c : ds.categories) rows[c.id] = {c.id, c.name, 0, 0};
  std::map<int, std::set<std::string>> docs_with;
  for (const auto& a : ds.annotations) {
    const Document* doc = ds.find_document(a.doc_id);
    if (doc == nullptr || doc->split != Split::train) continue;
    rows[a.category_id].span_count += 1;
    docs_with[a.category_id].insert(a.doc_id);
  }
  for (auto& [id, s] : docs_with) rows[id].doc_count = static_cast<int64_t>(s.size());
  std::vector<CategoryStats> out;
  for (auto& [id, row] : rows) out.push_back(row);
  return out;
}

}  // namespace spanid
