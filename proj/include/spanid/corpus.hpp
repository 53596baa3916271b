#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace spanid {

enum class Split { train, dev, test };

const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

// How span candidates are turned into predictions downstream: "selector"
// thresholds the span scorer (NER/ABSA/SBPD style), "topk" ranks start/end
// probability products and keeps a fixed number (CCE style).
enum class TaskMode { selector, topk };

struct Category {
  int id = 0;
  std::string name;
  std::string mention;
  std::string definition;  // may be empty; queries then omit the Details clause
};

struct Document {
  std::string doc_id;
  std::string text;
  Split split = Split::train;
};

// Offsets count UTF-8 code points; start inclusive, end exclusive.
struct SpanAnnotation {
  std::string doc_id;
  int start_char = 0;
  int end_char = 0;
  int category_id = 0;
  std::string surface;  // always equals the text slice [start_char, end_char)
};

struct Dataset {
  std::vector<Category> categories;
  std::vector<Document> documents;
  std::vector<SpanAnnotation> annotations;
  TaskMode task_mode = TaskMode::selector;

  const Category* find_category(int id) const;
  const Document* find_document(const std::string& doc_id) const;
  // Indices into `annotations`, grouped by document.
  std::unordered_map<std::string, std::vector<size_t>> annotations_by_doc() const;
  size_t count_documents(Split s) const;
};

struct LoadOptions {
  bool allow_nested = false;  // admit fully contained spans; partial overlap is always an error
};

struct LoadIssue {
  int line = 0;  // 1-based; 0 when the issue is not tied to a single line
  std::string message;
};

struct LoadReport {
  std::vector<LoadIssue> errors;
  bool ok() const { return errors.empty(); }
};

class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(const std::string& what) : std::runtime_error(what) {}
};

// Reads the JSONL dataset format (category/doc/span lines; categories must
// precede the spans that reference them). All violations are collected into
// `report` when given; without a report the first summary is thrown.
// Offending records are dropped from the returned dataset.
Dataset load_dataset(const std::string& path, const LoadOptions& options = {}, LoadReport* report = nullptr);
Dataset parse_dataset(const std::string& jsonl, const LoadOptions& options = {}, LoadReport* report = nullptr);

// Canonical serialization: categories by id, documents by doc_id, spans by
// (doc_id, start, end, category); one compact JSON object per line with
// alphabetically sorted keys.
std::string serialize_dataset(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::string& path);

// Re-emits an existing file in the same canonical form without interpreting
// it as a Dataset (test oracle for the save/load round trip).
std::string canonicalize_jsonl(const std::string& jsonl);

// Keeps floor(fraction * |train docs|) train documents, chosen uniformly
// without replacement; dev/test pass through untouched. fraction in (0, 1].
Dataset subsample(const Dataset& ds, double fraction, uint64_t seed);

struct CategoryStats {
  int category_id = 0;
  std::string name;
  int64_t span_count = 0;  // train split
  int64_t doc_count = 0;   // distinct train documents containing the category
};

std::vector<CategoryStats> category_stats(const Dataset& ds);

// Ground truth emitted by the synthetic generator, for tests.
struct SynthLog {
  std::map<int, int64_t> span_counts;                       // per category, all splits
  std::map<int, int64_t> train_span_counts;                 // per category, train only
  std::map<int, std::vector<std::string>> held_out_surfaces;  // never emitted in train docs
};

// Templated four-category corpus (person/place/organization/product
// vocabularies, 40 surfaces each, 20% held out of the train split).
// Category frequencies follow rank weights r^(1-skew), so skew=1 is uniform.
Dataset gen_synthetic(uint64_t seed, int n_docs, double skew, SynthLog* log = nullptr);

// Checks every dataset invariant; returns issues (empty = valid).
std::vector<LoadIssue> validate_dataset(const Dataset& ds, bool allow_nested = false);

}  // namespace spanid
