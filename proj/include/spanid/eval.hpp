#pragma once

#include <map>
#include <string>
#include <vector>

#include "spanid/corpus.hpp"
#include "spanid/model.hpp"

namespace spanid {

struct PrfCounts {
  int64_t tp = 0, fp = 0, fn = 0;
  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
  double f1() const {
    double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

struct EvalResult {
  PrfCounts micro;
  std::map<int, PrfCounts> per_category;
};

// Exact-tuple (doc, start, end, category) matching; each gold span is matched
// at most once (duplicate predictions beyond the gold count are FP).
EvalResult span_prf(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold);

struct PrPoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // one per distinct score, descending threshold
  double aupr = 0;
  // Precision at the first (largest-threshold) point reaching the recall
  // level; 0 when the sweep never gets there.
  double precision_at(double recall_level) const;
};

PrCurve pr_curve(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold);

enum class ErrorBucket { multiple_labels, incorrect_label, missing_prediction, other_errors };

const char* error_bucket_name(ErrorBucket b);

struct ErrorInstance {
  ErrorBucket bucket;
  std::string doc_id;
  int start = 0, end = 0;      // the prediction's span (gold span for missing_prediction)
  int pred_category = -1;      // -1 for missing_prediction
  int gold_category = -1;      // category of a related gold span, -1 if none
};

struct ErrorReport {
  std::map<ErrorBucket, int64_t> counts;
  std::vector<ErrorInstance> instances;
  int64_t tp = 0;
};

// Buckets over non-TP items, precedence MultipleLabels > IncorrectLabel >
// OtherErrors on the prediction side:
//   MultipleLabels     same boundary predicted under 2+ categories, one correct
//   IncorrectLabel     boundary exact, category wrong, no correct twin
//   OtherErrors        overlapping-but-mismatched boundary, and spurious
//                      non-overlapping predictions (catch-all)
//   MissingPrediction  gold span no prediction overlaps
ErrorReport classify_errors(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold);

struct SimRow {
  int category_id = 0;  // the queried category
  bool positive = false;
  double sigma = 0;
};

// For every document of `split` and every category query, the span-scorer
// probability of each gold span: positives share the queried category,
// negatives do not. Spans lost to truncation are skipped.
std::vector<SimRow> similarity_distribution(const ModelParams& p, const Dataset& ds, const Tokenizer& tok,
                                            Split split = Split::test);

}  // namespace spanid
