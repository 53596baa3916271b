#include "spanid/eval.hpp"

#include <algorithm>
#include <set>

#include "spanid/encode.hpp"
#include "spanid/mrc_data.hpp"

namespace spanid {

namespace {

using Key = std::tuple<std::string, int, int, int>;  // doc, start, end, category

Key pred_key(const Prediction& p) { return {p.doc_id, p.start_char, p.end_char, p.category_id}; }
Key gold_key(const SpanAnnotation& a) { return {a.doc_id, a.start_char, a.end_char, a.category_id}; }

}  // namespace

EvalResult span_prf(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold) {
  std::map<Key, int64_t> gold_left;
  for (const auto& a : gold) gold_left[gold_key(a)] += 1;

  EvalResult res;
  for (const auto& p : preds) {
    auto it = gold_left.find(pred_key(p));
    bool hit = it != gold_left.end() && it->second > 0;
    if (hit) {
      it->second -= 1;
      res.micro.tp += 1;
      res.per_category[p.category_id].tp += 1;
    } else {
      res.micro.fp += 1;
      res.per_category[p.category_id].fp += 1;
    }
  }
  for (const auto& [key, left] : gold_left) {
    if (left > 0) {
      res.micro.fn += left;
      res.per_category[std::get<3>(key)].fn += left;
    }
  }
  return res;
}

double PrCurve::precision_at(double recall_level) const {
  for (const auto& pt : points)
    if (pt.recall >= recall_level) return pt.precision;
  return 0.0;
}

PrCurve pr_curve(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold) {
  std::vector<Prediction> sorted = preds;
  std::sort(sorted.begin(), sorted.end(), [](const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return pred_key(a) < pred_key(b);
  });

  std::map<Key, int64_t> gold_left;
  for (const auto& a : gold) gold_left[gold_key(a)] += 1;
  int64_t n_gold = static_cast<int64_t>(gold.size());

  PrCurve curve;
  int64_t tp = 0, taken = 0;
  double prev_recall = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    double threshold = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == threshold; ++i) {
      auto it = gold_left.find(pred_key(sorted[i]));
      if (it != gold_left.end() && it->second > 0) {
        it->second -= 1;
        ++tp;
      }
      ++taken;
    }
    PrPoint pt;
    pt.threshold = threshold;
    pt.precision = taken > 0 ? static_cast<double>(tp) / static_cast<double>(taken) : 0.0;
    pt.recall = n_gold > 0 ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
    curve.points.push_back(pt);
    curve.aupr += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return curve;
}

const char* error_bucket_name(ErrorBucket b) {
  switch (b) {
    case ErrorBucket::multiple_labels: return "MultipleLabels";
    case ErrorBucket::incorrect_label: return "IncorrectLabel";
    case ErrorBucket::missing_prediction: return "MissingPrediction";
    case ErrorBucket::other_errors: return "OtherErrors";
  }
  return "OtherErrors";
}

ErrorReport classify_errors(const std::vector<Prediction>& preds, const std::vector<SpanAnnotation>& gold) {
  ErrorReport rep;
  rep.counts[ErrorBucket::multiple_labels] = 0;
  rep.counts[ErrorBucket::incorrect_label] = 0;
  rep.counts[ErrorBucket::missing_prediction] = 0;
  rep.counts[ErrorBucket::other_errors] = 0;

  std::map<Key, int64_t> gold_left;
  for (const auto& a : gold) gold_left[gold_key(a)] += 1;

  // Pass 1: exact matches, and which boundaries carry a correct prediction.
  std::vector<bool> is_tp(preds.size(), false);
  std::set<std::tuple<std::string, int, int>> correct_boundaries;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto it = gold_left.find(pred_key(preds[i]));
    if (it != gold_left.end() && it->second > 0) {
      it->second -= 1;
      is_tp[i] = true;
      rep.tp += 1;
      correct_boundaries.insert({preds[i].doc_id, preds[i].start_char, preds[i].end_char});
    }
  }

  std::map<std::tuple<std::string, int, int>, int> gold_category_at;  // exact boundary -> a gold category
  for (const auto& a : gold) gold_category_at[{a.doc_id, a.start_char, a.end_char}] = a.category_id;

  auto overlapping_gold = [&](const Prediction& p) -> const SpanAnnotation* {
    for (const auto& a : gold)
      if (a.doc_id == p.doc_id && p.start_char < a.end_char && a.start_char < p.end_char) return &a;
    return nullptr;
  };

  for (size_t i = 0; i < preds.size(); ++i) {
    if (is_tp[i]) continue;
    const auto& p = preds[i];
    std::tuple<std::string, int, int> boundary{p.doc_id, p.start_char, p.end_char};
    auto git = gold_category_at.find(boundary);
    ErrorInstance inst;
    inst.doc_id = p.doc_id;
    inst.start = p.start_char;
    inst.end = p.end_char;
    inst.pred_category = p.category_id;
    if (git != gold_category_at.end()) {
      inst.gold_category = git->second;
      inst.bucket = correct_boundaries.count(boundary) > 0 ? ErrorBucket::multiple_labels
                                                           : ErrorBucket::incorrect_label;
    } else {
      const SpanAnnotation* g = overlapping_gold(p);
      inst.gold_category = g != nullptr ? g->category_id : -1;
      inst.bucket = ErrorBucket::other_errors;
    }
    rep.counts[inst.bucket] += 1;
    rep.instances.push_back(inst);
  }

  for (const auto& a : gold) {
    bool overlapped = false;
    for (const auto& p : preds)
      if (p.doc_id == a.doc_id && p.start_char < a.end_char && a.start_char < p.end_char) {
        overlapped = true;
        break;
      }
    if (!overlapped) {
      ErrorInstance inst;
      inst.bucket = ErrorBucket::missing_prediction;
      inst.doc_id = a.doc_id;
      inst.start = a.start_char;
      inst.end = a.end_char;
      inst.gold_category = a.category_id;
      rep.counts[inst.bucket] += 1;
      rep.instances.push_back(inst);
    }
  }
  return rep;
}

std::vector<SimRow> similarity_distribution(const ModelParams& p, const Dataset& ds, const Tokenizer& tok,
                                            Split split) {
  std::vector<SimRow> rows;
  auto by_doc = ds.annotations_by_doc();
  for (const auto& doc : ds.documents) {
    if (doc.split != split) continue;
    auto it = by_doc.find(doc.doc_id);
    if (it == by_doc.end() || it->second.empty()) continue;
    for (const auto& cat : ds.categories) {
      MrcExample ex;
      ex.kind = MrcKind::SUB;
      ex.query = build_sub_query(cat);
      ex.doc_id = doc.doc_id;
      ex.category_id = cat.id;
      MrcInput in = encode_example(ex, ds, tok, p.config.max_len);
      if (in.context_len() == 0) continue;

      std::vector<Token> ctx_tokens = tokenize_text(doc.text, tok.lowercase);
      int kept = in.context_len();
      ForwardOutput out = forward(p, in);
      for (size_t idx : it->second) {
        const auto& a = ds.annotations[idx];
        auto [ts, te] = char_span_to_tokens(ctx_tokens, kept, a.start_char, a.end_char);
        if (ts < 0) continue;
        SimRow row;
        row.category_id = cat.id;
        row.positive = a.category_id == cat.id;
        row.sigma = out.sigma_span(in.context_first + ts, in.context_first + te);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

}  // namespace spanid
