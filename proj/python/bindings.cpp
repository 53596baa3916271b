#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "json.hpp"
#include "spanid/corpus.hpp"
#include "spanid/eval.hpp"
#include "spanid/mrc_data.hpp"
#include "spanid/pipeline.hpp"
#include "spanid/tokenizer.hpp"

namespace py = pybind11;
using namespace spanid;
using nlohmann::json;

namespace {

json prf_to_json(const PrfCounts& c) {
  return json{{"tp", c.tp},           {"fp", c.fp},     {"fn", c.fn},
              {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
}

}  // namespace

PYBIND11_MODULE(_spanid, m) {
  m.doc() = "span identification toolkit: corpora, peer-pair augmentation, MRC training, span metrics";

  m.def(
      "synth_dataset",
      [](uint64_t seed, int docs, double skew) { return serialize_dataset(gen_synthetic(seed, docs, skew)); },
      py::arg("seed") = 1, py::arg("docs") = 50, py::arg("skew") = 1.0,
      "Generate the synthetic four-category corpus as dataset JSONL.");

  m.def(
      "validate",
      [](const std::string& jsonl, bool allow_nested) {
        LoadOptions opts;
        opts.allow_nested = allow_nested;
        LoadReport report;
        Dataset ds = parse_dataset(jsonl, opts, &report);
        std::vector<std::string> issues;
        for (const auto& e : report.errors) issues.push_back("line " + std::to_string(e.line) + ": " + e.message);
        for (const auto& e : validate_dataset(ds, allow_nested)) issues.push_back(e.message);
        return issues;
      },
      py::arg("jsonl"), py::arg("allow_nested") = false,
      "Parse dataset JSONL and return every violated invariant (empty list = valid).");

  m.def(
      "sub_query",
      [](const std::string& mention, const std::string& definition) {
        Category cat;
        cat.mention = mention;
        cat.definition = definition;
        return build_sub_query(cat);
      },
      py::arg("mention"), py::arg("definition") = "",
      "Render the span-category query template.");

  m.def("pr_query", &build_pr_query, py::arg("surface"), "Render the peer-span query template.");

  m.def(
      "tokenize",
      [](const std::string& text, bool lowercase) {
        std::vector<std::tuple<std::string, int, int>> out;
        for (const auto& t : tokenize_text(text, lowercase)) out.emplace_back(t.text, t.start_char, t.end_char);
        return out;
      },
      py::arg("text"), py::arg("lowercase") = false,
      "Split text into (token, start, end) with codepoint offsets.");

  m.def(
      "augment",
      [](const std::string& dataset_jsonl, const std::string& strategy, double lam, uint64_t seed, bool balance_out,
         double balance_ratio) {
        Dataset ds = parse_dataset(dataset_jsonl);
        auto strat = parse_strategy(strategy);
        if (!strat) throw std::invalid_argument("unknown strategy: " + strategy);
        auto examples = build_sub_examples(ds);
        if (*strat != AugmentStrategy::none) {
          AugmentConfig cfg;
          cfg.strategy = *strat;
          cfg.lambda = lam;
          cfg.seed = seed;
          auto prs = build_pr_examples(sample_pairs(build_span_sets(ds), cfg), ds);
          examples.insert(examples.end(), prs.begin(), prs.end());
        }
        if (balance_out) examples = balance(examples, seed, balance_ratio);
        return serialize_mrc(examples);
      },
      py::arg("dataset_jsonl"), py::arg("strategy") = "none", py::arg("lam") = 1.0, py::arg("seed") = 0,
      py::arg("balance") = true, py::arg("balance_ratio") = 1.0,
      "Build MRC JSONL: span-category examples plus sampled peer-pair examples.");

  m.def(
      "span_prf",
      [](const std::string& predictions_jsonl, const std::string& dataset_jsonl, const std::string& split) {
        auto preds = parse_predictions(predictions_jsonl);
        Dataset ds = parse_dataset(dataset_jsonl);
        std::vector<SpanAnnotation> gold;
        if (split.empty()) {
          gold = ds.annotations;
        } else {
          auto s = parse_split(split);
          if (!s) throw std::invalid_argument("unknown split: " + split);
          gold = gold_spans(ds, *s);
        }
        EvalResult r = span_prf(preds, gold);
        json out = prf_to_json(r.micro);
        json per = json::object();
        for (const auto& [cat, counts] : r.per_category) per[std::to_string(cat)] = prf_to_json(counts);
        out["per_category"] = per;
        return out.dump();
      },
      py::arg("predictions_jsonl"), py::arg("dataset_jsonl"), py::arg("split") = "",
      "Micro and per-category span precision/recall/F1 as a JSON string.");

  m.def(
      "run_experiment",
      [](const std::string& spec_json, const std::string& out_dir) {
        ExperimentSpec spec = parse_experiment_spec(spec_json);
        validate_experiment_spec(spec);
        PipelineResult res;
        {
          py::gil_scoped_release release;
          res = run_pipeline(spec, out_dir);
        }
        json out{{"out_dir", res.out_dir},
                 {"micro", prf_to_json(res.eval.micro)},
                 {"epochs", res.train_report.epochs.size()},
                 {"best_epoch", res.train_report.best_epoch},
                 {"unseen_surface_recall", res.unseen_surface_recall},
                 {"unseen_surface_gold", res.unseen_surface_gold}};
        json hashes = json::object();
        char buf[32];
        for (const auto& [name, h] : res.output_hashes) {
          snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
          hashes[name] = buf;
        }
        out["output_hashes"] = hashes;
        return out.dump();
      },
      py::arg("spec_json"), py::arg("out_dir"),
      "Run the corpus -> augment -> train -> evaluate pipeline; returns a JSON summary.");
}
