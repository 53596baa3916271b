#include "spanid/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "spanid/encode.hpp"
#include "spanid/rng.hpp"
#include "spanid/tokenizer.hpp"

namespace spanid {

using nlohmann::json;

namespace {

const char* task_mode_name(TaskMode m) { return m == TaskMode::topk ? "topk" : "selector"; }

TaskMode parse_task_mode(const std::string& s) {
  if (s == "selector") return TaskMode::selector;
  if (s == "topk") return TaskMode::topk;
  throw PipelineError("unknown task_mode: " + s);
}

const char* contrastive_name(LossConfig::Contrastive c) {
  switch (c) {
    case LossConfig::Contrastive::maxmin: return "maxmin";
    case LossConfig::Contrastive::average: return "average";
    default: return "off";
  }
}

LossConfig::Contrastive parse_contrastive(const std::string& s) {
  if (s == "maxmin") return LossConfig::Contrastive::maxmin;
  if (s == "average") return LossConfig::Contrastive::average;
  if (s == "off") return LossConfig::Contrastive::off;
  throw PipelineError("unknown contrastive mode: " + s);
}

void check_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw PipelineError(std::string("unknown key in ") + where + ": " + it.key());
  }
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write " + path);
  out << text;
  if (!out) throw PipelineError("short write to " + path);
}

json prf_json(const PrfCounts& c) {
  return {{"tp", c.tp},          {"fp", c.fp},
          {"fn", c.fn},          {"precision", c.precision()},
          {"recall", c.recall()}, {"f1", c.f1()}};
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(std::string(name) + " stage: " + e.what());
  }
}

std::vector<MrcInput> encode_split_queries(const Dataset& ds, const Tokenizer& tok, Split split, int max_len,
                                           const std::vector<Category>& cats) {
  std::vector<MrcInput> out;
  for (const auto& doc : ds.documents) {
    if (doc.split != split) continue;
    for (const auto& cat : cats) {
      MrcExample ex;
      ex.kind = MrcKind::SUB;
      ex.query = build_sub_query(cat);
      ex.doc_id = doc.doc_id;
      ex.category_id = cat.id;
      MrcInput x = encode_example(ex, ds, tok, max_len);
      if (x.context_len() == 0) continue;
      out.push_back(std::move(x));
    }
  }
  return out;
}

std::vector<Prediction> predict_inputs(const ModelParams& p, const std::vector<MrcInput>& inputs,
                                       const DecodeConfig& cfg) {
  std::vector<Prediction> out;
  for (const auto& x : inputs) {
    auto ps = predict_example(p, x, cfg);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

// Shared across run_pipeline and cross_eval: corpus transforms, augmentation,
// vocabulary, encoding, and training, with checkpoint selection on the eval
// split of the training dataset.
struct TrainedRun {
  Dataset ds;
  std::vector<MrcExample> examples;
  std::vector<AugmentLogRow> aug_log;
  Tokenizer tok;
  ModelConfig mcfg;
  DecodeConfig dcfg;
  ModelParams params;
  TrainReport report;
  EncodeStats enc_stats;
};

TrainedRun build_and_train(const ExperimentSpec& spec, Dataset ds_in) {
  TrainedRun run;
  const uint64_t root = spec.seed;

  run.ds = stage("corpus", [&] {
    Dataset d = std::move(ds_in);
    d.task_mode = spec.task_mode;
    if (spec.fraction < 1.0) d = subsample(d, spec.fraction, stage_seed(root, kStageSubsample));
    if (spec.mention_replace_rate > 0)
      d = mention_replace(d, spec.mention_replace_rate, stage_seed(root, kStageMentionReplace));
    return d;
  });
  const Dataset& ds = run.ds;

  run.examples = stage("augment", [&] {
    std::vector<MrcExample> ex = build_sub_examples(ds, Split::train);
    if (spec.augment.strategy != AugmentStrategy::none) {
      AugmentConfig acfg = spec.augment;
      acfg.seed = stage_seed(root, kStageAugment);
      auto pairs = sample_pairs(build_span_sets(ds), acfg, &run.aug_log);
      auto pr = build_pr_examples(pairs, ds);
      ex.insert(ex.end(), pr.begin(), pr.end());
    }
    if (spec.balance_examples) ex = balance(ex, stage_seed(root, kStageBalance), spec.balance_ratio);
    return ex;
  });

  stage("train", [&] {
    run.tok = build_vocab(ds, spec.min_freq, spec.lowercase);
    run.mcfg = spec.model;
    run.mcfg.vocab_size = run.tok.size();
    run.mcfg.init_seed = stage_seed(root, kStageInit);
    run.dcfg = spec.decode;
    run.dcfg.mode = spec.task_mode;

    std::vector<MrcInput> inputs = encode_all(run.examples, ds, run.tok, run.mcfg.max_len, &run.enc_stats);
    std::erase_if(inputs, [](const MrcInput& x) { return x.context_len() == 0; });
    if (inputs.empty()) throw PipelineError("train stage: no usable training examples");

    std::vector<MrcInput> eval_inputs =
        encode_split_queries(ds, run.tok, spec.eval_split, run.mcfg.max_len, ds.categories);
    std::vector<SpanAnnotation> gold = gold_spans(ds, spec.eval_split);

    TrainConfig tcfg = spec.train;
    tcfg.seed = stage_seed(root, kStageTrain);
    EvalFn eval_fn;
    if (tcfg.eval_every > 0 && !eval_inputs.empty()) {
      eval_fn = [&](const ModelParams& m) {
        return span_prf(predict_inputs(m, eval_inputs, run.dcfg), gold).micro.f1();
      };
    }
    ModelParams start = ModelParams::init(run.mcfg);
    run.params = train(start, inputs, spec.task_mode, tcfg, &run.report, eval_fn);
    return 0;
  });
  return run;
}

json train_report_json(const TrainReport& r) {
  json losses = json::array();
  json scores = json::array();
  for (const auto& e : r.epochs) {
    losses.push_back(e.train_loss);
    scores.push_back(e.eval_score);
  }
  return {{"epochs", r.epochs.size()}, {"best_epoch", r.best_epoch},       {"best_score", r.best_score},
          {"steps", r.steps},          {"stopped_early", r.stopped_early}, {"epoch_losses", losses},
          {"eval_scores", scores}};
}

}  // namespace

uint64_t stage_seed(uint64_t root, uint64_t stage_index) { return Rng(root).fork(stage_index).next_u64(); }

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

ExperimentSpec parse_experiment_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw PipelineError(std::string("spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw PipelineError("spec must be a JSON object");

  ExperimentSpec spec;
  try {
    check_keys(j, "spec",
               {"dataset", "synth", "fraction", "mention_replace_rate", "augment", "balance", "balance_ratio",
                "task_mode", "vocab", "model", "train", "decode", "eval_split", "eval_modes", "sweep", "seed"});
    spec.dataset_path = j.value("dataset", std::string());
    if (j.contains("synth")) {
      const json& s = j["synth"];
      check_keys(s, "synth", {"seed", "docs", "skew"});
      SynthSpec ss;
      ss.seed = s.value("seed", uint64_t{1});
      ss.n_docs = s.value("docs", 50);
      ss.skew = s.value("skew", 1.0);
      spec.synth = ss;
    }
    spec.fraction = j.value("fraction", 1.0);
    spec.mention_replace_rate = j.value("mention_replace_rate", 0.0);
    if (j.contains("augment")) {
      const json& a = j["augment"];
      check_keys(a, "augment", {"strategy", "lambda"});
      if (a.contains("strategy")) {
        auto s = parse_strategy(a["strategy"].get<std::string>());
        if (!s) throw PipelineError("unknown augment strategy: " + a["strategy"].get<std::string>());
        spec.augment.strategy = *s;
      }
      spec.augment.lambda = a.value("lambda", 1.0);
    }
    spec.balance_examples = j.value("balance", true);
    spec.balance_ratio = j.value("balance_ratio", 1.0);
    if (j.contains("task_mode")) spec.task_mode = parse_task_mode(j["task_mode"].get<std::string>());
    if (j.contains("vocab")) {
      const json& v = j["vocab"];
      check_keys(v, "vocab", {"min_freq", "lowercase"});
      spec.min_freq = v.value("min_freq", 1);
      spec.lowercase = v.value("lowercase", false);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m, "model", {"d", "layers", "heads", "d_ff", "max_len", "max_span_len"});
      spec.model.d = m.value("d", spec.model.d);
      spec.model.layers = m.value("layers", spec.model.layers);
      spec.model.heads = m.value("heads", spec.model.heads);
      spec.model.d_ff = m.value("d_ff", spec.model.d_ff);
      spec.model.max_len = m.value("max_len", spec.model.max_len);
      spec.model.max_span_len = m.value("max_span_len", spec.model.max_span_len);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, "train",
                 {"lr", "batch_size", "epochs", "weight_decay", "grad_clip", "eval_every", "stop_at_eval_score",
                  "loss"});
      spec.train.lr = t.value("lr", spec.train.lr);
      spec.train.batch_size = t.value("batch_size", spec.train.batch_size);
      spec.train.epochs = t.value("epochs", spec.train.epochs);
      spec.train.weight_decay = t.value("weight_decay", spec.train.weight_decay);
      spec.train.grad_clip = t.value("grad_clip", spec.train.grad_clip);
      spec.train.eval_every = t.value("eval_every", spec.train.eval_every);
      spec.train.stop_at_eval_score = t.value("stop_at_eval_score", spec.train.stop_at_eval_score);
      if (t.contains("loss")) {
        const json& l = t["loss"];
        check_keys(l, "loss", {"margin", "alpha", "contrastive", "rand_span_candidates"});
        spec.train.loss.margin = l.value("margin", spec.train.loss.margin);
        spec.train.loss.alpha = l.value("alpha", spec.train.loss.alpha);
        if (l.contains("contrastive"))
          spec.train.loss.mode = parse_contrastive(l["contrastive"].get<std::string>());
        spec.train.loss.rand_span_candidates = l.value("rand_span_candidates", spec.train.loss.rand_span_candidates);
      }
    }
    if (j.contains("decode")) {
      const json& d = j["decode"];
      check_keys(d, "decode", {"threshold", "max_span_len", "allow_nested", "topk"});
      spec.decode.threshold = d.value("threshold", spec.decode.threshold);
      spec.decode.max_span_len = d.value("max_span_len", spec.decode.max_span_len);
      spec.decode.allow_nested = d.value("allow_nested", spec.decode.allow_nested);
      spec.decode.topk = d.value("topk", spec.decode.topk);
    }
    if (j.contains("eval_split")) {
      auto s = parse_split(j["eval_split"].get<std::string>());
      if (!s) throw PipelineError("unknown eval_split: " + j["eval_split"].get<std::string>());
      spec.eval_split = *s;
    }
    if (j.contains("eval_modes")) spec.eval_modes = j["eval_modes"].get<std::vector<std::string>>();
    if (j.contains("sweep")) {
      const json& s = j["sweep"];
      check_keys(s, "sweep", {"lambda", "fraction", "strategy"});
      if (s.contains("lambda")) spec.lambda_values = s["lambda"].get<std::vector<double>>();
      if (s.contains("fraction")) spec.fraction_values = s["fraction"].get<std::vector<double>>();
      if (s.contains("strategy")) {
        spec.strategy_values.clear();
        for (const auto& name : s["strategy"]) {
          auto st = parse_strategy(name.get<std::string>());
          if (!st) throw PipelineError("unknown sweep strategy: " + name.get<std::string>());
          spec.strategy_values.push_back(*st);
        }
      }
    }
    spec.seed = j.value("seed", uint64_t{0});
  } catch (const json::exception& e) {
    throw PipelineError(std::string("bad spec field: ") + e.what());
  }
  return spec;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read spec " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_spec(ss.str());
}

std::string serialize_experiment_spec(const ExperimentSpec& spec) {
  json j;
  if (!spec.dataset_path.empty()) j["dataset"] = spec.dataset_path;
  if (spec.synth)
    j["synth"] = {{"seed", spec.synth->seed}, {"docs", spec.synth->n_docs}, {"skew", spec.synth->skew}};
  j["fraction"] = spec.fraction;
  j["mention_replace_rate"] = spec.mention_replace_rate;
  j["augment"] = {{"strategy", strategy_name(spec.augment.strategy)}, {"lambda", spec.augment.lambda}};
  j["balance"] = spec.balance_examples;
  j["balance_ratio"] = spec.balance_ratio;
  j["task_mode"] = task_mode_name(spec.task_mode);
  j["vocab"] = {{"min_freq", spec.min_freq}, {"lowercase", spec.lowercase}};
  j["model"] = {{"d", spec.model.d},           {"layers", spec.model.layers},
                {"heads", spec.model.heads},   {"d_ff", spec.model.d_ff},
                {"max_len", spec.model.max_len}, {"max_span_len", spec.model.max_span_len}};
  j["train"] = {{"lr", spec.train.lr},
                {"batch_size", spec.train.batch_size},
                {"epochs", spec.train.epochs},
                {"weight_decay", spec.train.weight_decay},
                {"grad_clip", spec.train.grad_clip},
                {"eval_every", spec.train.eval_every},
                {"stop_at_eval_score", spec.train.stop_at_eval_score},
                {"loss",
                 {{"margin", spec.train.loss.margin},
                  {"alpha", spec.train.loss.alpha},
                  {"contrastive", contrastive_name(spec.train.loss.mode)},
                  {"rand_span_candidates", spec.train.loss.rand_span_candidates}}}};
  j["decode"] = {{"threshold", spec.decode.threshold},
                 {"max_span_len", spec.decode.max_span_len},
                 {"allow_nested", spec.decode.allow_nested},
                 {"topk", spec.decode.topk}};
  j["eval_split"] = split_name(spec.eval_split);
  j["eval_modes"] = spec.eval_modes;
  json strategies = json::array();
  for (auto s : spec.strategy_values) strategies.push_back(strategy_name(s));
  j["sweep"] = {{"lambda", spec.lambda_values}, {"fraction", spec.fraction_values}, {"strategy", strategies}};
  j["seed"] = spec.seed;
  return j.dump();
}

uint64_t config_hash(const ExperimentSpec& spec) {
  std::string s = serialize_experiment_spec(spec);
  return fnv1a64(s.data(), s.size());
}

void validate_experiment_spec(const ExperimentSpec& spec) {
  const bool has_path = !spec.dataset_path.empty();
  if (has_path == spec.synth.has_value())
    throw PipelineError("spec needs exactly one of dataset and synth");
  if (has_path && !std::filesystem::exists(spec.dataset_path))
    throw PipelineError("dataset not found: " + spec.dataset_path);
  if (spec.synth && spec.synth->n_docs <= 0) throw PipelineError("synth docs must be positive");
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) throw PipelineError("fraction must be in (0, 1]");
  if (spec.mention_replace_rate < 0.0 || spec.mention_replace_rate > 1.0)
    throw PipelineError("mention_replace_rate must be in [0, 1]");
  if (spec.balance_ratio < 0.0) throw PipelineError("balance_ratio must be >= 0");
  if (spec.min_freq < 1) throw PipelineError("vocab min_freq must be >= 1");
  if (spec.model.d <= 0 || spec.model.layers <= 0 || spec.model.heads <= 0 || spec.model.d_ff <= 0)
    throw PipelineError("model dimensions must be positive");
  if (spec.model.d % spec.model.heads != 0) throw PipelineError("model d must be divisible by heads");
  if (spec.model.max_len < 8) throw PipelineError("model max_len must be >= 8");
  if (spec.model.max_span_len < 1) throw PipelineError("model max_span_len must be >= 1");
  if (spec.train.lr <= 0) throw PipelineError("train lr must be positive");
  if (spec.train.batch_size <= 0) throw PipelineError("train batch_size must be positive");
  if (spec.train.epochs <= 0) throw PipelineError("train epochs must be positive");
  if (spec.train.weight_decay < 0 || spec.train.weight_decay >= 1)
    throw PipelineError("train weight_decay must be in [0, 1)");
  if (spec.train.grad_clip < 0) throw PipelineError("train grad_clip must be >= 0");
  if (spec.train.eval_every < 0) throw PipelineError("train eval_every must be >= 0");
  if (spec.train.loss.rand_span_candidates < 0)
    throw PipelineError("loss rand_span_candidates must be >= 0");
  if (spec.train.loss.alpha < 0) throw PipelineError("loss alpha must be >= 0");
  if (spec.train.loss.margin < 0) throw PipelineError("loss margin must be >= 0");
  if (!(spec.decode.threshold > 0.0 && spec.decode.threshold < 1.0))
    throw PipelineError("decode threshold must be in (0, 1)");
  if (spec.decode.max_span_len < 1) throw PipelineError("decode max_span_len must be >= 1");
  if (spec.decode.topk < 1) throw PipelineError("decode topk must be >= 1");
  for (const auto& mode : spec.eval_modes)
    if (mode != "prf" && mode != "aupr" && mode != "errors" && mode != "simdist")
      throw PipelineError("unknown eval mode: " + mode);
}

std::vector<Prediction> predict_split(const ModelParams& p, const Dataset& ds, const Tokenizer& tok, Split split,
                                      const DecodeConfig& cfg, const std::vector<Category>* categories) {
  auto inputs = encode_split_queries(ds, tok, split, p.config.max_len, categories ? *categories : ds.categories);
  return predict_inputs(p, inputs, cfg);
}

std::vector<SpanAnnotation> gold_spans(const Dataset& ds, Split split) {
  std::vector<SpanAnnotation> out;
  for (const auto& a : ds.annotations) {
    const Document* d = ds.find_document(a.doc_id);
    if (d && d->split == split) out.push_back(a);
  }
  return out;
}

PipelineResult run_pipeline(const ExperimentSpec& spec, const std::string& out_dir) {
  validate_experiment_spec(spec);
  std::filesystem::create_directories(out_dir);

  PipelineResult result;
  result.out_dir = out_dir;
  result.config = config_hash(spec);

  Dataset source = stage("corpus", [&] {
    return spec.synth ? gen_synthetic(spec.synth->seed, spec.synth->n_docs, spec.synth->skew)
                      : load_dataset(spec.dataset_path);
  });
  TrainedRun run = build_and_train(spec, std::move(source));
  result.train_report = run.report;

  stage("corpus", [&] {
    save_dataset(run.ds, out_dir + "/data.jsonl");
    return 0;
  });
  stage("augment", [&] {
    save_mrc(run.examples, out_dir + "/mrc.jsonl");
    return 0;
  });
  stage("train", [&] {
    save_checkpoint(run.params, run.tok, out_dir + "/model.ckpt");
    return 0;
  });

  std::vector<SpanAnnotation> gold = gold_spans(run.ds, spec.eval_split);
  std::vector<Prediction> preds = stage("predict", [&] {
    return predict_split(run.params, run.ds, run.tok, spec.eval_split, run.dcfg, nullptr);
  });
  stage("predict", [&] {
    save_predictions(preds, out_dir + "/predictions.jsonl");
    return 0;
  });

  json report = stage("evaluate", [&] {
    json rep;
    rep["eval_split"] = split_name(spec.eval_split);
    rep["train"] = train_report_json(run.report);
    json aug = json::array();
    for (const auto& row : run.aug_log)
      aug.push_back({{"category", row.category_id},
                     {"set_size", row.set_size},
                     {"pair_count", row.pair_count},
                     {"requested", row.requested},
                     {"actual", row.actual}});
    rep["augment"] = aug;
    rep["encode"] = {{"dropped_answers", run.enc_stats.dropped_answers},
                     {"truncated_contexts", run.enc_stats.truncated_contexts}};

    std::set<std::string> modes(spec.eval_modes.begin(), spec.eval_modes.end());
    result.eval = span_prf(preds, gold);
    if (modes.count("prf")) {
      json per = json::array();
      for (const auto& [cat_id, counts] : result.eval.per_category) {
        json row = prf_json(counts);
        row["category"] = cat_id;
        const Category* c = run.ds.find_category(cat_id);
        if (c) row["name"] = c->name;
        per.push_back(row);
      }
      rep["prf"] = {{"micro", prf_json(result.eval.micro)}, {"per_category", per}};
    }
    if (modes.count("aupr")) {
      result.curve = pr_curve(preds, gold);
      result.has_curve = true;
      json points = json::array();
      for (const auto& pt : result.curve.points)
        points.push_back({{"threshold", pt.threshold}, {"precision", pt.precision}, {"recall", pt.recall}});
      rep["aupr"] = {{"aupr", result.curve.aupr},
                     {"precision_at_080_recall", result.curve.precision_at(0.8)},
                     {"points", points}};
    }
    if (modes.count("errors")) {
      ErrorReport er = classify_errors(preds, gold);
      json counts;
      for (const auto& [bucket, n] : er.counts) counts[error_bucket_name(bucket)] = n;
      json instances = json::array();
      for (const auto& inst : er.instances)
        instances.push_back({{"bucket", error_bucket_name(inst.bucket)},
                             {"doc_id", inst.doc_id},
                             {"start", inst.start},
                             {"end", inst.end},
                             {"pred_category", inst.pred_category},
                             {"gold_category", inst.gold_category}});
      rep["errors"] = {{"tp", er.tp}, {"counts", counts}, {"instances", instances}};
    }
    if (modes.count("simdist")) {
      auto rows = similarity_distribution(run.params, run.ds, run.tok, spec.eval_split);
      double pos_sum = 0, neg_sum = 0;
      int64_t pos_n = 0, neg_n = 0;
      json jrows = json::array();
      for (const auto& row : rows) {
        (row.positive ? pos_sum : neg_sum) += row.sigma;
        (row.positive ? pos_n : neg_n) += 1;
        jrows.push_back({{"category", row.category_id}, {"positive", row.positive}, {"sigma", row.sigma}});
      }
      double mean_pos = pos_n ? pos_sum / pos_n : 0;
      double mean_neg = neg_n ? neg_sum / neg_n : 0;
      rep["simdist"] = {{"mean_positive", mean_pos},
                        {"mean_negative", mean_neg},
                        {"separation", mean_pos - mean_neg},
                        {"rows", jrows}};
    }

    // Recall over gold spans whose surface never occurs in the train split,
    // the generalization slice the synthetic holdout is built for.
    std::set<std::string> train_surfaces;
    for (const auto& a : run.ds.annotations) {
      const Document* d = run.ds.find_document(a.doc_id);
      if (d && d->split == Split::train) train_surfaces.insert(a.surface);
    }
    std::map<std::tuple<std::string, int, int, int>, int64_t> pred_keys;
    for (const auto& p : preds) pred_keys[{p.doc_id, p.start_char, p.end_char, p.category_id}] += 1;
    int64_t unseen = 0, unseen_hit = 0;
    for (const auto& g : gold) {
      if (train_surfaces.count(g.surface)) continue;
      ++unseen;
      auto it = pred_keys.find({g.doc_id, g.start_char, g.end_char, g.category_id});
      if (it != pred_keys.end() && it->second > 0) {
        --it->second;
        ++unseen_hit;
      }
    }
    result.unseen_surface_gold = unseen;
    result.unseen_surface_recall = unseen ? static_cast<double>(unseen_hit) / unseen : 0.0;
    rep["unseen_surface"] = {{"gold", unseen}, {"recall", result.unseen_surface_recall}};
    return rep;
  });
  write_text(out_dir + "/report.json", report.dump(2) + "\n");

  json manifest;
  manifest["root_seed"] = spec.seed;
  if (spec.synth) manifest["synth_seed"] = spec.synth->seed;
  manifest["stage_seeds"] = {{"subsample", stage_seed(spec.seed, kStageSubsample)},
                             {"mention_replace", stage_seed(spec.seed, kStageMentionReplace)},
                             {"augment", stage_seed(spec.seed, kStageAugment)},
                             {"balance", stage_seed(spec.seed, kStageBalance)},
                             {"init", stage_seed(spec.seed, kStageInit)},
                             {"train", stage_seed(spec.seed, kStageTrain)}};
  manifest["config"] = json::parse(serialize_experiment_spec(spec));
  manifest["config_hash"] = hex64(result.config);
  json hashes;
  for (const char* name : {"data.jsonl", "mrc.jsonl", "model.ckpt", "predictions.jsonl", "report.json"}) {
    uint64_t h = file_hash(out_dir + "/" + name);
    hashes[name] = hex64(h);
    result.output_hashes[name] = h;
  }
  manifest["output_hashes"] = hashes;
  write_text(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return result;
}

SweepResult run_sweep(const ExperimentSpec& spec, const std::string& axis, const std::string& out_dir,
                      int threads) {
  validate_experiment_spec(spec);
  SweepResult result;
  result.axis = axis;

  std::vector<ExperimentSpec> cells;
  std::vector<std::string> values;
  if (axis == "lambda") {
    for (double v : spec.lambda_values) {
      ExperimentSpec s = spec;
      s.augment.lambda = v;
      cells.push_back(std::move(s));
      values.push_back(format_double(v));
    }
  } else if (axis == "fraction") {
    for (double v : spec.fraction_values) {
      ExperimentSpec s = spec;
      s.fraction = v;
      cells.push_back(std::move(s));
      values.push_back(format_double(v));
    }
  } else if (axis == "strategy") {
    for (AugmentStrategy v : spec.strategy_values) {
      ExperimentSpec s = spec;
      s.augment.strategy = v;
      cells.push_back(std::move(s));
      values.push_back(strategy_name(v));
    }
  } else {
    throw PipelineError("unknown sweep axis: " + axis + " (expected lambda, fraction, or strategy)");
  }
  if (cells.size() < 2) throw PipelineError("sweep axis " + axis + " needs at least 2 values");

  std::filesystem::create_directories(out_dir);
  result.cells.resize(cells.size());
  auto run_cell = [&](size_t i) {
    SweepCell& cell = result.cells[i];
    cell.value = values[i];
    cell.config = config_hash(cells[i]);
    try {
      PipelineResult r = run_pipeline(cells[i], out_dir + "/" + axis + "=" + values[i]);
      cell.ok = true;
      cell.micro = r.eval.micro;
      cell.f1 = r.eval.micro.f1();
      if (r.has_curve) {
        cell.aupr = r.curve.aupr;
        cell.has_aupr = true;
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  };
  if (threads <= 1) {
    for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (size_t i; (i = next.fetch_add(1)) < cells.size();) run_cell(i);
    };
    std::vector<std::thread> pool;
    size_t n_workers = std::min<size_t>(static_cast<size_t>(threads), cells.size());
    pool.reserve(n_workers);
    for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  write_text(out_dir + "/sweep.json", sweep_json(result) + "\n");
  write_text(out_dir + "/sweep.txt", sweep_table(result));
  return result;
}

std::string sweep_table(const SweepResult& r) {
  std::ostringstream out;
  bool any_aupr = false;
  for (const auto& c : r.cells) any_aupr = any_aupr || c.has_aupr;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s", r.axis.c_str(), "P", "R", "F1");
  out << line;
  if (any_aupr) out << "     AUPR";
  out << "\n";
  for (const auto& c : r.cells) {
    if (!c.ok) {
      std::snprintf(line, sizeof(line), "%-12s error: %s", c.value.c_str(), c.error.c_str());
      out << line << "\n";
      continue;
    }
    std::snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %8.4f", c.value.c_str(), c.micro.precision(),
                  c.micro.recall(), c.f1);
    out << line;
    if (c.has_aupr) {
      std::snprintf(line, sizeof(line), " %8.4f", c.aupr);
      out << line;
    }
    out << "\n";
  }
  return out.str();
}

std::string sweep_json(const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json jc = {{"value", c.value}, {"ok", c.ok}, {"config_hash", hex64(c.config)}};
    if (c.ok) {
      jc["precision"] = c.micro.precision();
      jc["recall"] = c.micro.recall();
      jc["f1"] = c.f1;
      if (c.has_aupr) jc["aupr"] = c.aupr;
    } else {
      jc["error"] = c.error;
    }
    cells.push_back(std::move(jc));
  }
  return json{{"axis", r.axis}, {"cells", cells}}.dump();
}

EvalResult cross_eval(const Dataset& train_ds, const Dataset& test_ds, const ExperimentSpec& spec,
                      const std::string& out_dir) {
  std::vector<Category> shared;
  std::map<int, int> test_to_train;
  for (const auto& tc : train_ds.categories)
    for (const auto& ec : test_ds.categories)
      if (tc.name == ec.name) {
        shared.push_back(tc);
        test_to_train[ec.id] = tc.id;
      }
  if (shared.empty()) throw PipelineError("cross-eval: the datasets share no category names");

  TrainedRun run = build_and_train(spec, train_ds);

  Dataset view;
  view.task_mode = spec.task_mode;
  view.categories = shared;
  view.documents = test_ds.documents;
  for (const auto& a : test_ds.annotations) {
    auto it = test_to_train.find(a.category_id);
    if (it == test_to_train.end()) continue;
    SpanAnnotation mapped = a;
    mapped.category_id = it->second;
    view.annotations.push_back(std::move(mapped));
  }

  std::vector<Prediction> preds = stage("predict", [&] {
    return predict_split(run.params, view, run.tok, spec.eval_split, run.dcfg, &shared);
  });
  std::vector<SpanAnnotation> gold = gold_spans(view, spec.eval_split);
  EvalResult eval = span_prf(preds, gold);

  std::filesystem::create_directories(out_dir);
  save_checkpoint(run.params, run.tok, out_dir + "/model.ckpt");
  save_predictions(preds, out_dir + "/predictions.jsonl");
  json per = json::array();
  for (const auto& [cat_id, counts] : eval.per_category) {
    json row = prf_json(counts);
    row["category"] = cat_id;
    const Category* c = view.find_category(cat_id);
    if (c) row["name"] = c->name;
    per.push_back(row);
  }
  json names = json::array();
  for (const auto& c : shared) names.push_back(c.name);
  json rep = {{"shared_categories", names},
              {"eval_split", split_name(spec.eval_split)},
              {"prf", {{"micro", prf_json(eval.micro)}, {"per_category", per}}}};
  write_text(out_dir + "/report.json", rep.dump(2) + "\n");
  return eval;
}

}  // namespace spanid
