#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spanid/corpus.hpp"
#include "spanid/encode.hpp"
#include "spanid/eval.hpp"
#include "spanid/mrc_data.hpp"
#include "spanid/model.hpp"
#include "spanid/pipeline.hpp"
#include "spanid/rng.hpp"
#include "spanid/tokenizer.hpp"
#include "spanid/train.hpp"

namespace {

using namespace spanid;
using nlohmann::json;

// Exit code 2: bad flags, bad spec, or malformed input files. Everything
// else that throws during execution exits 3.
struct Invalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Dataset cli_load_dataset(const std::string& path, bool allow_nested = false) {
  try {
    return load_dataset(path, LoadOptions{allow_nested});
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

std::vector<MrcExample> cli_load_mrc(const std::string& path) {
  try {
    return load_mrc(path);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

std::vector<Prediction> cli_load_preds(const std::string& path) {
  try {
    return load_predictions(path);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

Checkpoint cli_load_ckpt(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

ExperimentSpec cli_load_spec(const std::string& path) {
  try {
    return load_experiment_spec(path);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

void cli_validate_spec(const ExperimentSpec& spec) {
  try {
    validate_experiment_spec(spec);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
}

std::string need_out(const std::string& out, const char* what) {
  if (out.empty()) throw Invalid(std::string(what) + " needs --out");
  return out;
}

Split need_split(const std::string& s, const char* what) {
  auto sp = parse_split(s);
  if (!sp) throw Invalid(std::string(what) + ": unknown split '" + s + "' (expected train, dev, or test)");
  return *sp;
}

void print_prf(const EvalResult& ev, const Dataset* ds) {
  std::printf("micro  P %.4f  R %.4f  F1 %.4f  (tp %lld fp %lld fn %lld)\n", ev.micro.precision(),
              ev.micro.recall(), ev.micro.f1(), static_cast<long long>(ev.micro.tp),
              static_cast<long long>(ev.micro.fp), static_cast<long long>(ev.micro.fn));
  for (const auto& [cat_id, c] : ev.per_category) {
    const Category* cat = ds ? ds->find_category(cat_id) : nullptr;
    std::printf("  %-20s P %.4f  R %.4f  F1 %.4f\n",
                (cat ? cat->name : std::to_string(cat_id)).c_str(), c.precision(), c.recall(), c.f1());
  }
}

int cmd_corpus_validate(const std::string& path, bool allow_nested) {
  LoadReport report;
  Dataset ds;
  try {
    ds = load_dataset(path, LoadOptions{allow_nested}, &report);
  } catch (const std::exception& e) {
    throw Invalid(e.what());
  }
  if (!report.ok()) {
    for (const auto& issue : report.errors) {
      if (issue.line > 0)
        std::fprintf(stderr, "line %d: %s\n", issue.line, issue.message.c_str());
      else
        std::fprintf(stderr, "%s\n", issue.message.c_str());
    }
    std::fprintf(stderr, "%zu problem(s) found\n", report.errors.size());
    return 2;
  }
  std::printf("ok: %zu categories, %zu documents, %zu spans\n", ds.categories.size(), ds.documents.size(),
              ds.annotations.size());
  return 0;
}

int cmd_corpus_stats(const std::string& path, bool allow_nested) {
  Dataset ds = cli_load_dataset(path, allow_nested);
  std::printf("documents: train %zu, dev %zu, test %zu\n", ds.count_documents(Split::train),
              ds.count_documents(Split::dev), ds.count_documents(Split::test));
  std::printf("%-4s %-20s %12s %12s\n", "id", "category", "train spans", "train docs");
  for (const auto& s : category_stats(ds))
    std::printf("%-4d %-20s %12lld %12lld\n", s.category_id, s.name.c_str(),
                static_cast<long long>(s.span_count), static_cast<long long>(s.doc_count));
  return 0;
}

int cmd_corpus_synth(uint64_t seed, int docs, double skew, const std::string& out) {
  if (docs <= 0) throw Invalid("corpus synth: --docs must be positive");
  SynthLog log;
  Dataset ds = gen_synthetic(seed, docs, skew, &log);
  save_dataset(ds, need_out(out, "corpus synth"));
  std::printf("wrote %s: %zu documents, %zu spans\n", out.c_str(), ds.documents.size(), ds.annotations.size());
  for (const auto& [cat_id, surfaces] : log.held_out_surfaces) {
    const Category* cat = ds.find_category(cat_id);
    std::printf("held out of train (%s):", cat ? cat->name.c_str() : "?");
    for (const auto& s : surfaces) std::printf(" \"%s\"", s.c_str());
    std::printf("\n");
  }
  return 0;
}

int cmd_corpus_subsample(const std::string& path, double fraction, uint64_t seed, const std::string& out) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Invalid("corpus subsample: --fraction must be in (0, 1]");
  Dataset ds = cli_load_dataset(path);
  Dataset sub = subsample(ds, fraction, seed);
  save_dataset(sub, need_out(out, "corpus subsample"));
  std::printf("kept %zu of %zu train documents\n", sub.count_documents(Split::train),
              ds.count_documents(Split::train));
  return 0;
}

int cmd_augment(const std::string& input, const std::string& strategy_name_arg, double lambda, uint64_t seed,
                bool do_balance, double balance_ratio, bool allow_nested, const std::string& out) {
  if (input.empty()) throw Invalid("augment needs --input");
  auto strategy = parse_strategy(strategy_name_arg);
  if (!strategy) throw Invalid("augment: unknown strategy '" + strategy_name_arg + "'");
  if (balance_ratio < 0) throw Invalid("augment: --balance-ratio must be >= 0");
  Dataset ds = cli_load_dataset(input, allow_nested);

  std::vector<MrcExample> examples = build_sub_examples(ds, Split::train);
  size_t n_sub = examples.size();
  std::vector<AugmentLogRow> log;
  if (*strategy != AugmentStrategy::none) {
    AugmentConfig cfg;
    cfg.strategy = *strategy;
    cfg.lambda = lambda;
    cfg.seed = seed;
    auto pairs = sample_pairs(build_span_sets(ds), cfg, &log);
    auto pr = build_pr_examples(pairs, ds);
    examples.insert(examples.end(), pr.begin(), pr.end());
  }
  size_t before_balance = examples.size();
  if (do_balance) examples = balance(examples, seed, balance_ratio);
  save_mrc(examples, need_out(out, "augment"));

  if (!log.empty()) {
    std::printf("%-4s %8s %10s %10s %8s\n", "cat", "|S_y|", "|P_y|", "requested", "actual");
    for (const auto& row : log)
      std::printf("%-4d %8lld %10lld %10lld %8lld\n", row.category_id, static_cast<long long>(row.set_size),
                  static_cast<long long>(row.pair_count), static_cast<long long>(row.requested),
                  static_cast<long long>(row.actual));
  }
  std::printf("%zu SUB + %zu PR examples", n_sub, before_balance - n_sub);
  if (do_balance) std::printf(", %zu after balancing", examples.size());
  std::printf(" -> %s\n", out.c_str());
  return 0;
}

int cmd_menreplace(const std::string& input, double rate, uint64_t seed, bool allow_nested,
                   const std::string& out) {
  if (input.empty()) throw Invalid("augment menreplace needs --input");
  if (rate < 0.0 || rate > 1.0) throw Invalid("augment menreplace: --rate must be in [0, 1]");
  Dataset ds = cli_load_dataset(input, allow_nested);
  Dataset replaced = mention_replace(ds, rate, seed);
  save_dataset(replaced, need_out(out, "augment menreplace"));
  std::printf("wrote %s: %zu documents, %zu spans\n", out.c_str(), replaced.documents.size(),
              replaced.annotations.size());
  return 0;
}

int cmd_train(const std::string& data, const std::string& corpus, const std::string& config_path,
              bool allow_nested, uint64_t root_seed, bool seed_given, const std::string& out) {
  ExperimentSpec spec = config_path.empty() ? ExperimentSpec{} : cli_load_spec(config_path);
  if (seed_given) spec.seed = root_seed;
  Dataset ds = cli_load_dataset(corpus, allow_nested);
  ds.task_mode = spec.task_mode;
  std::vector<MrcExample> examples = cli_load_mrc(data);

  std::string dir = need_out(out, "train");
  std::filesystem::create_directories(dir);

  Tokenizer tok = build_vocab(ds, spec.min_freq, spec.lowercase);
  ModelConfig mcfg = spec.model;
  mcfg.vocab_size = tok.size();
  mcfg.init_seed = stage_seed(spec.seed, kStageInit);
  DecodeConfig dcfg = spec.decode;
  dcfg.mode = spec.task_mode;

  EncodeStats enc_stats;
  std::vector<MrcInput> inputs = encode_all(examples, ds, tok, mcfg.max_len, &enc_stats);
  std::erase_if(inputs, [](const MrcInput& x) { return x.context_len() == 0; });
  if (inputs.empty()) throw Invalid("train: no usable training examples");

  std::vector<SpanAnnotation> gold = gold_spans(ds, spec.eval_split);
  TrainConfig tcfg = spec.train;
  tcfg.seed = stage_seed(spec.seed, kStageTrain);
  EvalFn eval_fn;
  if (tcfg.eval_every > 0)
    eval_fn = [&](const ModelParams& m) {
      return span_prf(predict_split(m, ds, tok, spec.eval_split, dcfg), gold).micro.f1();
    };

  TrainReport report;
  ModelParams params = train(ModelParams::init(mcfg), inputs, spec.task_mode, tcfg, &report, eval_fn);
  save_checkpoint(params, tok, dir + "/model.ckpt");

  json losses = json::array();
  json scores = json::array();
  for (const auto& e : report.epochs) {
    losses.push_back(e.train_loss);
    scores.push_back(e.eval_score);
  }
  json jreport = {{"epochs", report.epochs.size()}, {"best_epoch", report.best_epoch},
                  {"best_score", report.best_score}, {"steps", report.steps},
                  {"stopped_early", report.stopped_early}, {"epoch_losses", losses},
                  {"eval_scores", scores}};
  std::ofstream rf(dir + "/train_report.json", std::ios::binary);
  rf << jreport.dump(2) << "\n";

  double final_loss = report.epochs.empty() ? 0.0 : report.epochs.back().train_loss;
  std::printf("trained %zu epochs on %zu examples, final loss %.4f", report.epochs.size(), inputs.size(),
              final_loss);
  if (report.best_epoch >= 0)
    std::printf(", best eval %.4f at epoch %d", report.best_score, report.best_epoch);
  std::printf("\ncheckpoint: %s/model.ckpt\n", dir.c_str());
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data, const std::string& split_name_arg,
                const std::string& mode, double threshold, int max_span_len, bool allow_nested_decode,
                int topk, bool allow_nested_load, const std::string& out) {
  Checkpoint ckpt = cli_load_ckpt(ckpt_path);
  Dataset ds = cli_load_dataset(data, allow_nested_load);
  Split split = need_split(split_name_arg, "predict");
  DecodeConfig cfg;
  if (mode == "selector")
    cfg.mode = TaskMode::selector;
  else if (mode == "topk")
    cfg.mode = TaskMode::topk;
  else
    throw Invalid("predict: unknown --mode '" + mode + "'");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Invalid("predict: --threshold must be in (0, 1)");
  cfg.threshold = threshold;
  cfg.max_span_len = max_span_len;
  cfg.allow_nested = allow_nested_decode;
  cfg.topk = topk;

  std::vector<Prediction> preds = predict_split(ckpt.params, ds, ckpt.tokenizer, split, cfg);
  save_predictions(preds, need_out(out, "predict"));
  std::printf("%zu predictions on the %s split -> %s\n", preds.size(), split_name(split), out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& preds_path, const std::string& gold_path, const std::string& mode,
                 const std::string& split_arg, const std::string& ckpt_path, bool allow_nested,
                 const std::string& out) {
  std::vector<Prediction> preds = cli_load_preds(preds_path);
  Dataset ds = cli_load_dataset(gold_path, allow_nested);
  std::vector<SpanAnnotation> gold =
      split_arg.empty() ? ds.annotations : gold_spans(ds, need_split(split_arg, "evaluate"));

  json report;
  report["mode"] = mode;
  if (mode == "prf") {
    EvalResult ev = span_prf(preds, gold);
    print_prf(ev, &ds);
    json per = json::array();
    for (const auto& [cat_id, c] : ev.per_category) {
      const Category* cat = ds.find_category(cat_id);
      json row = {{"category", cat_id}, {"tp", c.tp},
                  {"fp", c.fp},         {"fn", c.fn},
                  {"precision", c.precision()}, {"recall", c.recall()},
                  {"f1", c.f1()}};
      if (cat) row["name"] = cat->name;
      per.push_back(row);
    }
    report["micro"] = {{"tp", ev.micro.tp},
                       {"fp", ev.micro.fp},
                       {"fn", ev.micro.fn},
                       {"precision", ev.micro.precision()},
                       {"recall", ev.micro.recall()},
                       {"f1", ev.micro.f1()}};
    report["per_category"] = per;
  } else if (mode == "aupr") {
    PrCurve curve = pr_curve(preds, gold);
    std::printf("AUPR %.4f, precision at 0.8 recall %.4f, %zu curve points\n", curve.aupr,
                curve.precision_at(0.8), curve.points.size());
    json points = json::array();
    for (const auto& pt : curve.points)
      points.push_back({{"threshold", pt.threshold}, {"precision", pt.precision}, {"recall", pt.recall}});
    report["aupr"] = curve.aupr;
    report["precision_at_080_recall"] = curve.precision_at(0.8);
    report["points"] = points;
  } else if (mode == "errors") {
    ErrorReport er = classify_errors(preds, gold);
    std::printf("true positives: %lld\n", static_cast<long long>(er.tp));
    json counts;
    for (const auto& [bucket, n] : er.counts) {
      std::printf("%-18s %lld\n", error_bucket_name(bucket), static_cast<long long>(n));
      counts[error_bucket_name(bucket)] = n;
    }
    json instances = json::array();
    for (const auto& inst : er.instances)
      instances.push_back({{"bucket", error_bucket_name(inst.bucket)},
                           {"doc_id", inst.doc_id},
                           {"start", inst.start},
                           {"end", inst.end},
                           {"pred_category", inst.pred_category},
                           {"gold_category", inst.gold_category}});
    report["tp"] = er.tp;
    report["counts"] = counts;
    report["instances"] = instances;
  } else if (mode == "simdist") {
    if (ckpt_path.empty()) throw Invalid("evaluate --mode simdist needs --ckpt");
    if (split_arg.empty()) throw Invalid("evaluate --mode simdist needs --split");
    Checkpoint ckpt = cli_load_ckpt(ckpt_path);
    auto rows = similarity_distribution(ckpt.params, ds, ckpt.tokenizer, need_split(split_arg, "evaluate"));
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
    std::printf("mean sigma: positives %.4f (%lld), negatives %.4f (%lld), separation %.4f\n", mean_pos,
                static_cast<long long>(pos_n), mean_neg, static_cast<long long>(neg_n), mean_pos - mean_neg);
    report["mean_positive"] = mean_pos;
    report["mean_negative"] = mean_neg;
    report["separation"] = mean_pos - mean_neg;
    report["rows"] = jrows;
  } else {
    throw Invalid("evaluate: unknown --mode '" + mode + "' (expected prf, aupr, errors, or simdist)");
  }

  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << report.dump(2) << "\n";
    std::printf("report -> %s\n", out.c_str());
  }
  return 0;
}

int cmd_run(const std::string& spec_path, uint64_t root_seed, bool seed_given, const std::string& out) {
  ExperimentSpec spec = cli_load_spec(spec_path);
  if (seed_given) spec.seed = root_seed;
  cli_validate_spec(spec);
  PipelineResult r = run_pipeline(spec, need_out(out, "run"));
  std::printf("micro  P %.4f  R %.4f  F1 %.4f\n", r.eval.micro.precision(), r.eval.micro.recall(),
              r.eval.micro.f1());
  if (r.has_curve) std::printf("AUPR %.4f\n", r.curve.aupr);
  std::printf("artifacts in %s\n", r.out_dir.c_str());
  return 0;
}

int cmd_sweep(const std::string& spec_path, const std::string& axis, uint64_t root_seed, bool seed_given,
              int threads, const std::string& out) {
  ExperimentSpec spec = cli_load_spec(spec_path);
  if (seed_given) spec.seed = root_seed;
  cli_validate_spec(spec);
  size_t n_values = axis == "lambda"     ? spec.lambda_values.size()
                    : axis == "fraction" ? spec.fraction_values.size()
                    : axis == "strategy" ? spec.strategy_values.size()
                                         : 0;
  if (axis != "lambda" && axis != "fraction" && axis != "strategy")
    throw Invalid("sweep: unknown --axis '" + axis + "' (expected lambda, fraction, or strategy)");
  if (n_values < 2) throw Invalid("sweep: axis " + axis + " needs at least 2 values in the spec");
  SweepResult r = run_sweep(spec, axis, need_out(out, "sweep"), threads);
  std::fputs(sweep_table(r).c_str(), stdout);
  std::printf("series -> %s/sweep.json\n", out.c_str());
  return 0;
}

int cmd_cross_eval(const std::string& train_path, const std::string& test_path, const std::string& spec_path,
                   uint64_t root_seed, bool seed_given, bool allow_nested, const std::string& out) {
  Dataset train_ds = cli_load_dataset(train_path, allow_nested);
  Dataset test_ds = cli_load_dataset(test_path, allow_nested);
  ExperimentSpec spec = spec_path.empty() ? ExperimentSpec{} : cli_load_spec(spec_path);
  if (seed_given) spec.seed = root_seed;
  std::set<std::string> train_names, shared;
  for (const auto& c : train_ds.categories) train_names.insert(c.name);
  for (const auto& c : test_ds.categories)
    if (train_names.count(c.name)) shared.insert(c.name);
  if (shared.empty()) throw Invalid("cross-eval: the datasets share no category names");

  EvalResult ev = cross_eval(train_ds, test_ds, spec, need_out(out, "cross-eval"));
  std::printf("shared categories:");
  for (const auto& name : shared) std::printf(" %s", name.c_str());
  std::printf("\n");
  print_prf(ev, &train_ds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"span identification toolkit: corpora, peer-pair augmentation, MRC training, span metrics"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string out;
  int threads = 1;
  app.add_option("--seed", seed, "root seed for every seeded operation")->capture_default_str();
  app.add_option("-o,--out", out, "output file or directory");
  app.add_option("--threads", threads, "worker threads for sweep cells")->check(CLI::PositiveNumber);

  auto sub = [&](CLI::App* parent, const std::string& name, const std::string& desc) {
    CLI::App* s = parent->add_subcommand(name, desc);
    s->fallthrough();
    return s;
  };

  // corpus
  CLI::App* corpus = sub(&app, "corpus", "inspect, generate, and slice span-annotated corpora");
  corpus->require_subcommand(1);
  std::string corpus_path;
  bool allow_nested = false;
  CLI::App* c_validate = sub(corpus, "validate", "check a dataset file and report every problem");
  c_validate->add_option("path", corpus_path, "dataset JSONL")->required();
  c_validate->add_flag("--allow-nested", allow_nested, "permit nested and duplicate span ranges");
  CLI::App* c_stats = sub(corpus, "stats", "per-category span and document counts");
  c_stats->add_option("path", corpus_path, "dataset JSONL")->required();
  c_stats->add_flag("--allow-nested", allow_nested, "permit nested and duplicate span ranges");
  int synth_docs = 50;
  double synth_skew = 1.0;
  CLI::App* c_synth = sub(corpus, "synth", "generate the synthetic benchmark corpus");
  c_synth->add_option("--docs", synth_docs, "number of documents")->capture_default_str();
  c_synth->add_option("--skew", synth_skew, "category imbalance exponent")->capture_default_str();
  double fraction = 1.0;
  CLI::App* c_subsample = sub(corpus, "subsample", "keep a random fraction of train documents");
  c_subsample->add_option("path", corpus_path, "dataset JSONL")->required();
  c_subsample->add_option("--fraction", fraction, "fraction of train documents to keep")->required();

  // augment
  CLI::App* augment_cmd = sub(&app, "augment", "build SUB and peer-pair MRC training data");
  std::string aug_input, aug_strategy = "none";
  double aug_lambda = 1.0, aug_balance_ratio = 1.0;
  bool aug_balance = false, aug_allow_nested = false;
  augment_cmd->add_option("-i,--input", aug_input, "dataset JSONL");
  augment_cmd->add_option("--strategy", aug_strategy, "none, size, categ, or both")->capture_default_str();
  augment_cmd->add_option("--lambda", aug_lambda, "DA rate (may be negative)")->capture_default_str();
  augment_cmd->add_flag("--balance", aug_balance, "downsample unanswerable examples");
  augment_cmd->add_option("--balance-ratio", aug_balance_ratio, "unanswerable per answerable kept")
      ->capture_default_str();
  augment_cmd->add_flag("--allow-nested", aug_allow_nested, "permit nested and duplicate span ranges");
  std::string mr_input;
  double mr_rate = 0.0;
  CLI::App* menreplace = sub(augment_cmd, "menreplace", "swap train mentions for same-category surfaces");
  menreplace->add_option("-i,--input", mr_input, "dataset JSONL")->required();
  menreplace->add_option("--rate", mr_rate, "per-span replacement probability")->required();

  // train
  CLI::App* train_cmd = sub(&app, "train", "train the span MRC model");
  std::string train_data, train_corpus, train_config;
  bool train_allow_nested = false;
  train_cmd->add_option("--data", train_data, "MRC examples JSONL")->required();
  train_cmd->add_option("--corpus", train_corpus, "dataset JSONL providing contexts")->required();
  train_cmd->add_option("--config", train_config, "config JSON (model/train/vocab/decode keys)");
  train_cmd->add_flag("--allow-nested", train_allow_nested, "permit nested and duplicate span ranges");

  // predict
  CLI::App* predict_cmd = sub(&app, "predict", "decode spans for every document of a split");
  std::string pr_ckpt, pr_data, pr_split = "test", pr_mode = "selector";
  double pr_threshold = 0.5;
  int pr_max_span = 30, pr_topk = 20;
  bool pr_nested_decode = false, pr_nested_load = false;
  predict_cmd->add_option("--ckpt", pr_ckpt, "model checkpoint")->required();
  predict_cmd->add_option("--data", pr_data, "dataset JSONL")->required();
  predict_cmd->add_option("--split", pr_split, "train, dev, or test")->capture_default_str();
  predict_cmd->add_option("--mode", pr_mode, "selector or topk")->capture_default_str();
  predict_cmd->add_option("--threshold", pr_threshold, "selector probability threshold")->capture_default_str();
  predict_cmd->add_option("--max-span-len", pr_max_span, "maximum span length in tokens")->capture_default_str();
  predict_cmd->add_flag("--allow-nested", pr_nested_decode, "keep overlapping spans at decode time");
  predict_cmd->add_flag("--allow-nested-gold", pr_nested_load, "permit nested spans in the dataset");
  predict_cmd->add_option("--topk", pr_topk, "spans kept per example in topk mode")->capture_default_str();

  // evaluate
  CLI::App* eval_cmd = sub(&app, "evaluate", "score predictions against gold spans");
  std::string ev_preds, ev_gold, ev_mode = "prf", ev_split, ev_ckpt;
  bool ev_allow_nested = false;
  eval_cmd->add_option("--preds", ev_preds, "predictions JSONL")->required();
  eval_cmd->add_option("--gold", ev_gold, "dataset JSONL")->required();
  eval_cmd->add_option("--mode", ev_mode, "prf, aupr, errors, or simdist")->capture_default_str();
  eval_cmd->add_option("--split", ev_split, "restrict gold spans to one split");
  eval_cmd->add_option("--ckpt", ev_ckpt, "model checkpoint (simdist mode)");
  eval_cmd->add_flag("--allow-nested", ev_allow_nested, "permit nested and duplicate span ranges");

  // run / sweep / cross-eval
  CLI::App* run_cmd = sub(&app, "run", "run one experiment spec end to end");
  std::string run_spec;
  run_cmd->add_option("--spec", run_spec, "experiment spec JSON")->required();
  CLI::App* sweep_cmd = sub(&app, "sweep", "run one experiment per axis value and tabulate");
  std::string sweep_spec, sweep_axis;
  sweep_cmd->add_option("--spec", sweep_spec, "experiment spec JSON")->required();
  sweep_cmd->add_option("--axis", sweep_axis, "lambda, fraction, or strategy")->required();
  CLI::App* cross_cmd = sub(&app, "cross-eval", "train on one corpus, score shared categories on another");
  std::string cross_train, cross_test, cross_spec;
  bool cross_allow_nested = false;
  cross_cmd->add_option("--train", cross_train, "training dataset JSONL")->required();
  cross_cmd->add_option("--test", cross_test, "evaluation dataset JSONL")->required();
  cross_cmd->add_option("--spec", cross_spec, "experiment spec JSON (dataset keys ignored)");
  cross_cmd->add_flag("--allow-nested", cross_allow_nested, "permit nested and duplicate span ranges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const bool seed_given = app.count("--seed") > 0;

  try {
    if (c_validate->parsed()) return cmd_corpus_validate(corpus_path, allow_nested);
    if (c_stats->parsed()) return cmd_corpus_stats(corpus_path, allow_nested);
    if (c_synth->parsed()) return cmd_corpus_synth(seed, synth_docs, synth_skew, out);
    if (c_subsample->parsed()) return cmd_corpus_subsample(corpus_path, fraction, seed, out);
    if (menreplace->parsed()) return cmd_menreplace(mr_input, mr_rate, seed, aug_allow_nested, out);
    if (augment_cmd->parsed())
      return cmd_augment(aug_input, aug_strategy, aug_lambda, seed, aug_balance, aug_balance_ratio,
                         aug_allow_nested, out);
    if (train_cmd->parsed())
      return cmd_train(train_data, train_corpus, train_config, train_allow_nested, seed, seed_given, out);
    if (predict_cmd->parsed())
      return cmd_predict(pr_ckpt, pr_data, pr_split, pr_mode, pr_threshold, pr_max_span, pr_nested_decode,
                         pr_topk, pr_nested_load, out);
    if (eval_cmd->parsed())
      return cmd_evaluate(ev_preds, ev_gold, ev_mode, ev_split, ev_ckpt, ev_allow_nested, out);
    if (run_cmd->parsed()) return cmd_run(run_spec, seed, seed_given, out);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_spec, sweep_axis, seed, seed_given, threads, out);
    if (cross_cmd->parsed())
      return cmd_cross_eval(cross_train, cross_test, cross_spec, seed, seed_given, cross_allow_nested, out);
  } catch (const Invalid& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
