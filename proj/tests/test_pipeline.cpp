#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "spanid/corpus.hpp"
#include "spanid/pipeline.hpp"

using namespace spanid;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "spanid_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small but trainable: synthetic corpus, narrow model, two epochs.
ExperimentSpec tiny_spec() {
  ExperimentSpec spec;
  spec.synth = SynthSpec{1, 12, 1.0};
  spec.model.d = 16;
  spec.model.layers = 1;
  spec.model.heads = 2;
  spec.model.d_ff = 32;
  spec.model.max_len = 96;
  spec.model.max_span_len = 8;
  spec.train.lr = 1e-3;
  spec.train.epochs = 2;
  spec.train.batch_size = 8;
  spec.train.eval_every = 0;
  spec.decode.max_span_len = 8;
  spec.seed = 5;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("experiment specs round-trip through their canonical JSON") {
  ExperimentSpec spec = tiny_spec();
  spec.augment.strategy = AugmentStrategy::both;
  spec.augment.lambda = 0.75;
  spec.eval_modes = {"prf", "aupr", "errors"};
  spec.lambda_values = {0.5, 1.0};
  spec.task_mode = TaskMode::topk;
  spec.eval_split = Split::test;
  spec.mention_replace_rate = 0.25;
  spec.lowercase = true;

  std::string text = serialize_experiment_spec(spec);
  ExperimentSpec back = parse_experiment_spec(text);
  CHECK(serialize_experiment_spec(back) == text);
  CHECK(config_hash(back) == config_hash(spec));
  CHECK(back.synth.has_value());
  CHECK(back.synth->n_docs == 12);
  CHECK(back.augment.strategy == AugmentStrategy::both);
  CHECK(back.augment.lambda == 0.75);
  CHECK(back.eval_modes == std::vector<std::string>{"prf", "aupr", "errors"});
  CHECK(back.lambda_values == std::vector<double>{0.5, 1.0});
  CHECK(back.task_mode == TaskMode::topk);
  CHECK(back.eval_split == Split::test);
  CHECK(back.lowercase);

  // the hash moves when anything meaningful moves
  ExperimentSpec other = spec;
  other.train.lr = 2e-3;
  CHECK(config_hash(other) != config_hash(spec));
}

TEST_CASE("spec parsing rejects unknown keys and malformed values") {
  CHECK_THROWS_AS(parse_experiment_spec("{\"synth\": {\"docs\": 10}, \"frcation\": 0.5}"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("{\"synth\": {\"dcos\": 10}}"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("{\"model\": {\"dd\": 8}}"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("not json at all"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("{\"task_mode\": \"both\"}"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("{\"eval_split\": \"validation\"}"), PipelineError);
  CHECK_THROWS_AS(parse_experiment_spec("{\"augment\": {\"strategy\": \"biggest\"}}"), PipelineError);
}

TEST_CASE("spec validation pins the invariants") {
  auto expect_invalid = [](ExperimentSpec spec, const std::string& hint) {
    bool threw = false;
    try {
      validate_experiment_spec(spec);
    } catch (const PipelineError& e) {
      threw = true;
      CHECK(std::string(e.what()).find(hint) != std::string::npos);
    }
    CHECK(threw);
  };

  ExperimentSpec spec = tiny_spec();
  validate_experiment_spec(spec);  // baseline must pass

  ExperimentSpec both = spec;
  both.dataset_path = "also-a-file.jsonl";
  expect_invalid(both, "exactly one");

  ExperimentSpec neither = spec;
  neither.synth.reset();
  expect_invalid(neither, "exactly one");

  ExperimentSpec missing = spec;
  missing.synth.reset();
  missing.dataset_path = "/nonexistent/corpus.jsonl";
  expect_invalid(missing, "not found");

  ExperimentSpec frac = spec;
  frac.fraction = 0.0;
  expect_invalid(frac, "fraction");
  frac.fraction = 1.5;
  expect_invalid(frac, "fraction");

  ExperimentSpec heads = spec;
  heads.model.heads = 3;
  expect_invalid(heads, "heads");

  ExperimentSpec lr = spec;
  lr.train.lr = 0;
  expect_invalid(lr, "lr");

  ExperimentSpec thr = spec;
  thr.decode.threshold = 1.0;
  expect_invalid(thr, "threshold");

  ExperimentSpec mode = spec;
  mode.eval_modes = {"prf", "confusion"};
  expect_invalid(mode, "eval mode");
}

TEST_CASE("stage seeds are deterministic, distinct, and root-sensitive") {
  std::set<uint64_t> seen;
  for (uint64_t stage = 1; stage <= 6; ++stage) {
    uint64_t s = stage_seed(41, stage);
    CHECK(s == stage_seed(41, stage));
    CHECK(seen.insert(s).second);
  }
  CHECK(stage_seed(41, kStageTrain) != stage_seed(42, kStageTrain));
}

TEST_CASE("run_pipeline writes the full artifact set deterministically") {
  ExperimentSpec spec = tiny_spec();
  spec.eval_modes = {"prf", "aupr", "errors", "simdist"};
  fs::path dir = temp_dir("run1");
  PipelineResult res = run_pipeline(spec, dir.string());

  for (const char* name :
       {"data.jsonl", "mrc.jsonl", "model.ckpt", "predictions.jsonl", "report.json", "manifest.json"})
    CHECK(fs::exists(dir / name));
  // the manifest carries the hashes, so it cannot hash itself
  for (const char* name : {"data.jsonl", "mrc.jsonl", "model.ckpt", "predictions.jsonl", "report.json"})
    CHECK(res.output_hashes.count(name) == 1);
  CHECK(res.train_report.epochs.size() == 2);

  json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["root_seed"] == 5);
  CHECK(manifest["stage_seeds"].size() >= 5);
  CHECK(manifest["config_hash"].is_string());
  CHECK(manifest["output_hashes"].size() == res.output_hashes.size());

  json report = json::parse(slurp(dir / "report.json"));
  CHECK(report["eval_split"] == "dev");
  CHECK(report.contains("prf"));
  CHECK(report.contains("aupr"));
  CHECK(report.contains("errors"));
  CHECK(report.contains("simdist"));
  CHECK(report.contains("unseen_surface"));
  CHECK(report["train"]["epochs"] == 2);
  // wall-clock timings must never leak into hashed artifacts
  CHECK(slurp(dir / "report.json").find("seconds") == std::string::npos);

  // rerun: byte-identical outputs
  fs::path dir2 = temp_dir("run2");
  PipelineResult res2 = run_pipeline(spec, dir2.string());
  CHECK(res2.output_hashes == res.output_hashes);
  CHECK(slurp(dir2 / "report.json") == slurp(dir / "report.json"));
  CHECK(slurp(dir2 / "manifest.json") == slurp(dir / "manifest.json"));

  // a different root seed moves at least the checkpoint bytes
  ExperimentSpec other = spec;
  other.seed = 6;
  fs::path dir3 = temp_dir("run3");
  PipelineResult res3 = run_pipeline(other, dir3.string());
  CHECK(res3.output_hashes != res.output_hashes);
  CHECK(res3.output_hashes.at("data.jsonl") == res.output_hashes.at("data.jsonl"));  // corpus seed is separate
}

TEST_CASE("run_pipeline with augmentation records the per-category log") {
  ExperimentSpec spec = tiny_spec();
  spec.augment.strategy = AugmentStrategy::both;
  spec.augment.lambda = 0.5;
  fs::path dir = temp_dir("aug");
  run_pipeline(spec, dir.string());

  json report = json::parse(slurp(dir / "report.json"));
  REQUIRE(report.contains("augment"));
  CHECK(report["augment"].size() == 4);  // synthetic corpus has four categories
  for (const auto& row : report["augment"]) {
    CHECK(row.contains("category"));
    CHECK(row["pair_count"].get<int64_t>() >= 0);
    CHECK(row["actual"].get<int64_t>() <= row["requested"].get<int64_t>());
  }

  json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["config"]["augment"]["strategy"] == "both");
}

TEST_CASE("file_hash tracks content") {
  fs::path dir = temp_dir("hash");
  fs::path f = dir / "x.txt";
  std::ofstream(f) << "alpha";
  uint64_t h1 = file_hash(f.string());
  CHECK(h1 == file_hash(f.string()));
  std::ofstream(f) << "alphb";
  CHECK(file_hash(f.string()) != h1);
  CHECK_THROWS_AS(file_hash((dir / "missing.txt").string()), PipelineError);
}

TEST_CASE("sweeps run one cell per value and isolate the changed knob") {
  ExperimentSpec spec = tiny_spec();
  fs::path dir = temp_dir("sweep_strategy");
  SweepResult sw = run_sweep(spec, "strategy", dir.string());
  CHECK(sw.axis == "strategy");
  REQUIRE(sw.cells.size() == 4);

  std::set<uint64_t> configs;
  for (const auto& cell : sw.cells) {
    INFO("cell ", cell.value, " error: ", cell.error);
    CHECK(cell.ok);
    CHECK(configs.insert(cell.config).second);
    CHECK(fs::exists(dir / ("strategy=" + cell.value) / "report.json"));
  }

  // cells differ only in the swept knob: normalize it and the configs agree
  std::set<std::string> normalized;
  for (const auto& cell : sw.cells) {
    json cfg = json::parse(slurp(dir / ("strategy=" + cell.value) / "manifest.json"))["config"];
    CHECK(cfg["augment"]["strategy"] == cell.value);
    cfg["augment"]["strategy"] = nullptr;
    normalized.insert(cfg.dump());
  }
  CHECK(normalized.size() == 1);

  CHECK(fs::exists(dir / "sweep.json"));
  CHECK(fs::exists(dir / "sweep.txt"));
  std::string table = sweep_table(sw);
  for (const auto& cell : sw.cells) CHECK(table.find(cell.value) != std::string::npos);

  json sj = json::parse(sweep_json(sw));
  CHECK(sj["axis"] == "strategy");
  CHECK(sj["cells"].size() == 4);
}

TEST_CASE("a failing sweep cell is recorded and the sweep continues") {
  ExperimentSpec spec = tiny_spec();
  // 1e-9 passes validation but floors the train split to zero documents
  spec.fraction_values = {0.5, 1e-9};
  fs::path dir = temp_dir("sweep_fail");
  SweepResult sw = run_sweep(spec, "fraction", dir.string());
  REQUIRE(sw.cells.size() == 2);
  CHECK(sw.cells[0].ok);
  CHECK(!sw.cells[1].ok);
  CHECK(!sw.cells[1].error.empty());

  std::string table = sweep_table(sw);
  CHECK(table.find("error") != std::string::npos);
}

TEST_CASE("sweep axis validation") {
  ExperimentSpec spec = tiny_spec();
  fs::path dir = temp_dir("sweep_bad");
  CHECK_THROWS_AS(run_sweep(spec, "lambda", dir.string()), PipelineError);  // no lambda values listed
  spec.fraction_values = {0.5};
  CHECK_THROWS_AS(run_sweep(spec, "fraction", dir.string()), PipelineError);  // one value is not a sweep
  CHECK_THROWS_AS(run_sweep(spec, "bogus", dir.string()), PipelineError);
}

TEST_CASE("threaded sweeps produce the same cells") {
  ExperimentSpec spec = tiny_spec();
  spec.fraction_values = {0.5, 1.0};
  fs::path d1 = temp_dir("sweep_serial");
  fs::path d2 = temp_dir("sweep_threads");
  SweepResult serial = run_sweep(spec, "fraction", d1.string(), 1);
  SweepResult threaded = run_sweep(spec, "fraction", d2.string(), 2);
  REQUIRE(serial.cells.size() == threaded.cells.size());
  for (size_t i = 0; i < serial.cells.size(); ++i) {
    CHECK(serial.cells[i].value == threaded.cells[i].value);
    CHECK(serial.cells[i].ok == threaded.cells[i].ok);
    CHECK(serial.cells[i].f1 == threaded.cells[i].f1);
    CHECK(serial.cells[i].config == threaded.cells[i].config);
  }
}

TEST_CASE("cross_eval on the same dataset equals the ordinary evaluation") {
  ExperimentSpec spec = tiny_spec();
  fs::path base = temp_dir("cross_base");
  PipelineResult direct = run_pipeline(spec, base.string());

  Dataset ds = gen_synthetic(spec.synth->seed, spec.synth->n_docs, spec.synth->skew);
  fs::path dir = temp_dir("cross_same");
  EvalResult crossed = cross_eval(ds, ds, spec, dir.string());
  CHECK(crossed.micro.tp == direct.eval.micro.tp);
  CHECK(crossed.micro.fp == direct.eval.micro.fp);
  CHECK(crossed.micro.fn == direct.eval.micro.fn);
  CHECK(fs::exists(dir / "predictions.jsonl"));
  CHECK(fs::exists(dir / "report.json"));
}

TEST_CASE("cross_eval restricts scoring to shared categories") {
  Dataset train_ds = gen_synthetic(1, 12, 1.0);
  Dataset test_ds = gen_synthetic(1, 12, 1.0);

  // keep only two categories on the test side, renamed ids
  Dataset pruned;
  pruned.categories = {test_ds.categories[0], test_ds.categories[2]};
  pruned.categories[0].id = 7;
  pruned.categories[1].id = 9;
  pruned.documents = test_ds.documents;
  for (const auto& a : test_ds.annotations) {
    SpanAnnotation b = a;
    if (a.category_id == test_ds.categories[0].id)
      b.category_id = 7;
    else if (a.category_id == test_ds.categories[2].id)
      b.category_id = 9;
    else
      continue;
    pruned.annotations.push_back(b);
  }

  ExperimentSpec spec = tiny_spec();
  fs::path dir = temp_dir("cross_partial");
  EvalResult r = cross_eval(train_ds, pruned, spec, dir.string());

  std::set<int> allowed = {train_ds.categories[0].id, train_ds.categories[2].id};
  for (const auto& [cat, counts] : r.per_category) CHECK(allowed.count(cat) == 1);

  // no shared names at all
  Dataset renamed = pruned;
  renamed.categories[0].name = "unheard-of";
  renamed.categories[1].name = "also-new";
  fs::path dir2 = temp_dir("cross_none");
  CHECK_THROWS_AS(cross_eval(train_ds, renamed, spec, dir2.string()), PipelineError);
}

TEST_CASE("pipeline specs load from disk and dataset paths are honored") {
  Dataset ds = gen_synthetic(3, 12, 1.0);
  fs::path dir = temp_dir("from_file");
  fs::path data = dir / "corpus.jsonl";
  save_dataset(ds, data.string());

  ExperimentSpec spec = tiny_spec();
  spec.synth.reset();
  spec.dataset_path = data.string();
  fs::path spec_path = dir / "spec.json";
  std::ofstream(spec_path) << serialize_experiment_spec(spec);

  ExperimentSpec loaded = load_experiment_spec(spec_path.string());
  CHECK(loaded.dataset_path == data.string());
  validate_experiment_spec(loaded);

  fs::path out = dir / "out";
  PipelineResult res = run_pipeline(loaded, out.string());
  CHECK(res.output_hashes.at("data.jsonl") == file_hash(data.string()));

  CHECK_THROWS_AS(load_experiment_spec((dir / "missing.json").string()), PipelineError);
}
