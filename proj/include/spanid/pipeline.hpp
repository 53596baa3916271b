#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanid/corpus.hpp"
#include "spanid/eval.hpp"
#include "spanid/mrc_data.hpp"
#include "spanid/model.hpp"
#include "spanid/train.hpp"

namespace spanid {

class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

struct SynthSpec {
  uint64_t seed = 1;
  int n_docs = 50;
  double skew = 1.0;
};

// Everything one experiment needs. Exactly one of dataset_path / synth is
// set. Stage seeds (subsampling, augmentation, balancing, init, training)
// are derived from the root seed, so the spec alone pins the run.
struct ExperimentSpec {
  std::string dataset_path;
  std::optional<SynthSpec> synth;
  double fraction = 1.0;  // train-split subsample, applied before augmentation
  double mention_replace_rate = 0.0;
  AugmentConfig augment;
  bool balance_examples = true;
  double balance_ratio = 1.0;
  TaskMode task_mode = TaskMode::selector;
  int min_freq = 1;
  bool lowercase = false;
  ModelConfig model;  // vocab_size and init_seed are filled in by the run
  TrainConfig train;  // seed is filled in by the run
  DecodeConfig decode;
  Split eval_split = Split::dev;
  std::vector<std::string> eval_modes = {"prf"};
  std::vector<double> lambda_values;
  std::vector<double> fraction_values = {0.1, 0.3, 0.5, 1.0};
  std::vector<AugmentStrategy> strategy_values = {AugmentStrategy::none, AugmentStrategy::size,
                                                  AugmentStrategy::categ, AugmentStrategy::both};
  uint64_t seed = 0;
};

ExperimentSpec parse_experiment_spec(const std::string& json_text);
ExperimentSpec load_experiment_spec(const std::string& path);
// Canonical JSON with every field spelled out; its hash pins the config.
std::string serialize_experiment_spec(const ExperimentSpec& spec);
uint64_t config_hash(const ExperimentSpec& spec);
// Throws PipelineError on the first violated invariant.
void validate_experiment_spec(const ExperimentSpec& spec);

// Counter-based derivation: one root seed, one stream per stage.
uint64_t stage_seed(uint64_t root, uint64_t stage_index);

constexpr uint64_t kStageSubsample = 1;
constexpr uint64_t kStageMentionReplace = 2;
constexpr uint64_t kStageAugment = 3;
constexpr uint64_t kStageBalance = 4;
constexpr uint64_t kStageInit = 5;
constexpr uint64_t kStageTrain = 6;

// SUB-query predictions for every (document of split, category) pair.
std::vector<Prediction> predict_split(const ModelParams& p, const Dataset& ds, const Tokenizer& tok, Split split,
                                      const DecodeConfig& cfg, const std::vector<Category>* categories = nullptr);

std::vector<SpanAnnotation> gold_spans(const Dataset& ds, Split split);

struct PipelineResult {
  std::string out_dir;
  EvalResult eval;
  PrCurve curve;
  bool has_curve = false;
  TrainReport train_report;
  uint64_t config = 0;
  std::map<std::string, uint64_t> output_hashes;  // file name -> content hash
  // Recall over gold spans whose surface never appears in the train split.
  double unseen_surface_recall = 0;
  int64_t unseen_surface_gold = 0;
};

// corpus -> augment -> train -> predict -> evaluate. Writes data.jsonl,
// mrc.jsonl, model.ckpt, predictions.jsonl, report.json, and manifest.json
// under out_dir; rerunning the same spec reproduces the manifest hashes.
PipelineResult run_pipeline(const ExperimentSpec& spec, const std::string& out_dir);

struct SweepCell {
  std::string value;
  bool ok = false;
  std::string error;
  PrfCounts micro;
  double f1 = 0;
  double aupr = 0;
  bool has_aupr = false;
  uint64_t config = 0;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepCell> cells;
};

// One pipeline per axis value under out_dir/<axis>=<value>, shared root
// seed; a failing cell records its error and the sweep continues. Cells are
// independent, so threads > 1 runs them concurrently.
SweepResult run_sweep(const ExperimentSpec& spec, const std::string& axis, const std::string& out_dir,
                      int threads = 1);
std::string sweep_table(const SweepResult& r);
std::string sweep_json(const SweepResult& r);

// Trains on train_ds per spec, evaluates on test_ds's eval split restricted
// to the categories the two datasets share by name (scored under train_ds
// category ids). Throws when no category is shared.
EvalResult cross_eval(const Dataset& train_ds, const Dataset& test_ds, const ExperimentSpec& spec,
                      const std::string& out_dir);

uint64_t file_hash(const std::string& path);

}  // namespace spanid
