#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanid/model.hpp"
#include "spanid/tokenizer.hpp"

namespace spanid {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decay is fully decoupled from the learning rate:
//   p <- (1 - wd) * p - lr * mhat / (sqrt(vhat) + eps)
// so lr=0 with wd>0 shrinks parameters multiplicatively and never applies a
// gradient.
class AdamW {
 public:
  explicit AdamW(const ModelParams& shape)
      : m_(ModelParams::zeros_like(shape)), v_(ModelParams::zeros_like(shape)) {}
  void step(ModelParams& p, ModelParams& g, const AdamWConfig& cfg);
  int64_t steps() const { return t_; }

 private:
  ModelParams m_, v_;
  int64_t t_ = 0;
};

double global_grad_norm(ModelParams& g);
// Scales all gradients so their global norm is at most max_norm.
void clip_global_norm(ModelParams& g, double max_norm);

struct TrainConfig {
  double lr = 3e-4;
  int batch_size = 16;
  int epochs = 200;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  LossConfig loss;
  double grad_clip = 1.0;
  int eval_every = 1;              // epochs between eval_fn calls; 0 disables
  double stop_at_eval_score = -1;  // stop once eval_fn reaches this; <0 never
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double eval_score = -1;  // -1: not evaluated this epoch
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_score = -1;
  uint64_t seed = 0;
  bool stopped_early = false;
  int64_t steps = 0;
};

using EvalFn = std::function<double(const ModelParams&)>;

// Seeded per-epoch shuffling, batch-mean gradients accumulated in canonical
// order, global-norm clipping, divergence guard (NaN, or 10x the first
// epoch's loss for 3 consecutive epochs). With an eval_fn the best-scoring
// parameters are returned, otherwise the final ones.
ModelParams train(const ModelParams& init, const std::vector<MrcInput>& examples, TaskMode task_mode,
                  const TrainConfig& cfg, TrainReport* report = nullptr, const EvalFn& eval_fn = nullptr);

struct GradCheckReport {
  double max_rel_err = 0;
  int64_t checked = 0;
  int64_t excluded = 0;  // probes that crossed a hinge kink or swapped the extremal pair
  std::string worst_tensor;
};

// Central differences against the analytic gradient on a frozen candidate
// set. Checks every entry of the start/end/span heads and 32 seeded entries
// of each other tensor. Probes whose two loss evaluations made different
// discrete choices (hinge activation, extremal pair) are excluded, not failed.
GradCheckReport grad_check(const ModelParams& params, const MrcInput& x, const LossConfig& cfg, TaskMode task_mode,
                           double eps = 1e-5, uint64_t seed = 0);

struct Checkpoint {
  ModelParams params;
  Tokenizer tokenizer;
};

// Binary, little-endian, with a trailing whole-file checksum; save -> load ->
// save is byte-identical. Loading verifies magic, version, checksum, tensor
// shapes, and that the stored vocabulary matches its recorded hash.
void save_checkpoint(const ModelParams& p, const Tokenizer& tok, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spanid
