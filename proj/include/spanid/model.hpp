#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanid/corpus.hpp"
#include "spanid/encode.hpp"
#include "spanid/rng.hpp"

namespace spanid {

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

struct ModelConfig {
  int d = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 256;
  int vocab_size = 0;
  int max_len = 128;
  int max_span_len = 30;
  uint64_t init_seed = 0;
};

struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::VectorXd bq, bk, bv, bo;  // d
  Eigen::MatrixXd w1;              // d_ff x d
  Eigen::VectorXd b1;              // d_ff
  Eigen::MatrixXd w2;              // d x d_ff
  Eigen::VectorXd b2;              // d
  Eigen::VectorXd ln1_g, ln1_b, ln2_g, ln2_b;  // d
};

// A named view over one parameter tensor; vectors appear as n x 1.
struct TensorView {
  std::string name;
  double* data;
  int64_t rows;
  int64_t cols;
  int64_t size() const { return rows * cols; }
};

struct ModelParams {
  ModelConfig config;
  Eigen::MatrixXd tok_emb;  // vocab_size x d
  Eigen::MatrixXd pos_emb;  // max_len x d
  std::vector<LayerParams> blocks;
  Eigen::VectorXd lnf_g, lnf_b;
  Eigen::VectorXd w_start, w_end;  // d (single logit per token, sigmoid head)
  Eigen::MatrixXd span_w1;         // d x d
  Eigen::VectorXd span_b1;         // d
  Eigen::MatrixXd span_w2;         // d x d
  Eigen::VectorXd span_b2;         // d

  // Gaussian init scaled by 1/sqrt(d); layer-norm gains 1, biases 0.
  static ModelParams init(const ModelConfig& cfg);
  static ModelParams zeros_like(const ModelParams& other);
  // All-zero tensors with the shapes cfg implies.
  static ModelParams shaped(const ModelConfig& cfg);

  // Stable enumeration of every tensor; the order defines checkpoint layout
  // and optimizer state alignment.
  std::vector<TensorView> tensors();
  int64_t parameter_count() const;
  bool all_finite() const;
  void set_zero();
};

// Everything the backward pass needs to replay one block.
struct BlockTrace {
  Eigen::MatrixXd x_in;                // len x d, block input
  Eigen::MatrixXd n1, n1_xhat;         // LN1 output / normalized input
  Eigen::VectorXd n1_inv_std;          // len
  Eigen::MatrixXd qm, km, vm;          // len x d
  std::vector<Eigen::MatrixXd> attn;   // per head, len x len softmax rows
  Eigen::MatrixXd ctx;                 // len x d, heads concatenated
  Eigen::MatrixXd res1;                // len x d
  Eigen::MatrixXd n2, n2_xhat;
  Eigen::VectorXd n2_inv_std;
  Eigen::MatrixXd a1;                  // len x d_ff, tanh activation
};

struct ForwardOutput {
  Eigen::MatrixXd h;  // len x d, final hidden states
  Eigen::VectorXd start_logits, end_logits;  // len, unmasked; use sites stay inside the context
  int context_first = 0;
  int context_last = -1;

  // sigma(logit) helpers for the context slice.
  double sigma_start(int i) const;
  double sigma_end(int i) const;

  // Raw bilinear score FFN(H_s) . H_e; O(d^2), FFN(H_s) cached per s.
  double span_score(int s, int e) const;
  double sigma_span(int s, int e) const { return 1.0 / (1.0 + std::exp(-span_score(s, e))); }

  // Backward-pass state (empty when forward ran without trace).
  Eigen::MatrixXd x0;
  std::vector<BlockTrace> trace;
  Eigen::MatrixXd lnf_xhat;
  Eigen::VectorXd lnf_inv_std;

 private:
  friend ForwardOutput forward(const ModelParams&, const MrcInput&, bool);
  const ModelParams* params_ = nullptr;
  mutable std::map<int, Eigen::VectorXd> ffn_cache_;
};

ForwardOutput forward(const ModelParams& p, const MrcInput& x, bool with_trace = false);

struct LossConfig {
  enum class Contrastive { maxmin, average, off };
  double margin = 0.0;   // M; 0 for NER/ABSA-style tasks, 1 for SBPD-style
  double alpha = 0.1;    // weight of the contrastive term
  Contrastive mode = Contrastive::maxmin;
  int rand_span_candidates = 10;  // k extra random (s,e) pairs in the span BCE
};

// The (s,e) set the span-BCE term is computed over, frozen before any
// gradient or finite-difference evaluation so both see the same set.
struct SpanCandidates {
  std::vector<std::pair<int, int>> pairs;  // sorted, deduplicated
};

SpanCandidates select_span_candidates(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg,
                                      int max_span_len, Rng& rng);

// Per-term values plus the discrete choices made, so a finite-difference
// probe can detect when it stepped across a hinge kink or argmin/argmax swap.
struct LossBreakdown {
  double start_bce = 0, end_bce = 0, span_bce = 0, contrastive = 0, total = 0;
  bool hinge_active = false;
  int selected_pos = -1, selected_neg = -1;  // maxmin extremal pair (indices into span lists)
  uint64_t active_pair_hash = 0;             // average mode: which hinges were active
  uint64_t selection_signature() const;
};

double loss_mrc(const ForwardOutput& out, const MrcInput& x, const SpanCandidates& cands, TaskMode mode,
                LossBreakdown* bd = nullptr);
// The hinge losses over already-computed span probabilities; both inputs
// must be non-empty. loss_contrastive extracts them from a forward pass.
double contrastive_hinge(const std::vector<double>& pos_sigma, const std::vector<double>& neg_sigma,
                         const LossConfig& cfg, LossBreakdown* bd = nullptr);
double loss_contrastive(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg,
                        LossBreakdown* bd = nullptr);
double total_loss(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg, const SpanCandidates& cands,
                  TaskMode mode, LossBreakdown* bd = nullptr);

// Forward + analytic backward of total_loss into `grads` (accumulated, not
// overwritten). Returns the loss.
double loss_and_grad(const ModelParams& p, const MrcInput& x, const LossConfig& cfg, const SpanCandidates& cands,
                     TaskMode mode, ModelParams& grads, LossBreakdown* bd = nullptr);

// Same, reusing an already-traced forward (train selects candidates from the
// same activations it backpropagates through).
double loss_and_grad_traced(const ForwardOutput& out, const ModelParams& p, const MrcInput& x, const LossConfig& cfg,
                            const SpanCandidates& cands, TaskMode mode, ModelParams& grads,
                            LossBreakdown* bd = nullptr);

struct DecodeConfig {
  TaskMode mode = TaskMode::selector;
  double threshold = 0.5;
  int max_span_len = 30;
  bool allow_nested = false;
  int topk = 20;
};

struct ScoredSpan {
  int s = 0, e = 0;   // token indices, inclusive
  double score = 0;   // sigma(P_s,e) in selector mode, mean start/end prob in topk
};

// Token-level decoding over externally supplied probabilities, so tests can
// drive it with arbitrary scores. Indices run over [ctx_first, ctx_last].
std::vector<ScoredSpan> decode_spans(const std::vector<double>& start_sigma, const std::vector<double>& end_sigma,
                                     const std::function<double(int, int)>& span_sigma, int ctx_first, int ctx_last,
                                     const DecodeConfig& cfg);

struct Prediction {
  std::string doc_id;
  int category_id = 0;
  int start_char = 0;
  int end_char = 0;  // exclusive, codepoints
  double score = 0;
};

// Runs forward + decode and maps token spans back to character offsets.
std::vector<Prediction> predict_example(const ModelParams& p, const MrcInput& x, const DecodeConfig& cfg);

std::string serialize_predictions(const std::vector<Prediction>& preds);
std::vector<Prediction> parse_predictions(const std::string& jsonl);
void save_predictions(const std::vector<Prediction>& preds, const std::string& path);
std::vector<Prediction> load_predictions(const std::string& path);

}  // namespace spanid
