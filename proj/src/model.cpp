#include "spanid/model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace spanid {

namespace {

constexpr double kLnEps = 1e-5;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z), overflow-safe.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Binary cross-entropy straight from the logit.
double bce_logit(double z, double y) { return softplus(z) - z * y; }

void fill_normal(double* data, int64_t n, Rng& rng, double stddev) {
  for (int64_t i = 0; i < n; i += 2) {
    double u1 = 1.0 - rng.uniform01();  // (0, 1]
    double u2 = rng.uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    data[i] = stddev * r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < n) data[i + 1] = stddev * r * std::sin(2.0 * M_PI * u2);
  }
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                           Eigen::MatrixXd& xhat, Eigen::VectorXd& inv_std) {
  const auto len = x.rows();
  const auto d = x.cols();
  xhat.resize(len, d);
  inv_std.resize(len);
  Eigen::MatrixXd out(len, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    double mu = x.row(i).mean();
    Eigen::RowVectorXd centered = x.row(i).array() - mu;
    double var = centered.squaredNorm() / static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    inv_std(i) = inv;
    xhat.row(i) = centered * inv;
    out.row(i) = (xhat.row(i).array() * g.transpose().array()) + b.transpose().array();
  }
  return out;
}

// Returns dx; accumulates the gain/bias gradients.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std, const Eigen::VectorXd& g, Eigen::VectorXd& g_gain,
                                    Eigen::VectorXd& g_bias) {
  const auto len = dy.rows();
  const auto d = dy.cols();
  Eigen::MatrixXd dx(len, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    g_gain.array() += (dy.row(i).array() * xhat.row(i).array()).transpose();
    g_bias.array() += dy.row(i).transpose().array();
    Eigen::RowVectorXd dxhat = dy.row(i).array() * g.transpose().array();
    double m1 = dxhat.mean();
    double m2 = (dxhat.array() * xhat.row(i).array()).mean();
    dx.row(i) = (dxhat.array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
  }
  return dx;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg) {
  if (cfg.d <= 0 || cfg.layers <= 0 || cfg.heads <= 0 || cfg.d_ff <= 0)
    throw ModelError("model config: d, layers, heads, d_ff must be positive");
  if (cfg.d % cfg.heads != 0) throw ModelError("model config: d must be divisible by heads");
  if (cfg.vocab_size <= 4) throw ModelError("model config: vocab_size must exceed the 4 specials");
  if (cfg.max_len < 4) throw ModelError("model config: max_len too small for [CLS] q [SEP] x [SEP]");

  ModelParams p;
  p.config = cfg;
  Rng rng(cfg.init_seed);
  double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  double sd_ff = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));

  auto normal_mat = [&](Eigen::MatrixXd& m, int rows, int cols, double stddev) {
    m.resize(rows, cols);
    fill_normal(m.data(), m.size(), rng, stddev);
  };
  auto normal_vec = [&](Eigen::VectorXd& v, int n, double stddev) {
    v.resize(n);
    fill_normal(v.data(), v.size(), rng, stddev);
  };

  normal_mat(p.tok_emb, cfg.vocab_size, cfg.d, sd);
  normal_mat(p.pos_emb, cfg.max_len, cfg.d, sd);
  p.blocks.resize(cfg.layers);
  for (auto& blk : p.blocks) {
    normal_mat(blk.wq, cfg.d, cfg.d, sd);
    normal_mat(blk.wk, cfg.d, cfg.d, sd);
    normal_mat(blk.wv, cfg.d, cfg.d, sd);
    normal_mat(blk.wo, cfg.d, cfg.d, sd);
    blk.bq = Eigen::VectorXd::Zero(cfg.d);
    blk.bk = Eigen::VectorXd::Zero(cfg.d);
    blk.bv = Eigen::VectorXd::Zero(cfg.d);
    blk.bo = Eigen::VectorXd::Zero(cfg.d);
    normal_mat(blk.w1, cfg.d_ff, cfg.d, sd);
    blk.b1 = Eigen::VectorXd::Zero(cfg.d_ff);
    normal_mat(blk.w2, cfg.d, cfg.d_ff, sd_ff);
    blk.b2 = Eigen::VectorXd::Zero(cfg.d);
    blk.ln1_g = Eigen::VectorXd::Ones(cfg.d);
    blk.ln1_b = Eigen::VectorXd::Zero(cfg.d);
    blk.ln2_g = Eigen::VectorXd::Ones(cfg.d);
    blk.ln2_b = Eigen::VectorXd::Zero(cfg.d);
  }
  p.lnf_g = Eigen::VectorXd::Ones(cfg.d);
  p.lnf_b = Eigen::VectorXd::Zero(cfg.d);
  normal_vec(p.w_start, cfg.d, sd);
  normal_vec(p.w_end, cfg.d, sd);
  normal_mat(p.span_w1, cfg.d, cfg.d, sd);
  p.span_b1 = Eigen::VectorXd::Zero(cfg.d);
  normal_mat(p.span_w2, cfg.d, cfg.d, sd);
  p.span_b2 = Eigen::VectorXd::Zero(cfg.d);
  return p;
}

ModelParams ModelParams::shaped(const ModelConfig& cfg) {
  ModelParams proto = init(cfg);
  proto.set_zero();
  return proto;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams p;
  p.config = other.config;
  p.tok_emb = Eigen::MatrixXd::Zero(other.tok_emb.rows(), other.tok_emb.cols());
  p.pos_emb = Eigen::MatrixXd::Zero(other.pos_emb.rows(), other.pos_emb.cols());
  p.blocks.resize(other.blocks.size());
  for (size_t i = 0; i < other.blocks.size(); ++i) {
    const auto& o = other.blocks[i];
    auto& b = p.blocks[i];
    b.wq = Eigen::MatrixXd::Zero(o.wq.rows(), o.wq.cols());
    b.wk = Eigen::MatrixXd::Zero(o.wk.rows(), o.wk.cols());
    b.wv = Eigen::MatrixXd::Zero(o.wv.rows(), o.wv.cols());
    b.wo = Eigen::MatrixXd::Zero(o.wo.rows(), o.wo.cols());
    b.bq = Eigen::VectorXd::Zero(o.bq.size());
    b.bk = Eigen::VectorXd::Zero(o.bk.size());
    b.bv = Eigen::VectorXd::Zero(o.bv.size());
    b.bo = Eigen::VectorXd::Zero(o.bo.size());
    b.w1 = Eigen::MatrixXd::Zero(o.w1.rows(), o.w1.cols());
    b.b1 = Eigen::VectorXd::Zero(o.b1.size());
    b.w2 = Eigen::MatrixXd::Zero(o.w2.rows(), o.w2.cols());
    b.b2 = Eigen::VectorXd::Zero(o.b2.size());
    b.ln1_g = Eigen::VectorXd::Zero(o.ln1_g.size());
    b.ln1_b = Eigen::VectorXd::Zero(o.ln1_b.size());
    b.ln2_g = Eigen::VectorXd::Zero(o.ln2_g.size());
    b.ln2_b = Eigen::VectorXd::Zero(o.ln2_b.size());
  }
  p.lnf_g = Eigen::VectorXd::Zero(other.lnf_g.size());
  p.lnf_b = Eigen::VectorXd::Zero(other.lnf_b.size());
  p.w_start = Eigen::VectorXd::Zero(other.w_start.size());
  p.w_end = Eigen::VectorXd::Zero(other.w_end.size());
  p.span_w1 = Eigen::MatrixXd::Zero(other.span_w1.rows(), other.span_w1.cols());
  p.span_b1 = Eigen::VectorXd::Zero(other.span_b1.size());
  p.span_w2 = Eigen::MatrixXd::Zero(other.span_w2.rows(), other.span_w2.cols());
  p.span_b2 = Eigen::VectorXd::Zero(other.span_b2.size());
  return p;
}

std::vector<TensorView> ModelParams::tensors() {
  std::vector<TensorView> out;
  auto add_m = [&](const std::string& name, Eigen::MatrixXd& m) { out.push_back({name, m.data(), m.rows(), m.cols()}); };
  auto add_v = [&](const std::string& name, Eigen::VectorXd& v) { out.push_back({name, v.data(), v.size(), 1}); };
  add_m("tok_emb", tok_emb);
  add_m("pos_emb", pos_emb);
  for (size_t i = 0; i < blocks.size(); ++i) {
    std::string pre = "block" + std::to_string(i) + ".";
    auto& b = blocks[i];
    add_m(pre + "wq", b.wq);
    add_v(pre + "bq", b.bq);
    add_m(pre + "wk", b.wk);
    add_v(pre + "bk", b.bk);
    add_m(pre + "wv", b.wv);
    add_v(pre + "bv", b.bv);
    add_m(pre + "wo", b.wo);
    add_v(pre + "bo", b.bo);
    add_m(pre + "w1", b.w1);
    add_v(pre + "b1", b.b1);
    add_m(pre + "w2", b.w2);
    add_v(pre + "b2", b.b2);
    add_v(pre + "ln1_g", b.ln1_g);
    add_v(pre + "ln1_b", b.ln1_b);
    add_v(pre + "ln2_g", b.ln2_g);
    add_v(pre + "ln2_b", b.ln2_b);
  }
  add_v("lnf_g", lnf_g);
  add_v("lnf_b", lnf_b);
  add_v("w_start", w_start);
  add_v("w_end", w_end);
  add_m("span_w1", span_w1);
  add_v("span_b1", span_b1);
  add_m("span_w2", span_w2);
  add_v("span_b2", span_b2);
  return out;
}

int64_t ModelParams::parameter_count() const {
  int64_t n = 0;
  for (auto& t : const_cast<ModelParams*>(this)->tensors()) n += t.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (auto& t : const_cast<ModelParams*>(this)->tensors())
    for (int64_t i = 0; i < t.size(); ++i)
      if (!std::isfinite(t.data[i])) return false;
  return true;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) std::fill(t.data, t.data + t.size(), 0.0);
}

double ForwardOutput::sigma_start(int i) const { return sigmoid(start_logits(i)); }
double ForwardOutput::sigma_end(int i) const { return sigmoid(end_logits(i)); }

double ForwardOutput::span_score(int s, int e) const {
  if (s > e || s < context_first || e > context_last)
    throw ModelError("span_score: (" + std::to_string(s) + "," + std::to_string(e) + ") outside context [" +
                     std::to_string(context_first) + "," + std::to_string(context_last) + "]");
  auto it = ffn_cache_.find(s);
  if (it == ffn_cache_.end()) {
    const ModelParams& p = *params_;
    Eigen::VectorXd f1 = (p.span_w1 * h.row(s).transpose() + p.span_b1).array().tanh();
    it = ffn_cache_.emplace(s, p.span_w2 * f1 + p.span_b2).first;
  }
  return it->second.dot(h.row(e));
}

ForwardOutput forward(const ModelParams& p, const MrcInput& x, bool with_trace) {
  const auto& cfg = p.config;
  int len = x.length();
  if (len == 0) throw ModelError("forward: empty input");
  if (len > cfg.max_len) throw ModelError("forward: sequence longer than max_len");
  for (int id : x.token_ids)
    if (id < 0 || id >= cfg.vocab_size) throw ModelError("forward: token id " + std::to_string(id) + " out of vocab");

  int d = cfg.d;
  int heads = cfg.heads;
  int dk = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  ForwardOutput out;
  out.params_ = &p;
  out.context_first = x.context_first;
  out.context_last = x.context_last;

  Eigen::MatrixXd xcur(len, d);
  for (int i = 0; i < len; ++i) xcur.row(i) = p.tok_emb.row(x.token_ids[i]) + p.pos_emb.row(i);
  if (with_trace) out.x0 = xcur;

  for (const auto& blk : p.blocks) {
    BlockTrace tr;
    if (with_trace) tr.x_in = xcur;

    Eigen::MatrixXd xhat1;
    Eigen::VectorXd inv1;
    Eigen::MatrixXd n1 = layer_norm(xcur, blk.ln1_g, blk.ln1_b, xhat1, inv1);

    Eigen::MatrixXd qm = (n1 * blk.wq.transpose()).rowwise() + blk.bq.transpose();
    Eigen::MatrixXd km = (n1 * blk.wk.transpose()).rowwise() + blk.bk.transpose();
    Eigen::MatrixXd vm = (n1 * blk.wv.transpose()).rowwise() + blk.bv.transpose();

    Eigen::MatrixXd ctx(len, d);
    std::vector<Eigen::MatrixXd> attn;
    for (int t = 0; t < heads; ++t) {
      auto qt = qm.middleCols(t * dk, dk);
      auto kt = km.middleCols(t * dk, dk);
      auto vt = vm.middleCols(t * dk, dk);
      Eigen::MatrixXd scores = qt * kt.transpose() * scale;
      Eigen::MatrixXd a(len, len);
      for (int r = 0; r < len; ++r) {
        double mx = scores.row(r).maxCoeff();
        Eigen::RowVectorXd ex = (scores.row(r).array() - mx).exp();
        a.row(r) = ex / ex.sum();
      }
      ctx.middleCols(t * dk, dk) = a * vt;
      if (with_trace) attn.push_back(std::move(a));
    }
    Eigen::MatrixXd attn_out = (ctx * blk.wo.transpose()).rowwise() + blk.bo.transpose();
    Eigen::MatrixXd res1 = xcur + attn_out;

    Eigen::MatrixXd xhat2;
    Eigen::VectorXd inv2;
    Eigen::MatrixXd n2 = layer_norm(res1, blk.ln2_g, blk.ln2_b, xhat2, inv2);
    Eigen::MatrixXd a1 = ((n2 * blk.w1.transpose()).rowwise() + blk.b1.transpose()).array().tanh();
    Eigen::MatrixXd f = (a1 * blk.w2.transpose()).rowwise() + blk.b2.transpose();
    xcur = res1 + f;

    if (with_trace) {
      tr.n1 = std::move(n1);
      tr.n1_xhat = std::move(xhat1);
      tr.n1_inv_std = std::move(inv1);
      tr.qm = std::move(qm);
      tr.km = std::move(km);
      tr.vm = std::move(vm);
      tr.attn = std::move(attn);
      tr.ctx = std::move(ctx);
      tr.res1 = std::move(res1);
      tr.n2 = std::move(n2);
      tr.n2_xhat = std::move(xhat2);
      tr.n2_inv_std = std::move(inv2);
      tr.a1 = std::move(a1);
      out.trace.push_back(std::move(tr));
    }
  }

  Eigen::MatrixXd xhatf;
  Eigen::VectorXd invf;
  out.h = layer_norm(xcur, p.lnf_g, p.lnf_b, xhatf, invf);
  if (with_trace) {
    out.lnf_xhat = std::move(xhatf);
    out.lnf_inv_std = std::move(invf);
  }
  out.start_logits = out.h * p.w_start;
  out.end_logits = out.h * p.w_end;

  if (!out.h.allFinite() || !out.start_logits.allFinite() || !out.end_logits.allFinite())
    throw ModelError("forward: non-finite activations (doc '" + x.doc_id + "', len " + std::to_string(len) + ")");
  return out;
}

SpanCandidates select_span_candidates(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg,
                                      int max_span_len, Rng& rng) {
  std::set<std::pair<int, int>> pairs(x.answer_spans.begin(), x.answer_spans.end());

  int first = x.context_first, last = x.context_last;
  for (int s = first; s <= last; ++s) {
    if (out.sigma_start(s) <= 0.5) continue;
    int e_max = std::min(last, s + max_span_len);
    for (int e = s; e <= e_max; ++e)
      if (out.sigma_end(e) > 0.5) pairs.emplace(s, e);
  }

  // k uniform draws over the valid-pair universe, counted analytically.
  int64_t total = 0;
  std::vector<int64_t> prefix;  // pairs with earlier s
  for (int s = first; s <= last; ++s) {
    prefix.push_back(total);
    total += std::min(last, s + max_span_len) - s + 1;
  }
  if (total > 0 && cfg.rand_span_candidates > 0) {
    uint64_t k = std::min<uint64_t>(cfg.rand_span_candidates, static_cast<uint64_t>(total));
    for (uint64_t idx : rng.sample_indices(static_cast<uint64_t>(total), k)) {
      auto it = std::upper_bound(prefix.begin(), prefix.end(), static_cast<int64_t>(idx)) - 1;
      int s = first + static_cast<int>(it - prefix.begin());
      int e = s + static_cast<int>(static_cast<int64_t>(idx) - *it);
      pairs.emplace(s, e);
    }
  }

  SpanCandidates cands;
  cands.pairs.assign(pairs.begin(), pairs.end());
  return cands;
}

uint64_t LossBreakdown::selection_signature() const {
  uint64_t h = hinge_active ? 1 : 0;
  h = Rng::mix(h ^ Rng::mix(static_cast<uint64_t>(selected_pos + 1)));
  h = Rng::mix(h ^ Rng::mix(static_cast<uint64_t>(selected_neg + 1)));
  h = Rng::mix(h ^ active_pair_hash);
  return h;
}

double loss_mrc(const ForwardOutput& out, const MrcInput& x, const SpanCandidates& cands, TaskMode mode,
                LossBreakdown* bd) {
  int first = x.context_first, last = x.context_last;
  int nc = x.context_len();

  std::set<int> gold_starts, gold_ends;
  for (const auto& [s, e] : x.answer_spans) {
    gold_starts.insert(s);
    gold_ends.insert(e);
  }

  double l_start = 0, l_end = 0;
  for (int i = first; i <= last; ++i) {
    l_start += bce_logit(out.start_logits(i), gold_starts.count(i) ? 1.0 : 0.0);
    l_end += bce_logit(out.end_logits(i), gold_ends.count(i) ? 1.0 : 0.0);
  }
  if (nc > 0) {
    l_start /= nc;
    l_end /= nc;
  }

  double l_span = 0;
  if (mode == TaskMode::selector && !cands.pairs.empty()) {
    std::set<std::pair<int, int>> gold(x.answer_spans.begin(), x.answer_spans.end());
    for (const auto& [s, e] : cands.pairs) l_span += bce_logit(out.span_score(s, e), gold.count({s, e}) ? 1.0 : 0.0);
    l_span /= static_cast<double>(cands.pairs.size());
  }

  if (bd != nullptr) {
    bd->start_bce = l_start;
    bd->end_bce = l_end;
    bd->span_bce = l_span;
  }
  return l_start + l_end + l_span;
}

double contrastive_hinge(const std::vector<double>& pos, const std::vector<double>& neg, const LossConfig& cfg,
                         LossBreakdown* bd) {
  double loss = 0;
  if (cfg.mode == LossConfig::Contrastive::maxmin) {
    int pi = static_cast<int>(std::min_element(pos.begin(), pos.end()) - pos.begin());
    int ni = static_cast<int>(std::max_element(neg.begin(), neg.end()) - neg.begin());
    loss = std::max(0.0, cfg.margin - (pos[pi] - neg[ni]));
    if (bd != nullptr) {
      bd->selected_pos = pi;
      bd->selected_neg = ni;
      bd->hinge_active = loss > 0;
    }
  } else {
    std::vector<uint8_t> active;
    for (double sp : pos)
      for (double sn : neg) {
        double hinge = cfg.margin - (sp - sn);
        active.push_back(hinge > 0 ? 1 : 0);
        if (hinge > 0) loss += hinge;
      }
    loss /= static_cast<double>(pos.size() * neg.size());
    if (bd != nullptr) {
      bd->active_pair_hash = fnv1a64(active.data(), active.size());
      bd->hinge_active = loss > 0;
    }
  }
  if (bd != nullptr) bd->contrastive = loss;
  return loss;
}

double loss_contrastive(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg, LossBreakdown* bd) {
  if (cfg.mode == LossConfig::Contrastive::off || x.answer_spans.empty() || x.negative_spans.empty()) {
    if (bd != nullptr) bd->contrastive = 0;
    return 0;
  }
  std::vector<double> pos, neg;
  for (const auto& [s, e] : x.answer_spans) pos.push_back(out.sigma_span(s, e));
  for (const auto& [s, e] : x.negative_spans) neg.push_back(out.sigma_span(s, e));
  return contrastive_hinge(pos, neg, cfg, bd);
}

double total_loss(const ForwardOutput& out, const MrcInput& x, const LossConfig& cfg, const SpanCandidates& cands,
                  TaskMode mode, LossBreakdown* bd) {
  double l = loss_mrc(out, x, cands, mode, bd);
  if (mode == TaskMode::selector) l += cfg.alpha * loss_contrastive(out, x, cfg, bd);
  if (bd != nullptr) bd->total = l;
  return l;
}

double loss_and_grad(const ModelParams& p, const MrcInput& x, const LossConfig& cfg, const SpanCandidates& cands,
                     TaskMode mode, ModelParams& grads, LossBreakdown* bd) {
  ForwardOutput out = forward(p, x, /*with_trace=*/true);
  return loss_and_grad_traced(out, p, x, cfg, cands, mode, grads, bd);
}

double loss_and_grad_traced(const ForwardOutput& out, const ModelParams& p, const MrcInput& x, const LossConfig& cfg,
                            const SpanCandidates& cands, TaskMode mode, ModelParams& grads, LossBreakdown* bd) {
  if (out.trace.size() != p.blocks.size()) throw ModelError("loss_and_grad_traced: forward ran without trace");
  LossBreakdown local_bd;
  LossBreakdown& b = bd != nullptr ? *bd : local_bd;
  double loss = total_loss(out, x, cfg, cands, mode, &b);

  const auto& cfgm = p.config;
  int len = x.length();
  int d = cfgm.d;
  int heads = cfgm.heads;
  int dk = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  int first = x.context_first, last = x.context_last;
  int nc = x.context_len();

  // d(loss)/d(logit) for the two position heads.
  std::set<int> gold_starts, gold_ends;
  for (const auto& [s, e] : x.answer_spans) {
    gold_starts.insert(s);
    gold_ends.insert(e);
  }
  Eigen::VectorXd dstart = Eigen::VectorXd::Zero(len);
  Eigen::VectorXd dend = Eigen::VectorXd::Zero(len);
  for (int i = first; i <= last && nc > 0; ++i) {
    dstart(i) = (sigmoid(out.start_logits(i)) - (gold_starts.count(i) ? 1.0 : 0.0)) / nc;
    dend(i) = (sigmoid(out.end_logits(i)) - (gold_ends.count(i) ? 1.0 : 0.0)) / nc;
  }

  // d(loss)/d(span_score) per (s,e), merged across BCE and contrastive terms.
  std::map<std::pair<int, int>, double> dscore;
  if (mode == TaskMode::selector) {
    if (!cands.pairs.empty()) {
      std::set<std::pair<int, int>> gold(x.answer_spans.begin(), x.answer_spans.end());
      double n = static_cast<double>(cands.pairs.size());
      for (const auto& pr : cands.pairs) {
        double z = out.span_score(pr.first, pr.second);
        dscore[pr] += (sigmoid(z) - (gold.count(pr) ? 1.0 : 0.0)) / n;
      }
    }
    if (cfg.mode != LossConfig::Contrastive::off && !x.answer_spans.empty() && !x.negative_spans.empty()) {
      if (cfg.mode == LossConfig::Contrastive::maxmin) {
        if (b.hinge_active) {
          auto ppos = x.answer_spans[b.selected_pos];
          auto pneg = x.negative_spans[b.selected_neg];
          double sp = out.sigma_span(ppos.first, ppos.second);
          double sn = out.sigma_span(pneg.first, pneg.second);
          dscore[ppos] += cfg.alpha * (-sp * (1 - sp));
          dscore[pneg] += cfg.alpha * (sn * (1 - sn));
        }
      } else {
        double npairs = static_cast<double>(x.answer_spans.size() * x.negative_spans.size());
        for (const auto& pp : x.answer_spans)
          for (const auto& pn : x.negative_spans) {
            double sp = out.sigma_span(pp.first, pp.second);
            double sn = out.sigma_span(pn.first, pn.second);
            if (cfg.margin - (sp - sn) > 0) {
              dscore[pp] += cfg.alpha * (-sp * (1 - sp)) / npairs;
              dscore[pn] += cfg.alpha * (sn * (1 - sn)) / npairs;
            }
          }
      }
    }
  }

  // Heads into dH.
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(len, d);
  dh += dstart * p.w_start.transpose();
  dh += dend * p.w_end.transpose();
  grads.w_start += out.h.transpose() * dstart;
  grads.w_end += out.h.transpose() * dend;

  for (const auto& [pr, g] : dscore) {
    if (g == 0) continue;
    auto [s, e] = pr;
    Eigen::VectorXd hs = out.h.row(s).transpose();
    Eigen::VectorXd he = out.h.row(e).transpose();
    Eigen::VectorXd f1 = (p.span_w1 * hs + p.span_b1).array().tanh();
    Eigen::VectorXd ffn = p.span_w2 * f1 + p.span_b2;
    Eigen::VectorXd dffn = g * he;
    dh.row(e) += (g * ffn).transpose();
    grads.span_w2 += dffn * f1.transpose();
    grads.span_b2 += dffn;
    Eigen::VectorXd df1 = p.span_w2.transpose() * dffn;
    Eigen::VectorXd dz = df1.array() * (1.0 - f1.array().square());
    grads.span_w1 += dz * hs.transpose();
    grads.span_b1 += dz;
    dh.row(s) += (p.span_w1.transpose() * dz).transpose();
  }

  // Final layer norm.
  Eigen::MatrixXd dx = layer_norm_backward(dh, out.lnf_xhat, out.lnf_inv_std, p.lnf_g, grads.lnf_g, grads.lnf_b);

  for (int bi = static_cast<int>(p.blocks.size()) - 1; bi >= 0; --bi) {
    const auto& blk = p.blocks[bi];
    auto& gb = grads.blocks[bi];
    const auto& tr = out.trace[bi];

    // xcur = res1 + f, f = a1 w2^T + b2, a1 = tanh(n2 w1^T + b1)
    Eigen::MatrixXd df = dx;
    gb.w2 += df.transpose() * tr.a1;
    gb.b2 += df.colwise().sum().transpose();
    Eigen::MatrixXd da1 = df * blk.w2;
    Eigen::MatrixXd dz1 = da1.array() * (1.0 - tr.a1.array().square());
    gb.w1 += dz1.transpose() * tr.n2;
    gb.b1 += dz1.colwise().sum().transpose();
    Eigen::MatrixXd dn2 = dz1 * blk.w1;

    Eigen::MatrixXd dres1 = dx + layer_norm_backward(dn2, tr.n2_xhat, tr.n2_inv_std, blk.ln2_g, gb.ln2_g, gb.ln2_b);

    // res1 = x_in + attn_out, attn_out = ctx wo^T + bo
    Eigen::MatrixXd dattn = dres1;
    gb.wo += dattn.transpose() * tr.ctx;
    gb.bo += dattn.colwise().sum().transpose();
    Eigen::MatrixXd dctx = dattn * blk.wo;

    Eigen::MatrixXd dqm = Eigen::MatrixXd::Zero(len, d);
    Eigen::MatrixXd dkm = Eigen::MatrixXd::Zero(len, d);
    Eigen::MatrixXd dvm = Eigen::MatrixXd::Zero(len, d);
    for (int t = 0; t < heads; ++t) {
      auto qt = tr.qm.middleCols(t * dk, dk);
      auto kt = tr.km.middleCols(t * dk, dk);
      auto vt = tr.vm.middleCols(t * dk, dk);
      const Eigen::MatrixXd& a = tr.attn[t];
      Eigen::MatrixXd dct = dctx.middleCols(t * dk, dk);
      Eigen::MatrixXd da = dct * vt.transpose();
      dvm.middleCols(t * dk, dk) = a.transpose() * dct;
      Eigen::MatrixXd ds(len, len);
      for (int r = 0; r < len; ++r) {
        double dot = da.row(r).dot(a.row(r));
        ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
      }
      dqm.middleCols(t * dk, dk) = ds * kt * scale;
      dkm.middleCols(t * dk, dk) = ds.transpose() * qt * scale;
    }

    gb.wq += dqm.transpose() * tr.n1;
    gb.bq += dqm.colwise().sum().transpose();
    gb.wk += dkm.transpose() * tr.n1;
    gb.bk += dkm.colwise().sum().transpose();
    gb.wv += dvm.transpose() * tr.n1;
    gb.bv += dvm.colwise().sum().transpose();
    Eigen::MatrixXd dn1 = dqm * blk.wq + dkm * blk.wk + dvm * blk.wv;

    dx = dres1 + layer_norm_backward(dn1, tr.n1_xhat, tr.n1_inv_std, blk.ln1_g, gb.ln1_g, gb.ln1_b);
  }

  for (int i = 0; i < len; ++i) {
    grads.tok_emb.row(x.token_ids[i]) += dx.row(i);
    grads.pos_emb.row(i) += dx.row(i);
  }
  return loss;
}

std::vector<ScoredSpan> decode_spans(const std::vector<double>& start_sigma, const std::vector<double>& end_sigma,
                                     const std::function<double(int, int)>& span_sigma, int ctx_first, int ctx_last,
                                     const DecodeConfig& cfg) {
  std::vector<ScoredSpan> out;
  if (ctx_last < ctx_first) return out;

  if (cfg.mode == TaskMode::selector) {
    std::vector<int> starts, ends;
    for (int i = ctx_first; i <= ctx_last; ++i) {
      if (start_sigma[i] > cfg.threshold) starts.push_back(i);
      if (end_sigma[i] > cfg.threshold) ends.push_back(i);
    }
    std::vector<ScoredSpan> cands;
    for (int s : starts)
      for (int e : ends) {
        if (e < s || e > s + cfg.max_span_len) continue;
        double sig = span_sigma(s, e);
        if (sig > cfg.threshold) cands.push_back({s, e, sig});
      }
    std::sort(cands.begin(), cands.end(), [](const ScoredSpan& a, const ScoredSpan& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.s, a.e) < std::tie(b.s, b.e);
    });
    if (cfg.allow_nested) return cands;
    for (const auto& c : cands) {
      bool clashes = false;
      for (const auto& kept : out)
        if (c.s <= kept.e && kept.s <= c.e) {
          clashes = true;
          break;
        }
      if (!clashes) out.push_back(c);
    }
    return out;
  }

  // topk: rank every valid pair by start*end probability, no selector pass.
  std::vector<std::pair<double, std::pair<int, int>>> ranked;
  for (int s = ctx_first; s <= ctx_last; ++s)
    for (int e = s; e <= std::min(ctx_last, s + cfg.max_span_len); ++e)
      ranked.push_back({start_sigma[s] * end_sigma[e], {s, e}});
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  size_t n = std::min<size_t>(cfg.topk, ranked.size());
  for (size_t i = 0; i < n; ++i) {
    auto [s, e] = ranked[i].second;
    out.push_back({s, e, (start_sigma[s] + end_sigma[e]) / 2.0});
  }
  return out;
}

std::vector<Prediction> predict_example(const ModelParams& p, const MrcInput& x, const DecodeConfig& cfg) {
  ForwardOutput out = forward(p, x);
  int len = x.length();
  std::vector<double> ssig(len, 0.0), esig(len, 0.0);
  for (int i = x.context_first; i <= x.context_last; ++i) {
    ssig[i] = out.sigma_start(i);
    esig[i] = out.sigma_end(i);
  }
  auto span_sigma = [&](int s, int e) { return out.sigma_span(s, e); };
  std::vector<Prediction> preds;
  for (const auto& sp : decode_spans(ssig, esig, span_sigma, x.context_first, x.context_last, cfg)) {
    Prediction pr;
    pr.doc_id = x.doc_id;
    pr.category_id = x.category_id;
    pr.start_char = x.token_char_start[sp.s];
    pr.end_char = x.token_char_end[sp.e];
    pr.score = sp.score;
    preds.push_back(std::move(pr));
  }
  return preds;
}

std::string serialize_predictions(const std::vector<Prediction>& preds) {
  std::ostringstream out;
  for (const auto& p : preds) {
    nlohmann::json j{{"doc_id", p.doc_id}, {"category", p.category_id}, {"start", p.start_char},
                     {"end", p.end_char},  {"score", p.score}};
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<Prediction> parse_predictions(const std::string& jsonl) {
  std::vector<Prediction> out;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("doc_id").get<std::string>(), j.at("category").get<int>(), j.at("start").get<int>(),
                     j.at("end").get<int>(), j.at("score").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_predictions(const std::vector<Prediction>& preds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write predictions file '" + path + "'");
  out << serialize_predictions(preds);
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open predictions file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_predictions(buf.str());
}

}  // namespace spanid
