#include "spanid/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace spanid {

void AdamW::step(ModelParams& p, ModelParams& g, const AdamWConfig& cfg) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  auto pt = p.tensors();
  auto gt = g.tensors();
  auto mt = m_.tensors();
  auto vt = v_.tensors();
  for (size_t k = 0; k < pt.size(); ++k) {
    double* pd = pt[k].data;
    double* gd = gt[k].data;
    double* md = mt[k].data;
    double* vd = vt[k].data;
    int64_t n = pt[k].size();
    for (int64_t i = 0; i < n; ++i) {
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      double mhat = md[i] / bc1;
      double vhat = vd[i] / bc2;
      pd[i] = (1.0 - cfg.weight_decay) * pd[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double global_grad_norm(ModelParams& g) {
  double sq = 0;
  for (auto& t : g.tensors())
    for (int64_t i = 0; i < t.size(); ++i) sq += t.data[i] * t.data[i];
  return std::sqrt(sq);
}

void clip_global_norm(ModelParams& g, double max_norm) {
  if (max_norm <= 0) return;
  double norm = global_grad_norm(g);
  if (norm <= max_norm) return;
  double scale = max_norm / norm;
  for (auto& t : g.tensors())
    for (int64_t i = 0; i < t.size(); ++i) t.data[i] *= scale;
}

namespace {

void scale_params(ModelParams& g, double s) {
  for (auto& t : g.tensors())
    for (int64_t i = 0; i < t.size(); ++i) t.data[i] *= s;
}

}  // namespace

ModelParams train(const ModelParams& init, const std::vector<MrcInput>& examples, TaskMode task_mode,
                  const TrainConfig& cfg, TrainReport* report, const EvalFn& eval_fn) {
  if (examples.empty()) throw TrainError("train: no examples");
  if (cfg.lr <= 0) throw TrainError("train: lr must be > 0");
  if (cfg.batch_size < 1) throw TrainError("train: batch_size must be >= 1");
  if (cfg.epochs < 1) throw TrainError("train: epochs must be >= 1");

  ModelParams params = init;
  AdamW opt(params);
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;

  Rng root(cfg.seed);
  TrainReport local_report;
  TrainReport& rep = report != nullptr ? *report : local_report;
  rep = TrainReport{};
  rep.seed = cfg.seed;

  ModelParams best = params;
  double first_epoch_loss = -1;
  int over_budget_epochs = 0;
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = root.fork(2 * static_cast<uint64_t>(epoch));
    Rng cand_rng = root.fork(2 * static_cast<uint64_t>(epoch) + 1);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    int64_t seen = 0;
    for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      size_t count = std::min<size_t>(cfg.batch_size, order.size() - pos);
      ModelParams grads = ModelParams::zeros_like(params);
      double batch_loss = 0;
      for (size_t k = 0; k < count; ++k) {
        const MrcInput& x = examples[order[pos + k]];
        ForwardOutput out;
        try {
          out = forward(params, x, /*with_trace=*/true);
        } catch (const ModelError& e) {
          throw TrainError(std::string("diverged: ") + e.what());
        }
        SpanCandidates cands =
            select_span_candidates(out, x, cfg.loss, params.config.max_span_len, cand_rng);
        batch_loss += loss_and_grad_traced(out, params, x, cfg.loss, cands, task_mode, grads);
      }
      if (!std::isfinite(batch_loss)) throw TrainError("diverged: non-finite loss at epoch " + std::to_string(epoch));
      scale_params(grads, 1.0 / static_cast<double>(count));
      clip_global_norm(grads, cfg.grad_clip);
      opt.step(params, grads, ocfg);
      epoch_loss += batch_loss;
      seen += static_cast<int64_t>(count);
    }
    epoch_loss /= static_cast<double>(seen);

    if (first_epoch_loss < 0) first_epoch_loss = std::max(epoch_loss, 1e-12);
    if (epoch_loss > 10.0 * first_epoch_loss) {
      if (++over_budget_epochs >= 3)
        throw TrainError("diverged: loss " + std::to_string(epoch_loss) + " above 10x initial " +
                         std::to_string(first_epoch_loss) + " for 3 consecutive epochs");
    } else {
      over_budget_epochs = 0;
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = epoch_loss;
    bool do_eval = eval_fn && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (do_eval) {
      es.eval_score = eval_fn(params);
      if (es.eval_score > rep.best_score) {
        rep.best_score = es.eval_score;
        rep.best_epoch = epoch;
        best = params;
      }
    }
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.epochs.push_back(es);

    if (do_eval && cfg.stop_at_eval_score >= 0 && es.eval_score >= cfg.stop_at_eval_score) {
      rep.stopped_early = true;
      break;
    }
  }
  rep.steps = opt.steps();
  return (eval_fn && rep.best_epoch >= 0) ? best : params;
}

namespace {

double eval_total_loss(const ModelParams& p, const MrcInput& x, const LossConfig& cfg, const SpanCandidates& cands,
                       TaskMode mode, LossBreakdown* bd) {
  ForwardOutput out = forward(p, x);
  return total_loss(out, x, cfg, cands, mode, bd);
}

}  // namespace

GradCheckReport grad_check(const ModelParams& params, const MrcInput& x, const LossConfig& cfg, TaskMode task_mode,
                           double eps, uint64_t seed) {
  ModelParams p = params;

  // Freeze the span-BCE candidate set so every probe sees the same loss.
  Rng cand_rng(seed);
  ForwardOutput out0 = forward(p, x);
  SpanCandidates cands = select_span_candidates(out0, x, cfg, p.config.max_span_len, cand_rng);

  ModelParams grads = ModelParams::zeros_like(p);
  loss_and_grad(p, x, cfg, cands, task_mode, grads);

  const std::set<std::string> full_tensors = {"w_start", "w_end", "span_w1", "span_b1", "span_w2", "span_b2"};

  GradCheckReport rep;
  auto pviews = p.tensors();
  auto gviews = grads.tensors();
  for (size_t k = 0; k < pviews.size(); ++k) {
    auto& view = pviews[k];
    std::vector<uint64_t> entries;
    if (full_tensors.count(view.name) > 0) {
      entries.resize(view.size());
      for (int64_t i = 0; i < view.size(); ++i) entries[i] = static_cast<uint64_t>(i);
    } else {
      Rng trng(Rng::mix(seed ^ fnv1a64(view.name.data(), view.name.size())));
      entries = trng.sample_indices(static_cast<uint64_t>(view.size()),
                                    std::min<uint64_t>(32, static_cast<uint64_t>(view.size())));
    }
    for (uint64_t i : entries) {
      double saved = view.data[i];
      LossBreakdown bd_p, bd_m;
      view.data[i] = saved + eps;
      double lp = eval_total_loss(p, x, cfg, cands, task_mode, &bd_p);
      view.data[i] = saved - eps;
      double lm = eval_total_loss(p, x, cfg, cands, task_mode, &bd_m);
      view.data[i] = saved;
      if (bd_p.selection_signature() != bd_m.selection_signature()) {
        rep.excluded += 1;
        continue;
      }
      double numeric = (lp - lm) / (2.0 * eps);
      double analytic = gviews[k].data[i];
      double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = view.name;
      }
      rep.checked += 1;
    }
  }
  return rep;
}

namespace {

constexpr char kMagic[8] = {'S', 'P', 'I', 'D', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::string& buf, const std::string& s) {
  put(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

class Reader {
 public:
  Reader(const std::string& buf, size_t limit) : buf_(buf), limit_(limit) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > limit_) throw TrainError("corrupt checkpoint: truncated");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_str() {
    uint32_t n = get<uint32_t>();
    if (pos_ + n > limit_) throw TrainError("corrupt checkpoint: truncated string");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(double* out, int64_t n) {
    size_t bytes = static_cast<size_t>(n) * sizeof(double);
    if (pos_ + bytes > limit_) throw TrainError("corrupt checkpoint: truncated tensor");
    std::memcpy(out, buf_.data() + pos_, bytes);
    pos_ += bytes;
  }

  size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  size_t limit_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& p, const Tokenizer& tok, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put(buf, kVersion);
  const auto& c = p.config;
  put(buf, static_cast<int32_t>(c.d));
  put(buf, static_cast<int32_t>(c.layers));
  put(buf, static_cast<int32_t>(c.heads));
  put(buf, static_cast<int32_t>(c.d_ff));
  put(buf, static_cast<int32_t>(c.vocab_size));
  put(buf, static_cast<int32_t>(c.max_len));
  put(buf, static_cast<int32_t>(c.max_span_len));
  put(buf, c.init_seed);
  put(buf, static_cast<uint8_t>(tok.lowercase ? 1 : 0));
  put(buf, tok.vocab_hash());
  put(buf, static_cast<uint32_t>(tok.vocab.size()));
  for (const auto& [token, id] : tok.vocab) {
    put_str(buf, token);
    put(buf, static_cast<int32_t>(id));
  }
  auto views = const_cast<ModelParams&>(p).tensors();
  put(buf, static_cast<uint32_t>(views.size()));
  for (const auto& v : views) {
    put_str(buf, v.name);
    put(buf, static_cast<int64_t>(v.rows));
    put(buf, static_cast<int64_t>(v.cols));
    buf.append(reinterpret_cast<const char*>(v.data), static_cast<size_t>(v.size()) * sizeof(double));
  }
  put(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write checkpoint '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw TrainError("short write on checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t))
    throw TrainError("corrupt checkpoint: file too small");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw TrainError("not a checkpoint file");
  uint64_t stored_sum;
  std::memcpy(&stored_sum, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
  if (stored_sum != fnv1a64(buf.data(), buf.size() - sizeof(uint64_t)))
    throw TrainError("corrupt checkpoint: checksum mismatch");

  Reader r(buf, buf.size() - sizeof(uint64_t));
  r.get<uint64_t>();  // magic, already verified
  uint32_t version = r.get<uint32_t>();
  if (version != kVersion) throw TrainError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  cfg.d = r.get<int32_t>();
  cfg.layers = r.get<int32_t>();
  cfg.heads = r.get<int32_t>();
  cfg.d_ff = r.get<int32_t>();
  cfg.vocab_size = r.get<int32_t>();
  cfg.max_len = r.get<int32_t>();
  cfg.max_span_len = r.get<int32_t>();
  cfg.init_seed = r.get<uint64_t>();

  Checkpoint ck;
  ck.tokenizer.lowercase = r.get<uint8_t>() != 0;
  uint64_t vocab_hash = r.get<uint64_t>();
  uint32_t vocab_count = r.get<uint32_t>();
  for (uint32_t i = 0; i < vocab_count; ++i) {
    std::string token = r.get_str();
    int32_t id = r.get<int32_t>();
    ck.tokenizer.vocab[token] = id;
  }
  if (ck.tokenizer.vocab_hash() != vocab_hash)
    throw TrainError("checkpoint vocab hash mismatch: stored vocabulary does not match its recorded hash");

  ck.params = ModelParams::shaped(cfg);
  auto views = ck.params.tensors();
  uint32_t tensor_count = r.get<uint32_t>();
  if (tensor_count != views.size()) throw TrainError("corrupt checkpoint: tensor count mismatch");
  for (uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = r.get_str();
    int64_t rows = r.get<int64_t>();
    int64_t cols = r.get<int64_t>();
    if (name != views[i].name || rows != views[i].rows || cols != views[i].cols)
      throw TrainError("corrupt checkpoint: tensor '" + name + "' does not match expected '" + views[i].name + "'");
    r.get_doubles(views[i].data, views[i].size());
  }
  if (r.pos() != buf.size() - sizeof(uint64_t)) throw TrainError("corrupt checkpoint: trailing bytes");
  return ck;
}

}  // namespace spanid
