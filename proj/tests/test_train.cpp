#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "spanid/corpus.hpp"
#include "spanid/encode.hpp"
#include "spanid/mrc_data.hpp"
#include "spanid/model.hpp"
#include "spanid/rng.hpp"
#include "spanid/text.hpp"
#include "spanid/train.hpp"

using namespace spanid;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "spanid_train_tests";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig tiny_config(int vocab_size) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = vocab_size;
  cfg.max_len = 48;
  cfg.max_span_len = 6;
  cfg.init_seed = 7;
  return cfg;
}

MrcInput handmade_input() {
  MrcInput x;
  x.token_ids = {0, 5, 6, 1, 7, 8, 9, 10, 1};
  x.context_first = 4;
  x.context_last = 7;
  x.doc_id = "t1";
  x.answer_spans = {{5, 6}};
  x.negative_spans = {{4, 4}, {7, 7}};
  return x;
}

// Tiny but real training setup: one doc, one category, encoded end to end.
struct Fixture {
  Dataset ds;
  Tokenizer tok;
  std::vector<MrcInput> inputs;
  ModelConfig cfg;
};

Fixture make_fixture() {
  Fixture f;
  Category c;
  c.id = 0;
  c.name = "GPE";
  c.mention = "place names";
  f.ds.categories = {c};
  f.ds.documents = {{"d1", "I'm in Atlanta today.", Split::train},
                    {"d2", "Boston was sunny.", Split::train}};
  auto add = [&](const std::string& doc, int s, int e) {
    SpanAnnotation a;
    a.doc_id = doc;
    a.start_char = s;
    a.end_char = e;
    a.category_id = 0;
    a.surface = cp_slice(f.ds.find_document(doc)->text, s, e);
    f.ds.annotations.push_back(a);
  };
  add("d1", 7, 14);  // Atlanta
  add("d2", 0, 6);   // Boston
  f.tok = build_vocab(f.ds, 1);
  f.inputs = encode_all(build_sub_examples(f.ds), f.ds, f.tok, 48);
  f.cfg = tiny_config(f.tok.size());
  return f;
}

bool params_equal(ModelParams& a, ModelParams& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].size() != tb[i].size()) return false;
    if (std::memcmp(ta[i].data, tb[i].data, static_cast<size_t>(ta[i].size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("weight decay is decoupled: lr 0 shrinks parameters multiplicatively") {
  ModelParams p = ModelParams::init(tiny_config(12));
  ModelParams snapshot = p;
  ModelParams g = ModelParams::zeros_like(p);
  for (auto& t : g.tensors())
    for (int64_t i = 0; i < t.size(); ++i) t.data[i] = 123.0;  // huge gradients see zero lr

  AdamW opt(p);
  AdamWConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.1;
  opt.step(p, g, cfg);

  auto before = snapshot.tensors();
  auto after = p.tensors();
  for (size_t k = 0; k < after.size(); ++k)
    for (int64_t i = 0; i < after[k].size(); ++i)
      CHECK(after[k].data[i] == doctest::Approx(0.9 * before[k].data[i]).epsilon(1e-12));
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW with a constant gradient moves by lr*g/(|g|+eps) each step") {
  ModelParams p = ModelParams::shaped(tiny_config(12));
  ModelParams g = ModelParams::zeros_like(p);
  // distinct gradient per entry of one head tensor
  auto gv = g.tensors();
  for (auto& t : gv)
    if (t.name == "w_start")
      for (int64_t i = 0; i < t.size(); ++i) t.data[i] = 0.5 * static_cast<double>(i + 1);

  AdamW opt(p);
  AdamWConfig cfg;
  cfg.lr = 0.01;
  opt.step(p, g, cfg);
  opt.step(p, g, cfg);

  // bias-corrected mhat = g and vhat = g^2 exactly when the gradient is constant
  for (auto& t : p.tensors())
    if (t.name == "w_start")
      for (int64_t i = 0; i < t.size(); ++i) {
        double grad = 0.5 * static_cast<double>(i + 1);
        double step = cfg.lr * grad / (std::abs(grad) + cfg.eps);
        CHECK(t.data[i] == doctest::Approx(-2.0 * step).epsilon(1e-9));
      }
}

TEST_CASE("global norm clipping scales gradients to the budget") {
  ModelParams g = ModelParams::shaped(tiny_config(12));
  auto tv = g.tensors();
  tv[0].data[0] = 3.0;
  tv[1].data[0] = 4.0;
  CHECK(global_grad_norm(g) == doctest::Approx(5.0));

  clip_global_norm(g, 1.0);
  CHECK(global_grad_norm(g) == doctest::Approx(1.0));
  CHECK(tv[0].data[0] == doctest::Approx(0.6));
  CHECK(tv[1].data[0] == doctest::Approx(0.8));

  clip_global_norm(g, 10.0);  // under budget: untouched
  CHECK(global_grad_norm(g) == doctest::Approx(1.0));
}

TEST_CASE("training is bit-deterministic in the seed") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.seed = 11;
  tc.eval_every = 0;

  ModelParams a = train(init, f.inputs, TaskMode::selector, tc);
  ModelParams b = train(init, f.inputs, TaskMode::selector, tc);
  CHECK(params_equal(a, b));

  tc.seed = 12;
  ModelParams c = train(init, f.inputs, TaskMode::selector, tc);
  CHECK(!params_equal(a, c));
}

TEST_CASE("loss goes down") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.epochs = 30;
  tc.batch_size = 2;
  tc.seed = 1;
  tc.eval_every = 0;

  TrainReport rep;
  train(init, f.inputs, TaskMode::selector, tc, &rep);
  REQUIRE(rep.epochs.size() == 30);
  CHECK(rep.epochs.back().train_loss < rep.epochs.front().train_loss);
  CHECK(rep.steps == 30);  // 2 examples, batch 2: one step per epoch
}

TEST_CASE("a single example is memorized to near-zero loss") {
  Fixture f = make_fixture();
  std::vector<MrcInput> one = {f.inputs[0]};
  REQUIRE(one[0].answerable());
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 5e-3;
  tc.epochs = 300;
  tc.batch_size = 1;
  tc.seed = 2;
  tc.eval_every = 0;

  TrainReport rep;
  train(init, one, TaskMode::selector, tc, &rep);
  CHECK(rep.epochs.back().train_loss < 0.05);
}

TEST_CASE("exploding learning rates trip the divergence guard") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 1e8;
  tc.grad_clip = 0.0;  // no clipping to hold it back
  tc.epochs = 50;
  tc.batch_size = 2;
  tc.seed = 3;
  tc.eval_every = 0;

  bool threw = false;
  try {
    train(init, f.inputs, TaskMode::selector, tc);
  } catch (const TrainError& e) {
    threw = true;
    CHECK(std::string(e.what()).substr(0, 9) == "diverged:");
  }
  CHECK(threw);
}

TEST_CASE("eval_fn drives best-checkpoint selection") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 2;
  tc.seed = 19;
  tc.eval_every = 1;

  // Per-epoch RNG comes from root.fork(2*epoch): prefix runs share streams,
  // so a 2-epoch run reproduces the 4-epoch run's state after epoch 2.
  tc.epochs = 2;
  TrainReport short_rep;
  ModelParams after2 = train(init, f.inputs, TaskMode::selector, tc, &short_rep);

  tc.epochs = 4;
  std::vector<double> scores = {0.1, 0.9, 0.5, 0.2};
  int calls = 0;
  TrainReport rep;
  ModelParams best = train(init, f.inputs, TaskMode::selector, tc, &rep,
                           [&](const ModelParams&) { return scores[calls++]; });
  CHECK(calls == 4);
  CHECK(rep.best_epoch == 2);
  CHECK(rep.best_score == 0.9);
  CHECK(rep.epochs.size() == 4);
  CHECK(params_equal(best, after2));
  CHECK(!rep.stopped_early);
}

TEST_CASE("stop_at_eval_score halts the run early") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 2;
  tc.seed = 4;
  tc.epochs = 10;
  tc.eval_every = 1;
  tc.stop_at_eval_score = 0.3;

  TrainReport rep;
  int calls = 0;
  train(init, f.inputs, TaskMode::selector, tc, &rep, [&](const ModelParams&) { return 0.1 * ++calls; });
  CHECK(rep.stopped_early);
  CHECK(rep.epochs.size() == 3);  // 0.1, 0.2, 0.3 then stop
  CHECK(rep.epochs.back().eval_score == doctest::Approx(0.3));
}

TEST_CASE("eval_every spaces out evaluations") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 2;
  tc.seed = 5;
  tc.epochs = 5;
  tc.eval_every = 2;

  TrainReport rep;
  int calls = 0;
  train(init, f.inputs, TaskMode::selector, tc, &rep, [&](const ModelParams&) { return 0.01 * ++calls; });
  CHECK(calls == 3);  // epochs 2, 4 and the final 5
  CHECK(rep.epochs[0].eval_score == -1);
  CHECK(rep.epochs[1].eval_score > 0);
  CHECK(rep.epochs[4].eval_score > 0);
}

TEST_CASE("train rejects empty inputs and bad configs") {
  Fixture f = make_fixture();
  ModelParams init = ModelParams::init(f.cfg);
  TrainConfig tc;
  CHECK_THROWS_AS(train(init, {}, TaskMode::selector, tc), TrainError);
  tc.lr = 0;
  CHECK_THROWS_AS(train(init, f.inputs, TaskMode::selector, tc), TrainError);
  tc.lr = 1e-3;
  tc.epochs = 0;
  CHECK_THROWS_AS(train(init, f.inputs, TaskMode::selector, tc), TrainError);
}

TEST_CASE("checkpoints survive a byte-identical round trip") {
  Fixture f = make_fixture();
  ModelParams p = ModelParams::init(f.cfg);
  fs::path path = temp_file("roundtrip.ckpt");
  save_checkpoint(p, f.tok, path.string());

  Checkpoint ck = load_checkpoint(path.string());
  CHECK(ck.params.config.d == f.cfg.d);
  CHECK(ck.params.config.init_seed == f.cfg.init_seed);
  CHECK(ck.tokenizer.vocab == f.tok.vocab);
  CHECK(ck.tokenizer.lowercase == f.tok.lowercase);
  CHECK(params_equal(ck.params, p));

  fs::path path2 = temp_file("roundtrip2.ckpt");
  save_checkpoint(ck.params, ck.tokenizer, path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());
}

TEST_CASE("checkpoint loading rejects damage") {
  Fixture f = make_fixture();
  ModelParams p = ModelParams::init(f.cfg);
  fs::path path = temp_file("damage.ckpt");
  save_checkpoint(p, f.tok, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto write_bytes = [&](const std::string& b) {
    fs::path t = temp_file("damaged.ckpt");
    std::ofstream out(t, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    out.close();
    return t;
  };
  auto message_of = [&](const std::string& b) {
    try {
      load_checkpoint(write_bytes(b).string());
      return std::string("no error");
    } catch (const TrainError& e) {
      return std::string(e.what());
    }
  };

  // wrong magic
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(message_of(magic) == "not a checkpoint file");

  // unsupported version, checksum fixed up so the version check is reached
  std::string ver = bytes;
  ver[8] = 99;
  uint64_t vsum = fnv1a64(ver.data(), ver.size() - 8);
  std::memcpy(ver.data() + ver.size() - 8, &vsum, sizeof(vsum));
  CHECK(message_of(ver).substr(0, 30) == "unsupported checkpoint version");

  // flipped payload byte breaks the whole-file checksum
  std::string flip = bytes;
  flip[bytes.size() / 2] ^= 0x40;
  CHECK(message_of(flip).substr(0, 18) == "corrupt checkpoint");

  // truncation
  CHECK(message_of(bytes.substr(0, bytes.size() - 9)).substr(0, 18) == "corrupt checkpoint");
  CHECK(message_of(bytes.substr(0, 20)).substr(0, 18) == "corrupt checkpoint");

  // vocab hash patched in place, checksum fixed up: the vocabulary check fires
  std::string patched = bytes;
  uint64_t fake = 0x1122334455667788ULL;
  std::memcpy(patched.data() + 49, &fake, sizeof(fake));
  uint64_t sum = fnv1a64(patched.data(), patched.size() - 8);
  std::memcpy(patched.data() + patched.size() - 8, &sum, sizeof(sum));
  CHECK(message_of(patched).substr(0, 30) == "checkpoint vocab hash mismatch");

  CHECK_THROWS_AS(load_checkpoint((temp_file("missing.ckpt")).string()), TrainError);
}

TEST_CASE("analytic gradients match central differences on the zero model") {
  ModelParams p = ModelParams::shaped(tiny_config(12));
  MrcInput x = handmade_input();
  LossConfig lc;
  GradCheckReport rep = grad_check(p, x, lc, TaskMode::selector);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("analytic gradients match central differences on random models") {
  MrcInput x = handmade_input();
  uint64_t init_seed = 100;
  for (auto mode : {LossConfig::Contrastive::maxmin, LossConfig::Contrastive::average}) {
    ModelConfig cfg = tiny_config(12);
    cfg.init_seed = ++init_seed;
    ModelParams p = ModelParams::init(cfg);
    LossConfig lc;
    lc.mode = mode;
    lc.margin = 1.0;  // keep the hinge active so its gradient is exercised
    GradCheckReport rep = grad_check(p, x, lc, TaskMode::selector, 1e-5, /*seed=*/42);
    INFO("contrastive mode ", static_cast<int>(mode), " worst tensor ", rep.worst_tensor);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_err <= 1e-4);
  }

  ModelConfig cfg = tiny_config(12);
  cfg.init_seed = 300;
  ModelParams p = ModelParams::init(cfg);
  LossConfig lc;
  GradCheckReport rep = grad_check(p, x, lc, TaskMode::topk, 1e-5, 7);
  INFO("topk worst tensor ", rep.worst_tensor);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("gradient check covers unanswerable inputs") {
  MrcInput x = handmade_input();
  x.answer_spans.clear();
  ModelConfig cfg = tiny_config(12);
  cfg.init_seed = 301;
  ModelParams p = ModelParams::init(cfg);
  LossConfig lc;
  GradCheckReport rep = grad_check(p, x, lc, TaskMode::selector, 1e-5, 9);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-4);
}
