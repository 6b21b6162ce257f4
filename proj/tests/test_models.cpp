#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "distillab/mlp.hpp"
#include "distillab/probes.hpp"
#include "distillab/transformer.hpp"
#include "test_util.hpp"

using namespace distillab;

TEST_CASE("symmetric init properties") {
  Rng rng(41);
  MlpParams p = init_mlp_symmetric(64, 12, 4, rng);
  // support of the draws
  for (int64_t i = 0; i < p.w.size(); ++i)
    CHECK(std::abs(p.w.values()[static_cast<size_t>(i)]) == 1.0);
  for (int i = 0; i < 64; ++i)
    CHECK(std::abs(p.a.values()[static_cast<size_t>(i)]) == doctest::Approx(1.0 / 64).epsilon(1e-15));
  // mirror structure
  for (int i = 0; i < 32; ++i) {
    CHECK(p.b.values()[static_cast<size_t>(i)] == p.b.values()[static_cast<size_t>(i + 32)]);
    CHECK(p.a.values()[static_cast<size_t>(i)] == -p.a.values()[static_cast<size_t>(i + 32)]);
    for (int j = 0; j < 12; ++j)
      CHECK(p.w.values()[static_cast<size_t>(i * 12 + j)] ==
            p.w.values()[static_cast<size_t>((i + 32) * 12 + j)]);
  }
  // exactly the zero function
  Rng xr(5);
  std::vector<double> x(12);
  std::vector<double> f(1);
  double max_abs = 0.0;
  for (int t = 0; t < 1000; ++t) {
    xr.sign_vector(x.data(), 12);
    mlp_eval_scalar(p, x.data(), 1, f.data());
    max_abs = std::max(max_abs, std::abs(f[0]));
  }
  CHECK(max_abs <= 1e-15);
  CHECK_THROWS(init_mlp_symmetric(7, 12, 4, rng));  // odd width

  // bias grid is symmetric around zero
  Rng br(77);
  MlpParams big = init_mlp_symmetric(200000, 2, 4, br);
  double mean = 0.0;
  for (int i = 0; i < 100000; ++i) mean += big.b.values()[static_cast<size_t>(i)];
  mean /= 100000.0;
  CHECK(std::abs(mean) <= 0.02);
  // grid values are on {-3/4, -1/4, 1/4, 3/4} for k = 4
  for (int i = 0; i < 1000; ++i) {
    double b = big.b.values()[static_cast<size_t>(i)];
    CHECK((std::abs(std::abs(b) - 0.75) < 1e-12 || std::abs(std::abs(b) - 0.25) < 1e-12));
  }
}

TEST_CASE("mlp forward pair example and duplicate-evaluation oracle") {
  {
    MlpParams p;
    p.output = MlpOutput::kScalar;
    p.w = Tensor({2, 2}, {1, 1, 1, 1}, true);
    p.b = Tensor({2}, {0, 0}, true);
    p.a = Tensor({2}, {0.6, -0.5}, true);  // perturbed pair
    std::vector<double> x{1, 1};
    double out = 0;
    mlp_eval_scalar(p, x.data(), 1, &out);
    CHECK(out == doctest::Approx(0.2).epsilon(1e-12));
  }
  {
    Rng rng(9);
    MlpParams p = init_mlp_symmetric(10, 6, 3, rng, MlpOutput::kLogits, 4);
    // make it a generic model
    for (int64_t i = 0; i < p.w.size(); ++i) p.w.data()[i] += 0.3 * rng.normal();
    for (int64_t i = 0; i < p.a.size(); ++i) p.a.data()[i] += 0.1 * rng.normal();
    for (int64_t i = 0; i < p.b.size(); ++i) p.b.data()[i] += 0.1 * rng.normal();
    std::vector<double> xs(5 * 6);
    rng.sign_vector(xs.data(), 30);
    std::vector<double> plain(5 * 4);
    mlp_eval_logits(p, xs.data(), 5, plain.data());
    Tape tape(false);
    Tensor logits = mlp_forward(tape, p, tape.constant({5, 6}, xs));
    for (int i = 0; i < 20; ++i)
      CHECK(std::abs(logits.values()[static_cast<size_t>(i)] -
                     plain[static_cast<size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("mlp gradient check through the tape") {
  Rng rng(13);
  MlpParams p = init_mlp_symmetric(8, 5, 3, rng, MlpOutput::kTwoLogit);
  for (int64_t i = 0; i < p.w.size(); ++i) p.w.data()[i] += 0.4 * rng.normal();
  std::vector<double> xs(4 * 5);
  rng.sign_vector(xs.data(), 20);
  std::vector<int> ys = {0, 1, 1, 0};
  auto build = [&](Tape& t) {
    Tensor logits = mlp_forward(t, p, t.constant({4, 5}, xs));
    Tensor ls = t.log_softmax(logits);
    return t.scale(t.sum(t.gather_last(ls, ys)), -0.25);
  };
  auto res = testutil::grad_check(build, p.parameters());
  CHECK(res.max_rel <= 1e-5);
}

TEST_CASE("two-stage: one population step lands on the lemma profile") {
  const int d = 13, k = 4, m = 16;
  ParitySpec spec = ParitySpec::first_k(d, k);
  Rng rng(2024);
  MlpParams init = init_mlp_symmetric(m, d, k, rng);
  MlpParams snapshot = init.clone();

  double zeta_km1 = maj_fourier(d, k - 1);
  double zeta_kp1 = maj_fourier(d, k + 1);
  TwoStageConfig cfg;
  cfg.t1 = 1;
  cfg.t2 = 0;
  cfg.eta1 = m / (k * std::abs(zeta_km1));
  cfg.lambda1 = 1.0;
  cfg.b1 = 0;  // exact population gradient
  Rng train_rng(7);
  TwoStageResult res =
      train_two_stage(cfg, spec, targets_from_labels(spec), init.clone(), train_rng);

  // stage discipline: a and b untouched
  CHECK(res.params.a.values() == snapshot.a.values());
  CHECK(res.params.b.values() == snapshot.b.values());

  for (int i = 0; i < m; ++i) {
    double ai = snapshot.a.values()[static_cast<size_t>(i)];
    const double* w0 = snapshot.w.data() + static_cast<size_t>(i) * d;
    const double* w1 = res.params.w.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      bool in_support = j < k;
      double chi = 1.0;
      for (int t = 0; t < k; ++t)
        if (t != j) chi *= w0[t];
      if (!in_support) chi *= w0[j];
      double target;
      if (in_support) {
        double sgn = (ai * zeta_km1 > 0 ? 1.0 : -1.0) * (chi > 0 ? 1.0 : -1.0);
        target = sgn / (2.0 * k);
      } else {
        double sgn = (ai > 0 ? 1.0 : -1.0) * (chi > 0 ? 1.0 : -1.0);
        target = (zeta_kp1 / std::abs(zeta_km1)) * sgn / (2.0 * k);
      }
      CHECK(std::abs(w1[j] - target) <= 1e-10);
    }
  }
  // end-of-stage-1 checkpoint captured
  CHECK(res.checkpoints.count(1) == 1);
}

TEST_CASE("two-stage: zero-length stage 2 returns the stage-1 checkpoint") {
  ParitySpec spec = ParitySpec::first_k(8, 2);
  Rng rng(3);
  MlpParams init = init_mlp_symmetric(8, 8, 2, rng);
  TwoStageConfig cfg;
  cfg.t1 = 1;
  cfg.t2 = 0;
  cfg.eta1 = 0.5;
  cfg.b1 = 64;
  Rng tr(5);
  TwoStageResult res = train_two_stage(cfg, spec, targets_from_labels(spec), init.clone(), tr);
  CHECK(res.params.w.values() == res.checkpoints.at(1).w.values());
  CHECK(res.params.a.values() == res.checkpoints.at(1).a.values());
}

TEST_CASE("two-stage pipeline learns a small parity end to end") {
  // The eta1 schedule needs even k: zeta_{k-1} vanishes for odd k.
  {
    ParitySpec odd = ParitySpec::first_k(9, 3);
    Rng r(1);
    MlpParams init = init_mlp_symmetric(8, 9, 3, r);
    TwoStageConfig bad;  // eta1 = 0 -> auto schedule
    bad.t1 = 1;
    bad.b1 = 32;
    CHECK_THROWS(train_two_stage(bad, odd, targets_from_labels(odd), init.clone(), r));
  }
  const int d = 13, k = 4, m = 2048;
  ParitySpec spec = ParitySpec::first_k(d, k);
  Rng rng(11);
  MlpParams init = init_mlp_symmetric(m, d, k, rng);
  TwoStageConfig cfg;
  cfg.t1 = 1;
  cfg.t2 = 100000;
  cfg.eta1 = 0.0;  // auto: m / (k |zeta_{k-1}|)
  cfg.lambda1 = 1.0;
  cfg.b1 = 0;
  cfg.eta2 = 0.05;
  cfg.b2 = 1;
  cfg.lambda2 = 0.0;
  Rng tr(21);
  TwoStageResult res = train_two_stage(cfg, spec, targets_from_labels(spec), init.clone(), tr);
  Rng er(31);
  double acc = mlp_eval_accuracy(res.params, spec, er, 4096);
  CHECK(acc >= 0.99);
  // mean hinge loss on held-out samples
  const int n = 8192;
  std::vector<double> xs(static_cast<size_t>(n) * d);
  std::vector<int> ys(static_cast<size_t>(n));
  Rng hr(41);
  sample_batch_flat(spec, hr, n, xs.data(), ys.data());
  std::vector<double> f(static_cast<size_t>(n));
  mlp_eval_scalar(res.params, xs.data(), n, f.data());
  double hinge = 0.0;
  for (int i = 0; i < n; ++i)
    hinge += std::max(0.0, 1.0 - f[static_cast<size_t>(i)] * parity_sign(ys[static_cast<size_t>(i)]));
  CHECK(hinge / n <= 0.05);
  // stage 2 never moved W or b
  CHECK(res.params.w.values() == res.checkpoints.at(1).w.values());
  CHECK(res.params.b.values() == res.checkpoints.at(1).b.values());
}

TEST_CASE("transformer width arithmetic") {
  for (int h : {1, 2, 4, 8}) {
    TransformerConfig cfg;
    cfg.heads = h;
    cfg.head_dim = 8;
    cfg.vocab = 4;
    cfg.max_len = 8;
    CHECK(cfg.width() == 8 * h);
  }
}

TEST_CASE("causal mode never looks at the future") {
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.vocab = 7;
  cfg.max_len = 8;
  cfg.causal = true;
  Rng rng(19);
  TransformerParams p = init_transformer(cfg, rng);
  std::vector<int> toks = {1, 4, 2, 0, 6, 3};
  Tape t1(false);
  Tensor base = transformer_forward(t1, p, toks, 1, 6);
  std::vector<int> toks2 = toks;
  toks2[4] = 5;  // change a future token
  Tape t2(false);
  Tensor changed = transformer_forward(t2, p, toks2, 1, 6);
  for (int pos = 0; pos < 4; ++pos)
    for (int c = 0; c < 7; ++c)
      CHECK(base.values()[static_cast<size_t>(pos * 7 + c)] ==
            changed.values()[static_cast<size_t>(pos * 7 + c)]);
  // and the changed position itself must differ somewhere
  bool differs = false;
  for (int c = 0; c < 7; ++c)
    differs = differs || base.values()[static_cast<size_t>(4 * 7 + c)] !=
                             changed.values()[static_cast<size_t>(4 * 7 + c)];
  CHECK(differs);
}

TEST_CASE("hide-all-but-i equals the single-token run") {
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.vocab = 9;
  cfg.max_len = 10;
  Rng rng(29);
  TransformerParams p = init_transformer(cfg, rng);
  std::vector<int> toks = {3, 1, 4, 1, 5};
  const int i = 2;
  std::vector<uint8_t> visible(5, 0);
  visible[i] = 1;
  Tape t1(false);
  Tensor full = transformer_forward(t1, p, toks, 1, 5, &visible);
  std::vector<int> single = {toks[i]};
  std::vector<int> pos_ids = {i};
  Tape t2(false);
  Tensor one = transformer_forward(t2, p, single, 1, 1, nullptr, &pos_ids);
  for (int c = 0; c < 9; ++c)
    CHECK(std::abs(full.values()[static_cast<size_t>(i * 9 + c)] -
                   one.values()[static_cast<size_t>(c)]) <= 1e-10);
}

TEST_CASE("uniform attention with zeroed positions gives position-independent logits") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.head_dim = 4;
  cfg.vocab = 5;
  cfg.max_len = 6;
  Rng rng(31);
  TransformerParams p = init_transformer(cfg, rng);
  for (auto& l : p.layers) {
    std::fill(l.wq.data(), l.wq.data() + l.wq.size(), 0.0);  // scores 0 -> uniform attention
    std::fill(l.wk.data(), l.wk.data() + l.wk.size(), 0.0);
  }
  std::fill(p.pos_emb.data(), p.pos_emb.data() + p.pos_emb.size(), 0.0);
  std::vector<int> toks = {2, 2, 2, 2};
  Tape t(false);
  Tensor out = transformer_forward(t, p, toks, 1, 4);
  for (int pos = 1; pos < 4; ++pos)
    for (int c = 0; c < 5; ++c)
      CHECK(out.values()[static_cast<size_t>(pos * 5 + c)] ==
            doctest::Approx(out.values()[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("transformer gradient check") {
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.vocab = 5;
  cfg.max_len = 6;
  Rng rng(37);
  TransformerParams p = init_transformer(cfg, rng);
  std::vector<int> toks = {1, 3, 0, 2};
  std::vector<int> targets = {3, 0, 2, 4};
  auto build = [&](Tape& t) {
    Tensor logits = transformer_forward(t, p, toks, 1, 4);
    Tensor ls = t.log_softmax(logits);
    Tensor flat = t.reshape(ls, {4, 5});
    return t.scale(t.sum(t.gather_last(flat, targets)), -0.25);
  };
  auto res = testutil::grad_check(build, p.parameters(), 1e-5);
  CHECK(res.max_rel <= 1e-5);
}

TEST_CASE("checkpoint round-trips") {
  Rng rng(43);
  MlpParams p = init_mlp_symmetric(6, 4, 2, rng);
  Checkpoint c = checkpoint_from_mlp(p, 123, "{\"note\":\"x\"}");

  std::string j1 = checkpoint_to_json(c);
  Checkpoint c2 = checkpoint_from_json(j1);
  CHECK(checkpoint_to_json(c2) == j1);       // save -> load -> save, same bytes
  CHECK(c2.step == 123);
  MlpParams p2 = mlp_from_checkpoint(c2);
  CHECK(p2.w.values() == p.w.values());
  CHECK(p2.a.values() == p.a.values());

  auto bytes = checkpoint_to_binary(c);
  Checkpoint c3 = checkpoint_from_binary(bytes);
  CHECK(checkpoint_to_binary(c3) == bytes);
  CHECK(c3.step == 123);
  CHECK(mlp_from_checkpoint(c3).w.values() == p.w.values());

  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  CHECK_THROWS_WITH_AS(
      (void)checkpoint_from_binary(truncated),
      doctest::Contains("corrupt payload"), std::runtime_error);

  TransformerConfig tc;
  tc.layers = 1;
  tc.heads = 1;
  tc.head_dim = 4;
  tc.vocab = 5;
  tc.max_len = 4;
  TransformerParams tp = init_transformer(tc, rng);
  Checkpoint ct = checkpoint_from_transformer(tp, 7);
  TransformerParams tp2 = transformer_from_checkpoint(checkpoint_from_binary(checkpoint_to_binary(ct)));
  CHECK(tp2.tok_emb.values() == tp.tok_emb.values());
  CHECK(tp2.layers[0].w1.values() == tp.layers[0].w1.values());
}

TEST_CASE("training determinism: same seed, same bytes") {
  ParitySpec spec = ParitySpec::first_k(10, 3);
  auto run = [&]() {
    Rng rng(55);
    MlpParams init = init_mlp_symmetric(32, 10, 3, rng);
    TwoStageConfig cfg;
    cfg.t1 = 1;
    cfg.t2 = 500;
    cfg.eta1 = 32 / (3 * std::abs(maj_fourier(10, 2)));
    cfg.b1 = 256;
    cfg.eta2 = 0.05;
    cfg.b2 = 4;
    Rng tr(66);
    return train_two_stage(cfg, spec, targets_from_labels(spec), std::move(init), tr);
  };
  TwoStageResult r1 = run();
  TwoStageResult r2 = run();
  CHECK(r1.params.w.values() == r2.params.w.values());
  CHECK(r1.params.a.values() == r2.params.a.values());
}
