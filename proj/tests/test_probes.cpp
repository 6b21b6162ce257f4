#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "distillab/nt_probe.hpp"
#include "distillab/probes.hpp"

using namespace distillab;

TEST_CASE("tv distance") {
  CHECK(tv_distance({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0));
  CHECK(tv_distance({0.3, 0.7}, {0.3, 0.7}) == doctest::Approx(0.0));
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    auto draw = [&]() {
      std::vector<double> p{rng.uniform(), rng.uniform(), rng.uniform()};
      double s = p[0] + p[1] + p[2];
      for (auto& v : p) v /= s;
      return p;
    };
    auto p = draw(), q = draw(), r = draw();
    CHECK(tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12);
    CHECK(tv_distance(p, q) >= 0.0);
    CHECK(tv_distance(p, q) <= 1.0);
  }
  CHECK_THROWS(tv_distance({1.0}, {0.5, 0.5}));
}

TEST_CASE("majority fourier coefficients") {
  // zero at even sizes (odd d), exactly
  for (int s : {2, 4, 6}) CHECK(maj_fourier(7, s) == 0.0);
  CHECK(maj_fourier(3, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(maj_fourier(5, 1) == doctest::Approx(0.375).epsilon(1e-12));
  // closed form agrees with full enumeration, including even d (ties -> +1)
  for (int d : {3, 5, 8, 11, 12}) {
    for (int s = 1; s <= d; ++s) {
      CHECK(std::abs(maj_fourier(d, s) - maj_fourier_enum(d, s)) <= 1e-12);
    }
  }
  CHECK_THROWS(maj_fourier(60, 1));
  CHECK_THROWS(maj_fourier_enum(26, 1));
}

TEST_CASE("monomial correlations") {
  // constant model: orthogonality kills every nonempty subset
  BatchProbFn half = [](const double*, int n, double* out) {
    for (int i = 0; i < n; ++i) out[i] = 0.5;
  };
  Rng rng(3);
  std::vector<std::vector<int>> subsets{{0}, {3}, {1, 2}, {0, 1, 2}};
  auto corr = monomial_correlations(half, 8, subsets, rng);
  for (const auto& c : corr) {
    CHECK(c.exact);
    CHECK(c.value == doctest::Approx(0.0).epsilon(1e-14));
  }
  // p1(x) = (1 + x3) / 2
  BatchProbFn x3 = [](const double* xs, int n, double* out) {
    for (int i = 0; i < n; ++i) out[i] = 0.5 * (1.0 + xs[static_cast<size_t>(i) * 8 + 3]);
  };
  auto corr2 = monomial_correlations(x3, 8, subsets, rng);
  CHECK(corr2[0].value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(corr2[1].value == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(corr2[2].value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS(monomial_correlations(half, 8, {{}}, rng));

  // Monte-Carlo path reports a standard error
  auto mc = monomial_correlations(x3, 8, {{3}}, rng, 4, 20000);
  CHECK_FALSE(mc[0].exact);
  CHECK(std::abs(mc[0].value - 0.5) <= 5.0 * mc[0].std_error + 1e-3);
}

TEST_CASE("parseval over the full spectrum") {
  Rng rng(5);
  const int d = 8;
  MlpParams p = init_mlp_symmetric(16, d, 4, rng);
  for (int64_t i = 0; i < p.w.size(); ++i) p.w.data()[i] += 0.5 * rng.normal();
  for (int64_t i = 0; i < p.a.size(); ++i) p.a.data()[i] += 0.2 * rng.normal();
  BatchProbFn p1 = [&](const double* xs, int n, double* out) { mlp_eval_p1(p, xs, n, out); };
  auto spectrum = fourier_spectrum(p1, d);
  double coeff_sq = 0.0;
  for (double c : spectrum) coeff_sq += c * c;
  // E[p1^2] by direct enumeration
  int64_t total = int64_t{1} << d;
  std::vector<double> xs(static_cast<size_t>(total) * d);
  for (int64_t b = 0; b < total; ++b)
    for (int j = 0; j < d; ++j)
      xs[static_cast<size_t>(b * d + j)] = (b >> j) & 1 ? 1.0 : -1.0;
  std::vector<double> vals(static_cast<size_t>(total));
  p1(xs.data(), static_cast<int>(total), vals.data());
  double mean_sq = 0.0;
  for (double v : vals) mean_sq += v * v;
  mean_sq /= static_cast<double>(total);
  CHECK(std::abs(coeff_sq - mean_sq) <= 1e-10);
}

TEST_CASE("gradient formula oracle") {
  // d in {5, 8, 11}: enumerated population gradient vs closed form
  Rng rng(7);
  for (int d : {5, 8, 11}) {
    ParitySpec spec = ParitySpec::first_k(d, 2);
    for (int trial = 0; trial < 33; ++trial) {
      Rng init_rng = rng.fork(static_cast<uint64_t>(d * 100 + trial));
      MlpParams p = init_mlp_symmetric(4, d, 2, init_rng);
      for (int neuron : {0, 3}) {
        for (int coord = 0; coord < d; ++coord) {
          auto res = verify_claim_gradient(spec, p, neuron, coord);
          CHECK(std::abs(res.enumerated - res.closed_form) <= 1e-10);
        }
      }
    }
  }
  // in/off-support gradient gap is governed by |zeta_{k-1}| - |zeta_{k+1}| > 0
  CHECK(std::abs(maj_fourier(5, 1)) - std::abs(maj_fourier(5, 3)) > 0.0);
  // flipping the output weight negates both routes
  ParitySpec spec5 = ParitySpec::first_k(5, 2);
  Rng r2(9);
  MlpParams p = init_mlp_symmetric(4, 5, 2, r2);
  auto before = verify_claim_gradient(spec5, p, 0, 1);
  p.a.data()[0] = -p.a.data()[0];
  auto after = verify_claim_gradient(spec5, p, 0, 1);
  CHECK(after.enumerated == doctest::Approx(-before.enumerated).epsilon(1e-14));
  CHECK(after.closed_form == doctest::Approx(-before.closed_form).epsilon(1e-14));
  CHECK_THROWS(verify_claim_gradient(ParitySpec::first_k(5, 1), p, 0, 0));
}

TEST_CASE("support correlations of a trained first stage") {
  // Run one exact-population stage-1 step and check the separation the
  // theory promises for the resulting teacher.
  const int d = 15, k = 4, m = 1024;
  ParitySpec spec = ParitySpec::first_k(d, k);
  Rng rng(13);
  MlpParams init = init_mlp_symmetric(m, d, k, rng);
  {
    BatchScoreFn zero = [&](const double* xs, int n, double* out) {
      mlp_eval_scalar(init, xs, n, out);
    };
    Rng cr(1);
    auto corr0 = support_correlations(zero, d, cr);
    for (double c : corr0) CHECK(std::abs(c) <= 1e-12);  // zero function
  }
  TwoStageConfig cfg;
  cfg.t1 = 1;
  cfg.t2 = 0;
  cfg.eta1 = 0.0;  // auto schedule
  cfg.lambda1 = 1.0;
  cfg.b1 = 0;
  Rng tr(3);
  TwoStageResult res = train_two_stage(cfg, spec, targets_from_labels(spec), init.clone(), tr);
  BatchScoreFn f = [&](const double* xs, int n, double* out) {
    mlp_eval_scalar(res.params, xs, n, out);
  };
  Rng cr(2);
  auto corr = support_correlations(f, d, cr);
  // With the output weights frozen at their random initialization, the
  // per-coordinate correlation signs are incoherent across neurons; the
  // support reveals itself through the magnitude distribution.
  double sum_in = 0.0, sum_off = 0.0;
  double norm_bound = 0.0;
  for (int j = 0; j < d; ++j) {
    double v = std::abs(corr[static_cast<size_t>(j)]);
    norm_bound = std::max(norm_bound, v);
    if (j < k)
      sum_in += v;
    else
      sum_off += v;
  }
  double mean_in = sum_in / k, mean_off = sum_off / (d - k);
  CHECK(mean_in > 2.0 * mean_off);
  // |E[f Maj x_i]| <= E|f| <= sup|f|; crude sanity against the sup over a sample
  Rng xr(4);
  std::vector<double> xs(64 * d);
  xr.sign_vector(xs.data(), 64 * d);
  std::vector<double> fv(64);
  mlp_eval_scalar(res.params, xs.data(), 64, fv.data());
  double sup = 0.0;
  for (double v : fv) sup = std::max(sup, std::abs(v));
  CHECK(norm_bound <= sup + 1e-9);
}

TEST_CASE("context measures on a context-blind model") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.head_dim = 4;
  cfg.vocab = 6;
  cfg.max_len = 12;
  Rng rng(17);
  TransformerParams params = init_transformer(cfg, rng);
  // zero embeddings: every input yields the same per-position activations
  std::fill(params.tok_emb.data(), params.tok_emb.data() + params.tok_emb.size(), 0.0);
  std::fill(params.pos_emb.data(), params.pos_emb.data() + params.pos_emb.size(), 0.0);
  MaskedLm lm{&params, TokenVocab{3}};
  std::vector<int> tokens{0, 1, 2, 1, 0, 2, 1, 0};
  for (int n : {1, 3, 5}) {
    CHECK(m_robust(lm, tokens, 3, n, ContextMode::kBidirectional) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m_close(lm, tokens, 3, n, ContextMode::kBidirectional) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("context measure edge cases") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.vocab = 6;
  cfg.max_len = 12;
  Rng rng(19);
  TransformerParams params = init_transformer(cfg, rng);
  MaskedLm lm{&params, TokenVocab{3}};
  std::vector<int> tokens{0, 1, 2, 1, 0, 2};
  // n = 1: the two masked sets coincide
  CHECK(m_robust(lm, tokens, 2, 1, ContextMode::kBidirectional) == 0.0);
  // window covering the whole sentence: identical visible sets
  CHECK(m_close(lm, tokens, 2, 99, ContextMode::kBidirectional) == 0.0);
  CHECK_THROWS(m_robust(lm, tokens, 0, 3, ContextMode::kAutoregressive));
  CHECK(m_robust(lm, tokens, 3, 2, ContextMode::kAutoregressive) == 0.0);  // keeps i-1
  // all measures stay in [0, 1]
  CHECK(m_close(lm, tokens, 4, 3, ContextMode::kAutoregressive) >= 0.0);
  CHECK(m_close(lm, tokens, 4, 3, ContextMode::kAutoregressive) <= 1.0);
}

TEST_CASE("causal transformer checkpoints work with the causal measures") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.head_dim = 4;
  cfg.vocab = 6;
  cfg.max_len = 12;
  cfg.causal = true;
  Rng rng(23);
  TransformerParams params = init_transformer(cfg, rng);
  MaskedLm lm{&params, TokenVocab{3}};
  std::vector<int> tokens{2, 0, 1, 1, 2, 0, 1};
  double r = m_robust(lm, tokens, 5, 4, ContextMode::kAutoregressive);
  double c = m_close(lm, tokens, 5, 4, ContextMode::kAutoregressive);
  CHECK(r >= 0.0);
  CHECK(r <= 1.0);
  CHECK(c >= 0.0);
  CHECK(c <= 1.0);
}

TEST_CASE("percentile") {
  CHECK(percentile({3.0, 1.0, 2.0}, 0.5) == doctest::Approx(2.0));
  CHECK(percentile({1.0, 2.0}, 0.5) == doctest::Approx(1.5));
  CHECK(percentile({5.0}, 0.9) == doctest::Approx(5.0));
}

TEST_CASE("transition detection") {
  {
    // step function 1 -> 0 at step s
    std::vector<std::pair<int64_t, double>> series;
    for (int64_t t = 0; t <= 10; ++t) series.emplace_back(t, t < 6 ? 1.0 : 0.0);
    auto res = detect_transition(series, 1);
    REQUIRE(res.found);
    CHECK(res.c1 == 6);
    CHECK(res.segment_start == 6);
    CHECK(res.segment_end == 6);
  }
  {
    // monotone linear: constant derivative, flagged as no transition
    std::vector<std::pair<int64_t, double>> series;
    for (int64_t t = 0; t <= 10; ++t) series.emplace_back(t, 0.1 * static_cast<double>(t));
    CHECK_FALSE(detect_transition(series, 1).found);
  }
  {
    std::vector<std::pair<int64_t, double>> series;
    for (int64_t t = 0; t <= 10; ++t) series.emplace_back(t, 0.25);
    CHECK_FALSE(detect_transition(series, 1).found);
  }
  {
    // plateau, rise, plateau: midpoint lands inside the rise
    std::vector<std::pair<int64_t, double>> series;
    for (int64_t t = 0; t <= 40; ++t) {
      double v = t < 20 ? 0.5 : (t < 26 ? 0.5 + 0.08 * static_cast<double>(t - 20) : 0.98);
      series.emplace_back(t * 100, v);
    }
    auto res = detect_transition(series, 3);
    REQUIRE(res.found);
    CHECK(res.c1 >= 2000);
    CHECK(res.c1 <= 2600);
  }
  CHECK_THROWS(detect_transition({{0, 1.0}, {1, 0.5}}, 1));
}

TEST_CASE("nt probe learns planted structure") {
  Rng rng(29);
  const int len = 8, classes = 3, dim = 5;
  auto make_data = [&](bool planted, int count) {
    std::vector<NtProbeExample> out;
    for (int e = 0; e < count; ++e) {
      NtProbeExample ex;
      ex.len = len;
      ex.embeddings.resize(static_cast<size_t>(len) * dim);
      for (auto& v : ex.embeddings) v = 0.3 * rng.normal();
      for (int pos : {2, 5}) {
        int cls = static_cast<int>(rng.below(classes));
        if (planted)
          ex.embeddings[static_cast<size_t>(pos) * dim + cls] = 3.0;
        ex.labels.emplace_back(pos, cls);
      }
      out.push_back(std::move(ex));
    }
    return out;
  };
  {
    auto train = make_data(true, 300);
    auto eval = make_data(true, 120);
    NtProbeTrainConfig cfg;
    cfg.heads = 1;
    cfg.epochs = 40;
    cfg.lr = 2e-2;
    Rng pr(31);
    NtProbe probe = train_nt_probe(train, dim, classes, len, cfg, pr);
    // attention rows are probability vectors
    for (int i = 0; i < len; ++i) {
      auto row = probe.attention_row(0, i, len);
      double sum = 0.0;
      for (double v : row) sum += v;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    CHECK(eval_nt_probe(probe, eval) >= 0.99);
  }
  {
    // information-free embeddings: majority-class accuracy at best
    auto train = make_data(false, 300);
    auto eval = make_data(false, 120);
    NtProbeTrainConfig cfg;
    cfg.heads = 2;
    cfg.epochs = 15;
    Rng pr(37);
    NtProbe probe = train_nt_probe(train, dim, classes, len, cfg, pr);
    double acc = eval_nt_probe(probe, eval);
    // majority baseline for three roughly balanced classes
    std::vector<int> counts(classes, 0);
    for (const auto& ex : eval)
      for (auto& [p, c] : ex.labels) ++counts[static_cast<size_t>(c)];
    int total = 0, top = 0;
    for (int c : counts) {
      total += c;
      top = std::max(top, c);
    }
    double majority = static_cast<double>(top) / total;
    CHECK(acc <= majority + 0.05);
  }
  CHECK_THROWS(train_nt_probe({}, dim, classes, len, {}, rng));
}
