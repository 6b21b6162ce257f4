#include <benchmark/benchmark.h>

#include "distillab/grammar.hpp"
#include "distillab/mlp.hpp"
#include "distillab/optim.hpp"
#include "distillab/probes.hpp"
#include "distillab/tensor.hpp"
#include "distillab/transformer.hpp"

using namespace distillab;

static void BM_MatmulNT(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a({64, n}, true);
  Tensor b({n, n}, true);
  for (int64_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (int64_t i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(tape.matmul_nt(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 64 * n * n);
}
BENCHMARK(BM_MatmulNT)->Arg(64)->Arg(256)->Arg(1024);

static void BM_MlpOnlineStep(benchmark::State& state) {
  int m = static_cast<int>(state.range(0));
  const int d = 20;
  Rng rng(2);
  MlpParams p = init_mlp_symmetric(m, d, 4, rng);
  std::vector<double> x(d);
  rng.sign_vector(x.data(), d);
  auto params = p.parameters();
  for (auto _ : state) {
    Tape tape;
    Tensor xs = tape.constant({1, d}, x);
    Tensor f = mlp_forward(tape, p, xs);
    Tensor loss = tape.mean(tape.relu(tape.add_scalar(tape.scale(f, -1.0), 1.0)));
    zero_grads(params);
    tape.backward(loss);
  }
}
BENCHMARK(BM_MlpOnlineStep)->Arg(64)->Arg(2048);

static void BM_TransformerForward(benchmark::State& state) {
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = static_cast<int>(state.range(0));
  cfg.head_dim = 8;
  cfg.vocab = 8;
  cfg.max_len = 33;
  Rng rng(3);
  TransformerParams p = init_transformer(cfg, rng);
  std::vector<int> toks(32 * 16);
  for (auto& t : toks) t = static_cast<int>(rng.below(8));
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(transformer_forward(tape, p, toks, 32, 16));
  }
}
BENCHMARK(BM_TransformerForward)->Arg(2)->Arg(4);

static void BM_SampleSentence(benchmark::State& state) {
  Grammar g = load_grammar(
      "root: S\nS -> A B [0.5]\nS -> B A [0.5]\nA -> a b [0.7]\nA -> b a [0.3]\n"
      "B -> b c [0.6]\nB -> c b [0.4]\n");
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(sample_sentence(g, rng));
}
BENCHMARK(BM_SampleSentence);

static void BM_MajFourier(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(maj_fourier(static_cast<int>(state.range(0)), 3));
}
BENCHMARK(BM_MajFourier)->Arg(21)->Arg(41);

BENCHMARK_MAIN();
