#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "distillab/optim.hpp"
#include "distillab/rng.hpp"
#include "distillab/tensor.hpp"
#include "test_util.hpp"

using namespace distillab;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

// Scalarize an op output so grad_check can drive it: sum(out * weights).
Tensor weighted(Tape& tape, const Tensor& out, const std::vector<double>& w) {
  Tensor ww = tape.constant(out.shape(), w);
  return tape.sum(tape.mul(out, ww));
}

std::vector<double> random_weights(int64_t n, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.normal();
  return w;
}

}  // namespace

TEST_CASE("forward basics") {
  Tape tape;
  Tensor a = tape.constant({3}, {-1.0, 0.0, 2.0});
  Tensor r = tape.relu(a);
  CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});

  Tensor s = tape.softmax(tape.constant({2}, {0.0, 0.0}));
  CHECK(s.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(3);
  Tensor eye = tape.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m = random_tensor({3, 3}, rng, false);
  Tensor prod = tape.matmul(eye, m);
  for (int i = 0; i < 9; ++i) CHECK(prod.values()[i] == m.values()[i]);
}

TEST_CASE("softmax properties") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor z = random_tensor({4, 7}, rng, false, 3.0);
    Tensor y = tape.softmax(z);
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 7; ++c) sum += y.values()[static_cast<size_t>(r * 7 + c)];
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    // Shift invariance: adding a constant to the logits leaves softmax alone.
    double shift = rng.normal();
    Tensor y2 = tape.softmax(tape.add_scalar(z, shift));
    for (int64_t i = 0; i < y.size(); ++i)
      CHECK(std::abs(y.values()[static_cast<size_t>(i)] -
                     y2.values()[static_cast<size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("backward basics") {
  {
    Tape tape;
    Tensor x = Tensor({3}, {1.0, 2.0, 3.0}, true);
    Tensor loss = tape.sum(x);
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);
  }
  {
    // relu subgradient: 0 at negative inputs, and relu'(0) := 0.
    Tape tape;
    Tensor x = Tensor({2}, {-1.0, 2.0}, true);
    Tensor loss = tape.sum(tape.relu(x));
    tape.backward(loss);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }
  {
    Tape tape;
    Tensor x = Tensor({2}, {1.0, 2.0}, true);
    Tensor notscalar = tape.relu(x);
    CHECK_THROWS_AS(tape.backward(notscalar), std::invalid_argument);
  }
}

TEST_CASE("gradient checks for every primitive") {
  Rng rng(17);

  // add / sub / mul with broadcasting
  {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor c = random_tensor({4}, rng);
    auto w = random_weights(2 * 3 * 4, rng);
    auto build = [&](Tape& t) {
      return weighted(t, t.mul(t.sub(t.add(a, b), c), t.add(b, c)), w);
    };
    auto res = grad_check(build, {a, b, c});
    CHECK(res.max_rel <= 1e-6);
  }
  // matmul 2D + batched, matmul_nt
  {
    Tensor a = random_tensor({5, 3}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    auto w = random_weights(5 * 4, rng);
    auto build = [&](Tape& t) { return weighted(t, t.matmul(a, b), w); };
    CHECK(grad_check(build, {a, b}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({2, 2, 3, 2}, rng);
    Tensor b = random_tensor({2, 2, 2, 3}, rng);
    auto w = random_weights(2 * 2 * 3 * 3, rng);
    auto build = [&](Tape& t) { return weighted(t, t.matmul(a, b), w); };
    CHECK(grad_check(build, {a, b}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    auto w = random_weights(4 * 5, rng);
    auto build = [&](Tape& t) { return weighted(t, t.matmul_nt(a, b), w); };
    CHECK(grad_check(build, {a, b}).max_rel <= 1e-6);
  }
  // transpose + reshape + concat + select
  {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 3, 4}, rng);
    auto w = random_weights(3 * 2 * 4, rng);
    auto build = [&](Tape& t) {
      Tensor tr = t.transpose(a, 0, 1);  // [3,2,4]
      Tensor rs = t.reshape(t.transpose(b, 0, 1), {3, 2, 4});
      return weighted(t, t.add(tr, rs), w);
    };
    CHECK(grad_check(build, {a, b}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 2}, rng);
    auto w = random_weights(2 * 5, rng);
    auto build = [&](Tape& t) { return weighted(t, t.concat({a, b}, 1), w); };
    CHECK(grad_check(build, {a, b}).max_rel <= 1e-6);
    auto w2 = random_weights(3, rng);
    auto build2 = [&](Tape& t) { return weighted(t, t.select(a, 0, 1), w2); };
    CHECK(grad_check(build2, {a}).max_rel <= 1e-6);
  }
  // relu (inputs nudged away from 0), softmax with temperature, log_softmax
  {
    Tensor a = random_tensor({3, 5}, rng);
    auto w = random_weights(15, rng);
    auto build = [&](Tape& t) { return weighted(t, t.relu(a), w); };
    CHECK(grad_check(build, {a}).max_rel <= 1e-6);
    auto build_sm = [&](Tape& t) { return weighted(t, t.softmax(a, 2.37), w); };
    CHECK(grad_check(build_sm, {a}).max_rel <= 1e-6);
    auto build_ls = [&](Tape& t) { return weighted(t, t.log_softmax(a), w); };
    CHECK(grad_check(build_ls, {a}).max_rel <= 1e-6);
  }
  // embedding + gather_last + mean + masked_fill + layer_norm
  {
    Tensor table = random_tensor({6, 4}, rng);
    std::vector<int> ids = {0, 5, 2, 2, 1};
    auto w = random_weights(5 * 4, rng);
    auto build = [&](Tape& t) { return weighted(t, t.embedding(table, ids, {5}), w); };
    CHECK(grad_check(build, {table}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({4, 6}, rng);
    std::vector<int> ids = {1, 0, 5, 3};
    auto w = random_weights(4, rng);
    auto build = [&](Tape& t) { return weighted(t, t.gather_last(a, ids), w); };
    CHECK(grad_check(build, {a}).max_rel <= 1e-6);
    auto build_mean = [&](Tape& t) { return t.mean(t.mul(a, a)); };
    CHECK(grad_check(build_mean, {a}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor mask = Tensor({4}, {0.0, 1.0, 0.0, 1.0});
    auto w = random_weights(12, rng);
    auto build = [&](Tape& t) { return weighted(t, t.masked_fill(a, mask, -5.0), w); };
    CHECK(grad_check(build, {a}).max_rel <= 1e-6);
  }
  {
    Tensor a = random_tensor({3, 6}, rng);
    Tensor gamma = random_tensor({6}, rng);
    Tensor beta = random_tensor({6}, rng);
    auto w = random_weights(18, rng);
    auto build = [&](Tape& t) { return weighted(t, t.layer_norm(a, gamma, beta), w); };
    CHECK(grad_check(build, {a, gamma, beta}).max_rel <= 1e-5);
  }
}

TEST_CASE("sgd step") {
  {
    Tensor w = Tensor({2}, {1.0, -2.0}, true);
    std::vector<Tensor> params{w};
    sgd_step(params, 0.1, 0.0);  // zero grads: unchanged
    CHECK(w.values() == std::vector<double>{1.0, -2.0});
  }
  {
    Tensor w = Tensor({1}, {1.0}, true);
    w.grad()[0] = 1.0;
    std::vector<Tensor> params{w};
    sgd_step(params, 0.1, 0.0);
    CHECK(w.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
  }
  {
    // weight decay enters as 2*lambda*w
    Tensor w = Tensor({1}, {2.0}, true);
    std::vector<Tensor> params{w};
    sgd_step(params, 0.1, 0.5);
    CHECK(w.values()[0] == doctest::Approx(2.0 - 0.1 * 2.0 * 0.5 * 2.0).epsilon(1e-15));
  }
}

TEST_CASE("adam") {
  {
    Tensor w = Tensor({3}, {1.0, 2.0, 3.0}, true);
    std::vector<Tensor> params{w};
    Adam opt(params, {});
    for (int i = 0; i < 5; ++i) opt.step(params, 0.7);  // g = 0 throughout
    CHECK(w.values() == std::vector<double>{1.0, 2.0, 3.0});
  }
  {
    // bias-corrected first step moves by ~lr in the gradient direction
    Tensor w = Tensor({1}, {0.0}, true);
    w.grad()[0] = 1.0;
    std::vector<Tensor> params{w};
    Adam opt(params, {});
    opt.step(params, 1.0);
    CHECK(w.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  }
  {
    // bit-identical states across two engines fed the same gradients
    Rng rng_a(99), rng_b(99);
    Tensor wa = Tensor({4}, {0.1, 0.2, 0.3, 0.4}, true);
    Tensor wb = Tensor({4}, {0.1, 0.2, 0.3, 0.4}, true);
    std::vector<Tensor> pa{wa}, pb{wb};
    Adam oa(pa, {}), ob(pb, {});
    for (int step = 0; step < 100; ++step) {
      for (int i = 0; i < 4; ++i) {
        wa.grad()[i] = rng_a.normal();
        wb.grad()[i] = rng_b.normal();
      }
      oa.step(pa, 0.01);
      ob.step(pb, 0.01);
    }
    for (int i = 0; i < 4; ++i) CHECK(wa.values()[i] == wb.values()[i]);
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(10, 100, 0.5, 0.01, 10) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 0.5, 0.01, 10) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(cosine_lr(10 + 45, 100, 0.5, 0.0, 10) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cosine_lr(0, 100, 0.5, 0.0, 10) == 0.0);
  CHECK(cosine_lr(5, 100, 0.5, 0.0, 10) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS(cosine_lr(0, 0, 0.5, 0.0, 0));
}

TEST_CASE("rng determinism and helpers") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(7);
  int pos = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    if (r.sign() > 0) ++pos;
  CHECK(std::abs(pos / static_cast<double>(n) - 0.5) < 0.02);
  // forks are independent of parent consumption
  Rng p1(5), p2(5);
  p2.next_u64();
  CHECK(p1.fork(3).next_u64() == p2.fork(3).next_u64());
}
