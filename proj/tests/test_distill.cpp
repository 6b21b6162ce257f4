#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "distillab/distill.hpp"
#include "distillab/grammar.hpp"
#include "distillab/schedule.hpp"
#include "distillab/transformer.hpp"
#include "test_util.hpp"

using namespace distillab;

TEST_CASE("soften") {
  auto p = soften({0.0, 0.0}, 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  auto hard = soften({2.0, 1.0}, 1e-4);
  CHECK(hard == std::vector<double>{1.0, 0.0});
  // ties break to the lowest index
  auto tie = soften({3.0, 3.0, 1.0}, 1e-6);
  CHECK(tie == std::vector<double>{1.0, 0.0, 0.0});
  // shift invariance
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> zs{z[0] + 1.7, z[1] + 1.7, z[2] + 1.7};
    auto a = soften(z, 0.9);
    auto b = soften(zs, 0.9);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)]) <= 1e-12);
  }
  CHECK_THROWS(soften({1.0}, 0.0));
}

TEST_CASE("loss_ce") {
  Tape tape;
  {
    Tensor logits = tape.constant({1, 2}, {50.0, -50.0});
    CHECK(loss_ce(tape, logits, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  {
    Tensor logits = tape.constant({1, 2}, {0.3, 0.3});
    CHECK(loss_ce(tape, logits, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    // matches an independent -log-softmax evaluation
    Rng rng(8);
    std::vector<double> z{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    Tensor logits = tape.constant({1, 4}, z);
    double m = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - m);
    double expected = -(z[2] - m - std::log(lse));
    CHECK(std::abs(loss_ce(tape, logits, {2}).item() - expected) <= 1e-12);
  }
  CHECK_THROWS(loss_ce(tape, tape.constant({1, 2}, {0, 0}), {2}));
}

TEST_CASE("loss_dl") {
  Tape tape;
  {
    // student == teacher at tau=1 -> zero KL
    std::vector<double> z{0.4, -1.0, 0.2};
    Tensor s = tape.constant({1, 3}, z);
    CHECK(std::abs(loss_dl(tape, s, z, 1.0).item()) <= 1e-12);
  }
  {
    // hard-label reduction is *exact* for argmax gaps >= 1e-3
    Rng rng(5);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> tz{3.0 * rng.normal(), 3.0 * rng.normal()};
      if (std::abs(tz[0] - tz[1]) < 1e-3) tz[0] += tz[0] >= tz[1] ? 1e-3 : -1e-3;
      std::vector<double> sz{rng.normal(), rng.normal()};
      Tensor s = tape.constant({1, 2}, sz);
      double dl = loss_dl(tape, s, tz, 1e-4).item();
      int y = tz[0] >= tz[1] ? 0 : 1;
      double ce = loss_ce(tape, s, {y}).item();
      CHECK(dl == ce);
    }
  }
  {
    // strictly positive when the distributions differ
    Tensor s = tape.constant({1, 2}, {0.0, 0.0});
    CHECK(loss_dl(tape, s, {1.0, 0.0}, 1.0).item() > 0.0);
  }
  CHECK_THROWS(loss_dl(tape, tape.constant({1, 2}, {0, 0}), {1.0, 2.0, 3.0}, 1.0));
}

TEST_CASE("loss_hinge_mix") {
  Tape tape;
  {
    Tensor f = tape.constant({1}, {1.0});
    CHECK(loss_hinge_mix(tape, 1.0, f, {1.0}, {}).item() == doctest::Approx(0.0));
  }
  {
    Tensor f = tape.constant({1}, {0.0});
    CHECK(loss_hinge_mix(tape, 0.3, f, {1.0}, {5.0}).item() == doctest::Approx(1.0));
  }
  {
    Tensor f = tape.constant({1}, {2.0});
    CHECK(loss_hinge_mix(tape, 0.0, f, {}, {2.0}).item() == doctest::Approx(0.0));
  }
  CHECK_THROWS(loss_hinge_mix(tape, 1.5, tape.constant({1}, {0.0}), {1.0}, {}));
}

TEST_CASE("loss_masked") {
  Tape tape;
  // |M| = 1 reduces to the single-position cross entropy
  std::vector<double> z{0.5, -0.2, 0.1,   1.0, 0.0, -1.0};
  Tensor logits = tape.constant({1, 2, 3}, z);
  std::vector<int> tokens{2, 0};
  double single = loss_masked(tape, logits, tokens, {{1}}, SupervisionMode::kCrossEntropy).item();
  Tensor row = tape.constant({1, 3}, {1.0, 0.0, -1.0});
  CHECK(std::abs(single - loss_ce(tape, row, {0}).item()) <= 1e-12);

  // equals the unweighted average of per-position losses
  double both = loss_masked(tape, logits, tokens, {{0, 1}}, SupervisionMode::kCrossEntropy).item();
  Tensor row0 = tape.constant({1, 3}, {0.5, -0.2, 0.1});
  double expected = 0.5 * (loss_ce(tape, row0, {2}).item() + loss_ce(tape, row, {0}).item());
  CHECK(std::abs(both - expected) <= 1e-12);

  // perfect student -> zero loss
  std::vector<double> sharp{30.0, -30.0, -30.0, -30.0, 30.0, -30.0};
  Tensor sharp_logits = tape.constant({1, 2, 3}, sharp);
  CHECK(loss_masked(tape, sharp_logits, {0, 1}, {{0, 1}}, SupervisionMode::kCrossEntropy).item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS(loss_masked(tape, logits, tokens, {{}}, SupervisionMode::kCrossEntropy));
  CHECK_THROWS(loss_masked(tape, logits, tokens, {{0}}, SupervisionMode::kDistill));
}

TEST_CASE("level-boundary positions and loss") {
  // depth-4 uniform tree over 16 tokens
  Grammar g = load_grammar(
      "root: S\nS -> A A [1.0]\nA -> B B [1.0]\nB -> C C [1.0]\nC -> x y [1.0]\n");
  Rng rng(3);
  Sentence s = sample_sentence(g, rng);
  REQUIRE(s.tokens.size() == 16);
  REQUIRE(s.tree.depth == 4);

  // level 1 covers every token
  auto l1 = boundary_loss_positions(s.tree, 1, 16);
  CHECK(l1.size() == 16);
  // level 2 selects boundaries of nodes one level above the leaves (C here)
  auto l2 = boundary_loss_positions(s.tree, 2, 16);
  auto l3 = boundary_loss_positions(s.tree, 3, 16);
  CHECK(l2.size() == 8);
  CHECK(l3.size() == 4);
  // monotone containment: positions at level 2 contain those at level 3
  for (int p : l3) CHECK(std::find(l2.begin(), l2.end(), p) != l2.end());
  for (int p : l2) CHECK(std::find(l1.begin(), l1.end(), p) != l1.end());

  // level-1 loss equals the plain autoregressive loss; single-position lists
  // reduce to that position's loss
  Rng zr(7);
  int C = 3;
  std::vector<double> z(static_cast<size_t>(17 * C));
  for (auto& v : z) v = zr.normal();
  Tape tape;
  Tensor logits = tape.constant({1, 17, C}, z);
  double full = loss_level_boundary(tape, logits, s.tokens, 16, {l1},
                                    SupervisionMode::kCrossEntropy).item();
  double manual = 0.0;
  for (int i = 0; i < 16; ++i) {
    Tensor row = tape.constant({1, C}, std::vector<double>(z.begin() + i * C, z.begin() + (i + 1) * C));
    manual += loss_ce(tape, row, {s.tokens[static_cast<size_t>(i)]}).item();
  }
  CHECK(std::abs(full - manual / 16.0) <= 1e-12);

  int skipped = -1;
  double one = loss_level_boundary(tape, logits, s.tokens, 16, {{5}},
                                   SupervisionMode::kCrossEntropy, nullptr, 1.0, &skipped).item();
  CHECK(skipped == 0);
  Tensor row5 = tape.constant({1, C}, std::vector<double>(z.begin() + 5 * C, z.begin() + 6 * C));
  CHECK(std::abs(one - loss_ce(tape, row5, {s.tokens[5]}).item()) <= 1e-12);
}

TEST_CASE("losses are differentiable through the engine") {
  Rng rng(21);
  Tensor logits = testutil::random_tensor({3, 4}, rng);
  std::vector<double> tz(12);
  for (auto& v : tz) v = rng.normal();
  {
    auto build = [&](Tape& t) { return loss_ce(t, logits, {1, 3, 0}); };
    CHECK(testutil::grad_check(build, {logits}).max_rel <= 1e-6);
  }
  {
    auto build = [&](Tape& t) { return loss_dl(t, logits, tz, 0.7); };
    CHECK(testutil::grad_check(build, {logits}).max_rel <= 1e-6);
  }
  {
    auto build = [&](Tape& t) { return loss_dl(t, logits, tz, 1e-4); };
    CHECK(testutil::grad_check(build, {logits}).max_rel <= 1e-6);
  }
  {
    Tensor f = testutil::random_tensor({5}, rng);
    std::vector<double> y{1, -1, 1, 1, -1};
    std::vector<double> ft(5);
    for (auto& v : ft) v = rng.normal() + 2.1;  // keep margins off the hinge kink
    auto build = [&](Tape& t) { return loss_hinge_mix(t, 0.4, f, y, ft); };
    CHECK(testutil::grad_check(build, {f}).max_rel <= 1e-5);
  }
}

TEST_CASE("schedules") {
  // (N, T)-progressive: N-1 equally spaced intermediates plus the final
  std::vector<int64_t> steps{100, 200, 300, 400, 500, 600};
  TeacherSchedule s = schedule_n_t_progressive(steps, 3, 5);
  REQUIRE(s.checkpoint_ids.size() == 3);
  CHECK(steps[static_cast<size_t>(s.checkpoint_ids[0])] == 200);
  CHECK(steps[static_cast<size_t>(s.checkpoint_ids[1])] == 400);
  CHECK(s.checkpoint_ids[2] == 5);
  CHECK(teacher_at_step(s, 0) == 0);
  CHECK(teacher_at_step(s, 4) == 0);
  CHECK(teacher_at_step(s, 5) == 1);
  CHECK(teacher_at_step(s, 9) == 1);
  CHECK(teacher_at_step(s, 10) == 2);
  CHECK(teacher_at_step(s, 14) == 2);
  CHECK(teacher_at_step(s, 15) == 2);  // final persists
  CHECK(teacher_at_step(s, 100000) == 2);

  // one-shot is explicit([final], [0])
  TeacherSchedule os = schedule_one_shot(5);
  TeacherSchedule ex = schedule_explicit({5}, {0});
  for (int64_t t : {0, 1, 100})
    CHECK(teacher_at_step(os, t) == teacher_at_step(ex, t));

  // kappa split: kappa*T0/N steps per checkpoint
  TeacherSchedule ks = schedule_kappa_split({0, 1, 2, 3, 4, 5, 6, 7}, 0.5, 8000);
  for (int64_t d : ks.durations) CHECK(d == 500);
  CHECK_THROWS(schedule_kappa_split({0, 1}, 0.0, 100));
  CHECK_THROWS(schedule_kappa_split({0, 1}, 1.5, 100));
  CHECK_THROWS(schedule_n_t_progressive(steps, 7, 5));  // N exceeds checkpoints

  // coverage: time spent under each non-terminal checkpoint equals D_i
  TeacherSchedule cov = schedule_explicit({0, 1, 2}, {3, 4, 2});
  std::vector<int64_t> counts(3, 0);
  for (int64_t t = 0; t < 9; ++t) ++counts[static_cast<size_t>(teacher_at_step(cov, t))];
  CHECK(counts == std::vector<int64_t>{3, 4, 2});

  // two-shot
  TeacherSchedule ts = schedule_two_shot(2, 9, 7);
  CHECK(teacher_at_step(ts, 6) == 0);
  CHECK(teacher_at_step(ts, 7) == 1);
}
