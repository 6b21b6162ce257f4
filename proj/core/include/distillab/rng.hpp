#pragma once

#include <cstdint>
#include <vector>

namespace distillab {

// xoshiro256** seeded through splitmix64. All sampling helpers are
// hand-rolled so that a given seed produces the same stream on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, n), n > 0. Debiased by rejection.
  uint64_t below(uint64_t n);

  // +1 or -1 with equal probability.
  double sign();

  // Standard normal (Box-Muller, second draw cached).
  double normal();

  bool bernoulli(double p);

  // Fills out with +-1 entries.
  void sign_vector(double* out, int n);

  // Independent stream derived from the original seed; fork(k) is stable
  // regardless of how much the parent has been consumed.
  Rng fork(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace distillab
