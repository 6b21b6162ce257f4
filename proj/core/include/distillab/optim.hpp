#pragma once

#include <cstdint>
#include <vector>

#include "distillab/tensor.hpp"

namespace distillab {

// w <- w - lr * (g + 2*weight_decay*w), the per-step form of an L2
// regularizer weight_decay*||w||^2 folded into the gradient.
void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay = 0.0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Tensor>& params, AdamConfig cfg = {});

  void step(std::vector<Tensor>& params, double lr);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

void zero_grads(std::vector<Tensor>& params);

// Linear warmup from 0 to peak over `warmup` steps, then cosine decay from
// peak to floor at step `total`.
double cosine_lr(int64_t step, int64_t total, double peak, double floor, int64_t warmup);

}  // namespace distillab
