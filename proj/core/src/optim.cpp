#include "distillab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace distillab {

void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay) {
  for (auto& p : params) {
    if (!p.tracked()) continue;
    double* w = p.data();
    const double* g = p.grad();
    for (int64_t i = 0; i < p.size(); ++i)
      w[i] -= lr * (g[i] + 2.0 * weight_decay * w[i]);
  }
}

Adam::Adam(const std::vector<Tensor>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
  }
}

void Adam::step(std::vector<Tensor>& params, double lr) {
  if (params.size() != m_.size())
    throw std::invalid_argument("adam: parameter count changed since construction");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t j = 0; j < params.size(); ++j) {
    auto& p = params[j];
    if (!p.tracked()) continue;
    double* w = p.data();
    const double* g = p.grad();
    double* m = m_[j].data();
    double* v = v_[j].data();
    for (int64_t i = 0; i < p.size(); ++i) {
      double gi = g[i] + 2.0 * cfg_.weight_decay * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

double cosine_lr(int64_t step, int64_t total, double peak, double floor, int64_t warmup) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total must be positive");
  if (warmup < 0 || warmup >= total)
    throw std::invalid_argument("cosine_lr: warmup must satisfy 0 <= warmup < total");
  if (step < warmup)
    return warmup == 0 ? peak : peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return floor;
  double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * progress));
}

}  // namespace distillab
