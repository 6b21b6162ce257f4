#include "distillab/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "distillab/optim.hpp"
#include "distillab/probes.hpp"

namespace distillab {

MlpParams MlpParams::clone() const {
  MlpParams c;
  c.w = w.clone();
  c.b = b.clone();
  c.a = a.clone();
  c.output = output;
  c.classes = classes;
  return c;
}

MlpParams init_mlp_symmetric(int m, int d, int k, Rng& rng, MlpOutput output, int classes) {
  if (m % 2 != 0)
    throw std::invalid_argument("init_mlp_symmetric: width must be even, got " +
                                std::to_string(m));
  if (k < 1) throw std::invalid_argument("init_mlp_symmetric: k must be >= 1");
  MlpParams p;
  p.output = output;
  p.classes = output == MlpOutput::kLogits ? classes : 2;
  p.w = Tensor({m, d}, true);
  p.b = Tensor({m}, true);
  int half = m / 2;
  double* w = p.w.data();
  double* b = p.b.data();
  for (int i = 0; i < half; ++i) {
    rng.sign_vector(w + static_cast<size_t>(i) * d, d);
    // grid {-1+1/k, -1+3/k, ..., 1-1/k} has k points with spacing 2/k
    int slot = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
    b[i] = -1.0 + (2.0 * slot + 1.0) / k;
  }
  for (int i = 0; i < half; ++i) {
    std::copy(w + static_cast<size_t>(i) * d, w + static_cast<size_t>(i + 1) * d,
              w + static_cast<size_t>(i + half) * d);
    b[i + half] = b[i];
  }
  double unit = 1.0 / m;
  if (output == MlpOutput::kLogits) {
    p.a = Tensor({p.classes, m}, true);
    double* a = p.a.data();
    for (int c = 0; c < p.classes; ++c)
      for (int i = 0; i < half; ++i) {
        double v = rng.sign() * unit;
        a[static_cast<size_t>(c) * m + i] = v;
        a[static_cast<size_t>(c) * m + i + half] = -v;
      }
  } else {
    p.a = Tensor({m}, true);
    double* a = p.a.data();
    for (int i = 0; i < half; ++i) {
      double v = rng.sign() * unit;
      a[i] = v;
      a[i + half] = -v;
    }
  }
  return p;
}

Tensor mlp_forward(Tape& tape, const MlpParams& p, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != p.input_dim())
    tensor_error("mlp_forward", "expected [B," + std::to_string(p.input_dim()) +
                                    "], got " + shape_str(x.shape()));
  Tensor pre = tape.add(tape.matmul_nt(x, p.w), p.b);
  Tensor h = tape.relu(pre);  // [B, m]
  switch (p.output) {
    case MlpOutput::kScalar: {
      Tensor f = tape.matmul_nt(h, tape.reshape(p.a, {1, p.width()}));  // [B,1]
      return tape.reshape(f, {x.dim(0)});
    }
    case MlpOutput::kTwoLogit: {
      Tensor f = tape.matmul_nt(h, tape.reshape(p.a, {1, p.width()}));  // [B,1]
      return tape.concat({f, tape.scale(f, -1.0)}, 1);                  // [B,2]
    }
    case MlpOutput::kLogits:
      return tape.matmul_nt(h, p.a);  // [B,C]
  }
  tensor_error("mlp_forward", "unreachable output mode");
}

void mlp_eval_scalar(const MlpParams& p, const double* xs, int batch, double* out) {
  int m = p.width(), d = p.input_dim();
  const double* w = p.w.data();
  const double* b = p.b.data();
  const double* a = p.a.data();
  int half = m % 2 == 0 ? m / 2 : 0;
  std::vector<double> act(static_cast<size_t>(m));
  for (int s = 0; s < batch; ++s) {
    const double* x = xs + static_cast<size_t>(s) * d;
    for (int i = 0; i < m; ++i) {
      const double* wi = w + static_cast<size_t>(i) * d;
      double z = b[i];
      for (int j = 0; j < d; ++j) z += wi[j] * x[j];
      act[static_cast<size_t>(i)] = z > 0.0 ? a[i] * z : 0.0;
    }
    // Mirror-paired accumulation: at symmetric initialization each pair
    // cancels exactly, so the sum is an exact zero.
    double f = 0.0;
    if (half > 0) {
      for (int i = 0; i < half; ++i)
        f += act[static_cast<size_t>(i)] + act[static_cast<size_t>(i + half)];
    } else {
      for (int i = 0; i < m; ++i) f += act[static_cast<size_t>(i)];
    }
    out[s] = f;
  }
}

void mlp_eval_logits(const MlpParams& p, const double* xs, int batch, double* out) {
  int m = p.width(), d = p.input_dim();
  int C = p.classes;
  if (p.output != MlpOutput::kLogits) {
    std::vector<double> f(static_cast<size_t>(batch));
    mlp_eval_scalar(p, xs, batch, f.data());
    for (int s = 0; s < batch; ++s) {
      out[static_cast<size_t>(s) * 2] = f[static_cast<size_t>(s)];
      out[static_cast<size_t>(s) * 2 + 1] = -f[static_cast<size_t>(s)];
    }
    return;
  }
  const double* w = p.w.data();
  const double* b = p.b.data();
  const double* a = p.a.data();
  std::vector<double> h(static_cast<size_t>(m));
  for (int s = 0; s < batch; ++s) {
    const double* x = xs + static_cast<size_t>(s) * d;
    for (int i = 0; i < m; ++i) {
      const double* wi = w + static_cast<size_t>(i) * d;
      double z = b[i];
      for (int j = 0; j < d; ++j) z += wi[j] * x[j];
      h[static_cast<size_t>(i)] = z > 0.0 ? z : 0.0;
    }
    double* o = out + static_cast<size_t>(s) * C;
    int half = m % 2 == 0 ? m / 2 : 0;
    for (int c = 0; c < C; ++c) {
      const double* ac = a + static_cast<size_t>(c) * m;
      double z = 0.0;
      if (half > 0) {
        for (int i = 0; i < half; ++i)
          z += ac[i] * h[static_cast<size_t>(i)] + ac[i + half] * h[static_cast<size_t>(i + half)];
      } else {
        for (int i = 0; i < m; ++i) z += ac[i] * h[static_cast<size_t>(i)];
      }
      o[c] = z;
    }
  }
}

void mlp_eval_p1(const MlpParams& p, const double* xs, int batch, double* out) {
  int C = p.classes;
  std::vector<double> logits(static_cast<size_t>(batch) * C);
  mlp_eval_logits(p, xs, batch, logits.data());
  for (int s = 0; s < batch; ++s) {
    const double* z = logits.data() + static_cast<size_t>(s) * C;
    double m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(z[c] - m);
    out[s] = std::exp(z[0] - m) / sum;
  }
}

ScalarTargetFn targets_from_labels(const ParitySpec& spec) {
  return [spec](const double* xs, int batch, double* targets) {
    for (int s = 0; s < batch; ++s)
      targets[s] = parity_sign(parity_label(spec, xs + static_cast<size_t>(s) * spec.d, spec.d));
  };
}

ScalarTargetFn targets_from_teacher(const MlpParams& teacher) {
  if (teacher.output == MlpOutput::kLogits)
    throw std::invalid_argument("targets_from_teacher: teacher must have a scalar head");
  return [teacher](const double* xs, int batch, double* targets) {
    mlp_eval_scalar(teacher, xs, batch, targets);
  };
}

namespace {

// Mean hinge loss over the batch through the tape; targets enter as
// constants.
Tensor hinge_loss(Tape& tape, const MlpParams& p, const Tensor& x,
                  const std::vector<double>& targets) {
  Tensor f = mlp_forward(tape, p, x);  // [B] scalar mode
  Tensor t = tape.constant({x.dim(0)}, targets);
  Tensor margin = tape.relu(tape.add_scalar(tape.scale(tape.mul(f, t), -1.0), 1.0));
  return tape.mean(margin);
}

// One decayed gradient step on a single tensor: v <- (1-lambda)v - eta*g.
void decayed_step(Tensor& v, double eta, double lambda) {
  double* w = v.data();
  const double* g = v.grad();
  for (int64_t i = 0; i < v.size(); ++i) w[i] = (1.0 - lambda) * w[i] - eta * g[i];
}

// Average gradient of the hinge loss over the full cube {+-1}^d, chunked.
double population_pass(const MlpParams& p, const ParitySpec& spec,
                       const ScalarTargetFn& targets) {
  int d = spec.d;
  int64_t total = int64_t{1} << d;
  const int64_t chunk = 4096;
  std::vector<double> xs(static_cast<size_t>(chunk) * d);
  std::vector<double> ts(static_cast<size_t>(chunk));
  double loss_sum = 0.0;
  for (int64_t base = 0; base < total; base += chunk) {
    int64_t n = std::min(chunk, total - base);
    for (int64_t s = 0; s < n; ++s) {
      int64_t bits = base + s;
      for (int j = 0; j < d; ++j)
        xs[static_cast<size_t>(s * d + j)] = (bits >> j) & 1 ? 1.0 : -1.0;
    }
    targets(xs.data(), static_cast<int>(n), ts.data());
    Tape tape;
    Tensor x = tape.constant({static_cast<int>(n), d},
                             std::vector<double>(xs.begin(), xs.begin() + n * d));
    Tensor f = mlp_forward(tape, p, x);
    Tensor t = tape.constant({static_cast<int>(n)},
                             std::vector<double>(ts.begin(), ts.begin() + n));
    Tensor margin = tape.relu(tape.add_scalar(tape.scale(tape.mul(f, t), -1.0), 1.0));
    // Scale by chunk mass so grads accumulate to the population mean.
    Tensor partial = tape.scale(tape.sum(margin), 1.0 / static_cast<double>(total));
    loss_sum += partial.item();
    tape.backward(partial);
  }
  return loss_sum;
}

}  // namespace

double mlp_eval_accuracy(const MlpParams& p, const ParitySpec& spec, Rng& rng, int samples) {
  std::vector<double> xs(static_cast<size_t>(samples) * spec.d);
  std::vector<int> ys(static_cast<size_t>(samples));
  sample_batch_flat(spec, rng, samples, xs.data(), ys.data());
  std::vector<double> f(static_cast<size_t>(samples));
  mlp_eval_scalar(p, xs.data(), samples, f.data());
  int correct = 0;
  for (int s = 0; s < samples; ++s) {
    int pred = f[static_cast<size_t>(s)] > 0.0 ? 1 : 2;
    if (pred == ys[static_cast<size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / samples;
}

TwoStageResult train_two_stage(const TwoStageConfig& cfg_in, const ParitySpec& spec,
                               const ScalarTargetFn& targets, MlpParams init, Rng& rng) {
  if (init.output == MlpOutput::kLogits)
    throw std::invalid_argument("train_two_stage: requires a scalar-head model");
  TwoStageConfig cfg = cfg_in;
  if (cfg.eta1 <= 0.0) {
    // Schedule eta1 = m / (k |zeta_{k-1}|); defined only for even k, where
    // the Majority coefficient at k-1 is nonzero.
    double zeta = maj_fourier(spec.d, spec.k - 1);
    if (zeta == 0.0)
      throw std::invalid_argument(
          "train_two_stage: eta1 auto-schedule needs even k (zeta_{k-1} != 0)");
    cfg.eta1 = init.width() / (spec.k * std::abs(zeta));
  }
  TwoStageResult result;
  result.params = std::move(init);
  MlpParams& p = result.params;
  int d = spec.d;
  Rng eval_rng = rng.fork(0x5eed);

  auto zero_all = [&]() {
    auto ps = p.parameters();
    zero_grads(ps);
  };
  auto maybe_checkpoint = [&](int64_t step) {
    for (int64_t c : cfg.checkpoint_steps)
      if (c == step) result.checkpoints.emplace(step, p.clone());
  };
  auto maybe_eval = [&](int64_t step) {
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      Rng r = eval_rng;
      result.eval_accuracy.emplace_back(step, mlp_eval_accuracy(p, spec, r, cfg.eval_samples));
    }
  };

  std::vector<double> xs, ts;
  double last_loss = 0.0;
  // Stage 1: first-layer weights only.
  for (int64_t t = 1; t <= cfg.t1; ++t) {
    zero_all();
    if (cfg.b1 <= 0) {
      last_loss = population_pass(p, spec, targets);
    } else {
      int n = static_cast<int>(cfg.b1);
      xs.resize(static_cast<size_t>(n) * d);
      ts.resize(static_cast<size_t>(n));
      for (int s = 0; s < n; ++s) rng.sign_vector(xs.data() + static_cast<size_t>(s) * d, d);
      targets(xs.data(), n, ts.data());
      Tape tape;
      Tensor x = tape.constant({n, d}, xs);
      Tensor loss = hinge_loss(tape, p, x, ts);
      last_loss = loss.item();
      tape.backward(loss);
    }
    decayed_step(p.w, cfg.eta1, cfg.lambda1);
    maybe_checkpoint(t);
    maybe_eval(t);
  }
  if (result.checkpoints.find(cfg.t1) == result.checkpoints.end())
    result.checkpoints.emplace(cfg.t1, p.clone());  // end-of-stage-1 checkpoint

  // Stage 2: output weights only.
  for (int64_t t = 1; t <= cfg.t2; ++t) {
    zero_all();
    int n = static_cast<int>(std::max<int64_t>(cfg.b2, 1));
    xs.resize(static_cast<size_t>(n) * d);
    ts.resize(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) rng.sign_vector(xs.data() + static_cast<size_t>(s) * d, d);
    targets(xs.data(), n, ts.data());
    Tape tape;
    Tensor x = tape.constant({n, d}, xs);
    Tensor loss = hinge_loss(tape, p, x, ts);
    last_loss = loss.item();
    tape.backward(loss);
    decayed_step(p.a, cfg.eta2, cfg.lambda2);
    maybe_checkpoint(cfg.t1 + t);
    maybe_eval(cfg.t1 + t);
  }
  result.final_loss = last_loss;
  return result;
}

}  // namespace distillab

#include <json.hpp>

namespace distillab {

Checkpoint checkpoint_from_mlp(const MlpParams& p, int64_t step, const std::string& meta_json) {
  Checkpoint c;
  c.kind = "mlp";
  c.step = step;
  nlohmann::json meta = nlohmann::json::parse(meta_json);
  switch (p.output) {
    case MlpOutput::kScalar: meta["output"] = "scalar"; break;
    case MlpOutput::kTwoLogit: meta["output"] = "two_logit"; break;
    case MlpOutput::kLogits: meta["output"] = "logits"; break;
  }
  meta["classes"] = p.classes;
  c.meta_json = meta.dump();
  c.tensors.emplace_back("w", p.w);
  c.tensors.emplace_back("b", p.b);
  c.tensors.emplace_back("a", p.a);
  return c;
}

MlpParams mlp_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "mlp") throw std::runtime_error("checkpoint kind '" + c.kind + "' is not an mlp");
  nlohmann::json meta = nlohmann::json::parse(c.meta_json);
  MlpParams p;
  std::string output = meta.at("output").get<std::string>();
  p.output = output == "scalar" ? MlpOutput::kScalar
             : output == "two_logit" ? MlpOutput::kTwoLogit
                                     : MlpOutput::kLogits;
  p.classes = meta.at("classes").get<int>();
  auto as_param = [](const Tensor& t) {
    Tensor out(t.shape(), true);
    std::copy(t.data(), t.data() + t.size(), out.data());
    return out;
  };
  p.w = as_param(c.tensor("w"));
  p.b = as_param(c.tensor("b"));
  p.a = as_param(c.tensor("a"));
  return p;
}

}  // namespace distillab
