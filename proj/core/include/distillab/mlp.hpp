#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "distillab/boolean_tasks.hpp"
#include "distillab/rng.hpp"
#include "distillab/tensor.hpp"

namespace distillab {

// kScalar: f(x) = sum_i a_i relu(<w_i, x> + b_i).
// kTwoLogit: same head read as the logit pair (f, -f).
// kLogits: full output matrix, f_c(x) = sum_i A_{c,i} relu(...).
enum class MlpOutput { kScalar, kTwoLogit, kLogits };

struct MlpParams {
  Tensor w;  // [m, d]
  Tensor b;  // [m]
  Tensor a;  // [m], or [C, m] in kLogits mode
  MlpOutput output = MlpOutput::kScalar;
  int classes = 2;

  int width() const { return w.dim(0); }
  int input_dim() const { return w.dim(1); }
  std::vector<Tensor> parameters() const { return {w, b, a}; }
  MlpParams clone() const;
};

// Mirrored pairs: for i < m/2, w and b repeat and a flips sign, so the
// network is exactly the zero function at initialization. First-half draws:
// w ~ U({+-1}^d), b uniform on the grid {-1+1/k, -1+3/k, ..., 1-1/k},
// a ~ U({+-1/m}).
MlpParams init_mlp_symmetric(int m, int d, int k, Rng& rng,
                             MlpOutput output = MlpOutput::kScalar, int classes = 2);

// x: [B, d]. Returns [B] (scalar), [B, 2] (two-logit) or [B, C].
Tensor mlp_forward(Tape& tape, const MlpParams& p, const Tensor& x);

// Straight-line evaluation without the tape; out has B (scalar mode) or
// B*classes entries.
void mlp_eval_scalar(const MlpParams& p, const double* xs, int batch, double* out);
void mlp_eval_logits(const MlpParams& p, const double* xs, int batch, double* out);

// P(class 1) as the paper's probability probes read it: softmax over the
// logit view, first coordinate.
void mlp_eval_p1(const MlpParams& p, const double* xs, int batch, double* out);

struct TwoStageConfig {
  int64_t t1 = 1;
  int64_t t2 = 0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  int64_t b1 = 0;  // 0 = exact population gradient over the whole cube
  int64_t b2 = 1;
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  int64_t eval_every = 0;
  int eval_samples = 4096;
  std::vector<int64_t> checkpoint_steps;  // measured in total steps from 0
};

// Scalar supervision target per input row: true +-1 labels or a frozen
// teacher's scalar output.
using ScalarTargetFn = std::function<void(const double* xs, int batch, double* targets)>;

ScalarTargetFn targets_from_labels(const ParitySpec& spec);
ScalarTargetFn targets_from_teacher(const MlpParams& teacher);

struct TwoStageResult {
  MlpParams params;
  std::map<int64_t, MlpParams> checkpoints;  // includes end of stage 1
  std::vector<std::pair<int64_t, double>> eval_accuracy;
  double final_loss = 0.0;
};

// Hinge-loss two-stage training: stage 1 updates only W, stage 2 updates
// only a, biases stay frozen. Stage updates apply weight decay as
// w <- (1-lambda)w - eta*grad, the form under which a single full-batch
// step from symmetric init lands on the +-1/(2k) weight profile.
TwoStageResult train_two_stage(const TwoStageConfig& cfg, const ParitySpec& spec,
                               const ScalarTargetFn& targets, MlpParams init, Rng& rng);

double mlp_eval_accuracy(const MlpParams& p, const ParitySpec& spec, Rng& rng, int samples);

}  // namespace distillab

#include "distillab/checkpoint.hpp"

namespace distillab {

Checkpoint checkpoint_from_mlp(const MlpParams& p, int64_t step,
                               const std::string& meta_json = "{}");
MlpParams mlp_from_checkpoint(const Checkpoint& c);

}  // namespace distillab
