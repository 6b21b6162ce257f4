#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "distillab/grammar.hpp"
#include "distillab/tensor.hpp"

namespace distillab {

// Teacher temperatures at or below this threshold are treated as exact
// one-hot supervision (argmax, ties to the lowest class index). Keeps
// loss_dl at hard temperatures identical to cross-entropy on the teacher's
// argmax and avoids overflow in logits/tau.
constexpr double kHardLabelTau = 1e-4;

int argmax_lowest_tie(const double* v, int n);

// softmax(logits / tau); exact one-hot below the hard-label threshold.
std::vector<double> soften(const std::vector<double>& logits, double tau);

// Mean over rows of -log p[y]. logits: [B, C]; y: B class indices.
Tensor loss_ce(Tape& tape, const Tensor& logits, const std::vector<int>& y);

// Mean over rows of KL(p_T(. ; tau) || p_S). teacher_logits: B*C values.
Tensor loss_dl(Tape& tape, const Tensor& student_logits,
               const std::vector<double>& teacher_logits, double tau);

// alpha*max(0, 1 - f_s*y) + (1-alpha)*max(0, 1 - f_s*f_t), batch mean.
// y may be empty when alpha == 0, teacher_f when alpha == 1.
Tensor loss_hinge_mix(Tape& tape, double alpha, const Tensor& f_s,
                      const std::vector<double>& y, const std::vector<double>& teacher_f);

enum class SupervisionMode { kCrossEntropy, kDistill };

// Masked-prediction loss: per sentence, mean KL over the masked positions,
// then mean over the batch. logits: [B, h, C]; tokens: B*h originals;
// masked: per-sentence ascending position lists (all non-empty).
// teacher_logits (B*h*C) required in distill mode.
Tensor loss_masked(Tape& tape, const Tensor& logits, const std::vector<int>& tokens,
                   const std::vector<std::vector<int>>& masked, SupervisionMode mode,
                   const std::vector<double>* teacher_logits = nullptr, double tau = 1.0);

// Positions carrying the level-`level` boundary loss. Level 1 is every
// token (the plain autoregressive loss); level L >= 2 selects the right
// boundaries of nonterminals L levels above the leaves.
std::vector<int> boundary_loss_positions(const ParseTree& tree, int level, int len);

// Next-token loss restricted to the given sentence positions. logits come
// from the BOS-prefixed input, so row i predicts sentence token i.
// positions: per-sentence lists; sentences with an empty list are skipped
// and counted in skipped (when provided).
Tensor loss_level_boundary(Tape& tape, const Tensor& logits, const std::vector<int>& tokens,
                           int len, const std::vector<std::vector<int>>& positions,
                           SupervisionMode mode,
                           const std::vector<double>* teacher_logits = nullptr,
                           double tau = 1.0, int* skipped = nullptr);

}  // namespace distillab
