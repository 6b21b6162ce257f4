#include "distillab/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace distillab {

int argmax_lowest_tie(const double* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<double> soften(const std::vector<double>& logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("soften: temperature must be positive");
  int n = static_cast<int>(logits.size());
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  if (tau <= kHardLabelTau) {
    out[static_cast<size_t>(argmax_lowest_tie(logits.data(), n))] = 1.0;
    return out;
  }
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = std::exp((logits[static_cast<size_t>(i)] - m) / tau);
    sum += out[static_cast<size_t>(i)];
  }
  for (auto& v : out) v /= sum;
  return out;
}

Tensor loss_ce(Tape& tape, const Tensor& logits, const std::vector<int>& y) {
  int C = logits.dim(logits.rank() - 1);
  int64_t rows = logits.size() / C;
  if (static_cast<int64_t>(y.size()) != rows)
    tensor_error("loss_ce", "expected one label per row");
  for (int cls : y)
    if (cls < 0 || cls >= C)
      tensor_error("loss_ce", "class " + std::to_string(cls) + " outside [0," +
                                  std::to_string(C) + ")");
  Tensor ls = tape.log_softmax(logits);
  Tensor picked = tape.gather_last(ls, y);
  return tape.scale(tape.mean(picked), -1.0);
}

Tensor loss_dl(Tape& tape, const Tensor& student_logits,
               const std::vector<double>& teacher_logits, double tau) {
  int C = student_logits.dim(student_logits.rank() - 1);
  int64_t rows = student_logits.size() / C;
  if (static_cast<int64_t>(teacher_logits.size()) != rows * C)
    tensor_error("loss_dl", "teacher/student class counts disagree");
  if (tau <= kHardLabelTau) {
    std::vector<int> targets(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r)
      targets[static_cast<size_t>(r)] =
          argmax_lowest_tie(teacher_logits.data() + r * C, C);
    return loss_ce(tape, student_logits, targets);
  }
  std::vector<double> pt(static_cast<size_t>(rows) * C);
  double entropy_term = 0.0;  // sum_b sum_c pT log pT
  for (int64_t r = 0; r < rows; ++r) {
    std::vector<double> row(teacher_logits.begin() + r * C, teacher_logits.begin() + (r + 1) * C);
    auto p = soften(row, tau);
    for (int c = 0; c < C; ++c) {
      pt[static_cast<size_t>(r * C + c)] = p[static_cast<size_t>(c)];
      if (p[static_cast<size_t>(c)] > 0.0)
        entropy_term += p[static_cast<size_t>(c)] * std::log(p[static_cast<size_t>(c)]);
    }
  }
  Tensor pt_t = tape.constant(student_logits.shape(), std::move(pt));
  Tensor ls = tape.log_softmax(student_logits);
  Tensor cross = tape.scale(tape.sum(tape.mul(pt_t, ls)), -1.0 / static_cast<double>(rows));
  return tape.add_scalar(cross, entropy_term / static_cast<double>(rows));
}

Tensor loss_hinge_mix(Tape& tape, double alpha, const Tensor& f_s,
                      const std::vector<double>& y, const std::vector<double>& teacher_f) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("loss_hinge_mix: alpha must be in [0,1]");
  int64_t n = f_s.size();
  auto hinge_against = [&](const std::vector<double>& target) {
    if (static_cast<int64_t>(target.size()) != n)
      tensor_error("loss_hinge_mix", "target count does not match batch");
    Tensor t = tape.constant(f_s.shape(), target);
    return tape.mean(tape.relu(tape.add_scalar(tape.scale(tape.mul(f_s, t), -1.0), 1.0)));
  };
  if (alpha == 1.0) return hinge_against(y);
  if (alpha == 0.0) return hinge_against(teacher_f);
  return tape.add(tape.scale(hinge_against(y), alpha),
                  tape.scale(hinge_against(teacher_f), 1.0 - alpha));
}

namespace {

// Shared core for position-weighted per-token KL losses. weights must sum
// to 1 over each contributing row group already.
Tensor weighted_token_loss(Tape& tape, const Tensor& logits_flat,
                           const std::vector<double>& weights,
                           const std::vector<int>& ce_targets, SupervisionMode mode,
                           const std::vector<double>* teacher_logits, double tau) {
  int C = logits_flat.dim(1);
  int64_t rows = logits_flat.dim(0);
  Tensor ls = tape.log_softmax(logits_flat);
  if (mode == SupervisionMode::kCrossEntropy || tau <= kHardLabelTau) {
    std::vector<int> targets = ce_targets;
    if (mode == SupervisionMode::kDistill) {
      for (int64_t r = 0; r < rows; ++r)
        if (weights[static_cast<size_t>(r)] > 0.0)
          targets[static_cast<size_t>(r)] =
              argmax_lowest_tie(teacher_logits->data() + r * C, C);
    }
    Tensor picked = tape.gather_last(ls, targets);  // [rows]
    Tensor w = tape.constant({static_cast<int>(rows)}, weights);
    return tape.scale(tape.sum(tape.mul(picked, w)), -1.0);
  }
  std::vector<double> pt(static_cast<size_t>(rows) * C, 0.0);
  double entropy_term = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double wr = weights[static_cast<size_t>(r)];
    if (wr <= 0.0) continue;
    std::vector<double> row(teacher_logits->begin() + r * C,
                            teacher_logits->begin() + (r + 1) * C);
    auto p = soften(row, tau);
    for (int c = 0; c < C; ++c) {
      pt[static_cast<size_t>(r * C + c)] = p[static_cast<size_t>(c)];
      if (p[static_cast<size_t>(c)] > 0.0)
        entropy_term += wr * p[static_cast<size_t>(c)] * std::log(p[static_cast<size_t>(c)]);
    }
  }
  Tensor pt_t = tape.constant({static_cast<int>(rows), C}, std::move(pt));
  Tensor w = tape.constant({static_cast<int>(rows), 1}, weights);
  Tensor cross = tape.scale(tape.sum(tape.mul(tape.mul(pt_t, ls), w)), -1.0);
  return tape.add_scalar(cross, entropy_term);
}

}  // namespace

Tensor loss_masked(Tape& tape, const Tensor& logits, const std::vector<int>& tokens,
                   const std::vector<std::vector<int>>& masked, SupervisionMode mode,
                   const std::vector<double>* teacher_logits, double tau) {
  if (logits.rank() != 3) tensor_error("loss_masked", "expected [B,h,C] logits");
  int B = logits.dim(0), h = logits.dim(1), C = logits.dim(2);
  if (static_cast<int>(masked.size()) != B)
    tensor_error("loss_masked", "one masked-position list per sentence required");
  if (mode == SupervisionMode::kDistill && teacher_logits == nullptr)
    tensor_error("loss_masked", "distill mode requires teacher logits");
  std::vector<double> weights(static_cast<size_t>(B) * h, 0.0);
  for (int b = 0; b < B; ++b) {
    if (masked[static_cast<size_t>(b)].empty())
      throw std::invalid_argument("loss_masked: empty masked set for sentence " +
                                  std::to_string(b));
    double w = 1.0 / (static_cast<double>(B) *
                      static_cast<double>(masked[static_cast<size_t>(b)].size()));
    for (int i : masked[static_cast<size_t>(b)]) {
      if (i < 0 || i >= h) throw std::invalid_argument("loss_masked: position out of range");
      weights[static_cast<size_t>(b) * h + i] = w;
    }
  }
  Tensor flat = tape.reshape(logits, {B * h, C});
  return weighted_token_loss(tape, flat, weights, tokens, mode, teacher_logits, tau);
}

std::vector<int> boundary_loss_positions(const ParseTree& tree, int level, int len) {
  if (level < 1) throw std::invalid_argument("boundary_loss_positions: level must be >= 1");
  if (level == 1) {
    // Every leaf is its own right boundary: the plain autoregressive loss.
    std::vector<int> all(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) all[static_cast<size_t>(i)] = i;
    return all;
  }
  // Level L selects nonterminals L-1 levels above the leaves.
  int from_root = tree.depth - level + 1;
  if (from_root < 1 || from_root > tree.depth - 1) return {};
  std::vector<int> out;
  for (auto& [pos, sym] : boundary_positions(tree, from_root)) out.push_back(pos);
  return out;
}

Tensor loss_level_boundary(Tape& tape, const Tensor& logits, const std::vector<int>& tokens,
                           int len, const std::vector<std::vector<int>>& positions,
                           SupervisionMode mode, const std::vector<double>* teacher_logits,
                           double tau, int* skipped) {
  if (logits.rank() != 3) tensor_error("loss_level_boundary", "expected [B,h+1,C] logits");
  int B = logits.dim(0), rows_per = logits.dim(1), C = logits.dim(2);
  if (rows_per != len + 1)
    tensor_error("loss_level_boundary", "logits must come from the BOS-prefixed input");
  if (static_cast<int>(positions.size()) != B)
    tensor_error("loss_level_boundary", "one position list per sentence required");
  if (mode == SupervisionMode::kDistill && teacher_logits == nullptr)
    tensor_error("loss_level_boundary", "distill mode requires teacher logits");

  int used = 0;
  for (const auto& ps : positions)
    if (!ps.empty()) ++used;
  if (skipped) *skipped = B - used;
  if (used == 0)
    throw std::invalid_argument("loss_level_boundary: no sentence has boundary positions");

  std::vector<double> weights(static_cast<size_t>(B) * rows_per, 0.0);
  std::vector<int> targets(static_cast<size_t>(B) * rows_per, 0);
  for (int b = 0; b < B; ++b) {
    const auto& ps = positions[static_cast<size_t>(b)];
    for (int i = 0; i < len; ++i)
      targets[static_cast<size_t>(b) * rows_per + i] =
          tokens[static_cast<size_t>(b) * len + i];
    if (ps.empty()) continue;
    double w = 1.0 / (static_cast<double>(used) * static_cast<double>(ps.size()));
    for (int i : ps) {
      if (i < 0 || i >= len)
        throw std::invalid_argument("loss_level_boundary: position out of range");
      weights[static_cast<size_t>(b) * rows_per + i] = w;
    }
  }
  Tensor flat = tape.reshape(logits, {B * rows_per, C});
  return weighted_token_loss(tape, flat, weights, targets, mode, teacher_logits, tau);
}

}  // namespace distillab
