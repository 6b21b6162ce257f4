#include "distillab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "distillab/distill.hpp"
#include "distillab/grammar_oracle.hpp"
#include "distillab/nt_probe.hpp"
#include "distillab/optim.hpp"
#include "distillab/probes.hpp"
#include "distillab/report.hpp"

namespace distillab {

namespace fs = std::filesystem;

const char* kBuildStamp = "distillab-0.1.0";

// ---------------------------------------------------------------- boolean

void BooleanTask::sample(Rng& rng, int n, double* xs, int* ys) const {
  if (is_parity)
    sample_batch_flat(parity, rng, n, xs, ys);
  else
    sample_batch_flat(hierarchy, rng, n, xs, ys);
}

BooleanTask boolean_task_from_config(const TaskConfig& t) {
  BooleanTask task;
  if (t.kind == "parity") {
    task.is_parity = true;
    if (!t.support.empty()) {
      task.parity.d = t.d;
      task.parity.k = static_cast<int>(t.support.size());
      task.parity.support = t.support;
      task.parity.validate();
    } else {
      task.parity = ParitySpec::first_k(t.d, t.k);
    }
  } else if (t.kind == "hierarchy") {
    task.is_parity = false;
    task.hierarchy = HierarchySpec::first_blocks(t.d, t.depth, t.k);
  } else {
    throw std::invalid_argument("boolean task: unsupported kind '" + t.kind + "'");
  }
  return task;
}

MlpParams init_mlp_from_config(const BooleanTask& task, const ModelConfig& m, Rng& rng) {
  if (m.kind != "mlp") throw std::invalid_argument("boolean tasks use mlp models");
  MlpOutput out = m.output == "scalar"      ? MlpOutput::kScalar
                  : m.output == "two_logit" ? MlpOutput::kTwoLogit
                                            : MlpOutput::kLogits;
  int k = task.is_parity ? task.parity.k
                         : static_cast<int>(task.hierarchy.features[0].size());
  return init_mlp_symmetric(m.width, task.dim(), k, rng, out, task.classes());
}

namespace {

double task_eval_accuracy(const MlpParams& p, const double* xs, const int* ys, int n) {
  int C = p.classes;
  std::vector<double> logits(static_cast<size_t>(n) * C);
  mlp_eval_logits(p, xs, n, logits.data());
  int correct = 0;
  for (int s = 0; s < n; ++s) {
    const double* row = logits.data() + static_cast<size_t>(s) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    if (best + 1 == ys[s]) ++correct;
  }
  return static_cast<double>(correct) / n;
}

struct MlpLoopHooks {
  // Produces the step loss for the sampled batch.
  std::function<Tensor(Tape&, MlpParams& p, int64_t step, const Tensor& x,
                       const std::vector<double>& xs, const std::vector<int>& ys, int n)>
      loss;
};

MlpRun run_mlp_loop(const BooleanTask& task, MlpParams init, const TrainConfig& tc, Rng& rng,
                    MetricTable* table, const std::string& phase, const MlpLoopHooks& hooks) {
  MlpRun run;
  run.params = std::move(init);
  MlpParams& p = run.params;
  auto params = p.parameters();
  Adam adam;
  if (tc.optimizer == "adam")
    adam = Adam(params, {0.9, 0.95, 1e-8, tc.weight_decay});
  else if (tc.optimizer != "sgd")
    throw std::invalid_argument("mlp training: unknown optimizer '" + tc.optimizer + "'");

  Rng data_rng = rng.fork(1);
  Rng eval_rng = rng.fork(2);
  int d = task.dim();
  std::vector<double> eval_xs(static_cast<size_t>(tc.eval_samples) * d);
  std::vector<int> eval_ys(static_cast<size_t>(tc.eval_samples));
  task.sample(eval_rng, tc.eval_samples, eval_xs.data(), eval_ys.data());

  auto snapshot = [&](int64_t step) {
    run.ckpt_steps.push_back(step);
    run.ckpts.push_back(p.clone());
  };
  auto evaluate = [&](int64_t step) {
    double acc = task_eval_accuracy(p, eval_xs.data(), eval_ys.data(), tc.eval_samples);
    run.acc_curve.emplace_back(step, acc);
    if (table) table->add(step, phase, "eval_acc", acc);
  };

  int n = std::max(tc.batch, 1);
  std::vector<double> xs(static_cast<size_t>(n) * d);
  std::vector<int> ys(static_cast<size_t>(n));
  if (tc.eval_every > 0) evaluate(0);
  for (int64_t step = 1; step <= tc.steps; ++step) {
    task.sample(data_rng, n, xs.data(), ys.data());
    Tape tape;
    Tensor x = tape.constant({n, d}, xs);
    Tensor loss = hooks.loss(tape, p, step, x, xs, ys, n);
    zero_grads(params);
    tape.backward(loss);
    double lr = tc.cosine ? cosine_lr(step, tc.steps, tc.lr, tc.lr_floor, tc.warmup) : tc.lr;
    if (tc.optimizer == "adam")
      adam.step(params, lr);
    else
      sgd_step(params, lr, tc.weight_decay);
    if (tc.eval_every > 0 && step % tc.eval_every == 0) evaluate(step);
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) snapshot(step);
  }
  if (run.ckpt_steps.empty() || run.ckpt_steps.back() != tc.steps) snapshot(tc.steps);
  if (tc.eval_every > 0 &&
      (run.acc_curve.empty() || run.acc_curve.back().first != tc.steps))
    evaluate(tc.steps);
  return run;
}

std::vector<int> zero_based(const std::vector<int>& ys, int n) {
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ys[static_cast<size_t>(i)] - 1;
  return out;
}

}  // namespace

MlpRun train_mlp_classifier(const BooleanTask& task, MlpParams init, const TrainConfig& tc,
                            Rng& rng, MetricTable* table, const std::string& phase) {
  MlpLoopHooks hooks;
  if (tc.loss == "hinge") {
    if (init.output == MlpOutput::kLogits)
      throw std::invalid_argument("hinge training needs a scalar-head model");
    hooks.loss = [](Tape& tape, MlpParams& p, int64_t, const Tensor& x,
                    const std::vector<double>&, const std::vector<int>& ys, int n) {
      Tensor f = mlp_forward(tape, p, x);
      std::vector<double> t(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        t[static_cast<size_t>(i)] = parity_sign(ys[static_cast<size_t>(i)]);
      return loss_hinge_mix(tape, 1.0, f, t, {});
    };
  } else if (tc.loss == "ce") {
    hooks.loss = [](Tape& tape, MlpParams& p, int64_t, const Tensor& x,
                    const std::vector<double>&, const std::vector<int>& ys, int n) {
      Tensor logits = mlp_forward(tape, p, x);
      return loss_ce(tape, logits, zero_based(ys, n));
    };
  } else {
    throw std::invalid_argument("mlp training: unknown loss '" + tc.loss + "'");
  }
  return run_mlp_loop(task, std::move(init), tc, rng, table, phase, hooks);
}

MlpRun distill_mlp_student(const BooleanTask& task, MlpParams init,
                           const std::vector<MlpParams>& teacher_ckpts,
                           const TeacherSchedule& schedule, const TrainConfig& tc,
                           const MlpDistillSpec& spec, Rng& rng, MetricTable* table,
                           const std::string& phase) {
  if (spec.loss == "ce")
    return train_mlp_classifier(task, std::move(init), tc, rng, table, phase);
  schedule.validate();
  for (int id : schedule.checkpoint_ids)
    if (id < 0 || id >= static_cast<int>(teacher_ckpts.size()))
      throw std::invalid_argument("distill: schedule references a missing checkpoint");

  MlpLoopHooks hooks;
  if (spec.loss == "dl") {
    hooks.loss = [&teacher_ckpts, &schedule, &spec](Tape& tape, MlpParams& p, int64_t step,
                                                    const Tensor& x,
                                                    const std::vector<double>& xs,
                                                    const std::vector<int>&, int n) {
      const MlpParams& teacher =
          teacher_ckpts[static_cast<size_t>(
              schedule.checkpoint_ids[static_cast<size_t>(teacher_at_step(schedule, step - 1))])];
      int C = teacher.classes;
      std::vector<double> t_logits(static_cast<size_t>(n) * C);
      mlp_eval_logits(teacher, xs.data(), n, t_logits.data());
      Tensor logits = mlp_forward(tape, p, x);
      return loss_dl(tape, logits, t_logits, spec.tau);
    };
  } else if (spec.loss == "hinge_mix") {
    hooks.loss = [&teacher_ckpts, &schedule, &spec](Tape& tape, MlpParams& p, int64_t step,
                                                    const Tensor& x,
                                                    const std::vector<double>& xs,
                                                    const std::vector<int>& ys, int n) {
      const MlpParams& teacher =
          teacher_ckpts[static_cast<size_t>(
              schedule.checkpoint_ids[static_cast<size_t>(teacher_at_step(schedule, step - 1))])];
      std::vector<double> f_t(static_cast<size_t>(n));
      mlp_eval_scalar(teacher, xs.data(), n, f_t.data());
      std::vector<double> y;
      if (spec.alpha > 0.0) {
        y.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
          y[static_cast<size_t>(i)] = parity_sign(ys[static_cast<size_t>(i)]);
      }
      Tensor f = mlp_forward(tape, p, x);
      return loss_hinge_mix(tape, spec.alpha, f, y, f_t);
    };
  } else {
    throw std::invalid_argument("distill: unknown loss '" + spec.loss + "'");
  }
  return run_mlp_loop(task, std::move(init), tc, rng, table, phase, hooks);
}

// ---------------------------------------------------------------- pcfg

LmTask lm_task_from_config(const TaskConfig& t, const ModelConfig& model, int level) {
  if (t.kind != "pcfg") throw std::invalid_argument("lm task requires kind 'pcfg'");
  LmTask task;
  task.grammar = load_grammar_file(t.grammar);
  task.vocab.num_terminals = task.grammar.num_terminals();
  task.mask_rate = t.mask_rate;
  task.max_len = t.max_len;
  task.fresh_masks = t.fresh_masks;
  task.causal = model.mode == "causal";
  task.level = level;
  return task;
}

TransformerConfig transformer_config_from(const ModelConfig& m, const LmTask& task) {
  TransformerConfig cfg;
  cfg.layers = m.layers;
  cfg.heads = m.heads;
  cfg.head_dim = m.head_dim;
  cfg.vocab = task.vocab.model_vocab();
  cfg.max_len = task.max_len + 1;  // room for BOS in causal mode
  cfg.causal = task.causal;
  cfg.validate();
  return cfg;
}

namespace {

Sentence sample_bounded_sentence(const LmTask& task, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Sentence s = sample_sentence(task.grammar, rng);
    if (static_cast<int>(s.tokens.size()) <= task.max_len) return s;
  }
  throw std::runtime_error("pcfg sampling: sentences persistently exceed max_len");
}

MaskedExample mask_with_retry(const LmTask& task, const std::vector<int>& tokens, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    MaskedExample ex = apply_masking(tokens, task.mask_rate, rng, task.vocab);
    if (!ex.masked_positions.empty()) return ex;
  }
  throw std::runtime_error("masking: failed to draw a nonempty mask set");
}

struct LmBatch {
  int count = 0;
  int len = 0;  // padded sequence length fed to the model
  std::vector<int> input;
  std::vector<uint8_t> visible;
  std::vector<int> targets;  // padded original tokens, sentence coordinates
  std::vector<std::vector<int>> masked;
  std::vector<std::vector<int>> loss_positions;
  int sentence_len = 0;  // padded sentence length (== len in masked mode)
};

LmBatch build_lm_batch(const LmTask& task, const std::vector<Sentence>& sentences,
                       const std::vector<MaskedExample>& masks) {
  LmBatch b;
  b.count = static_cast<int>(sentences.size());
  int max_sent = 0;
  for (const auto& s : sentences)
    max_sent = std::max(max_sent, static_cast<int>(s.tokens.size()));
  b.sentence_len = max_sent;
  int pad = task.vocab.pad_id();
  if (!task.causal) {
    b.len = max_sent;
    b.input.assign(static_cast<size_t>(b.count) * b.len, pad);
    b.visible.assign(static_cast<size_t>(b.count) * b.len, 0);
    b.targets.assign(static_cast<size_t>(b.count) * b.len, pad);
    for (int i = 0; i < b.count; ++i) {
      const auto& ex = masks[static_cast<size_t>(i)];
      int h = static_cast<int>(ex.tokens.size());
      for (int j = 0; j < h; ++j) {
        b.input[static_cast<size_t>(i) * b.len + j] = ex.input[static_cast<size_t>(j)];
        b.targets[static_cast<size_t>(i) * b.len + j] = ex.tokens[static_cast<size_t>(j)];
        b.visible[static_cast<size_t>(i) * b.len + j] = 1;
      }
      b.masked.push_back(ex.masked_positions);
    }
  } else {
    b.len = max_sent + 1;
    b.input.assign(static_cast<size_t>(b.count) * b.len, pad);
    b.visible.assign(static_cast<size_t>(b.count) * b.len, 0);
    b.targets.assign(static_cast<size_t>(b.count) * max_sent, pad);
    for (int i = 0; i < b.count; ++i) {
      const auto& s = sentences[static_cast<size_t>(i)];
      int h = static_cast<int>(s.tokens.size());
      b.input[static_cast<size_t>(i) * b.len] = task.vocab.bos_id();
      b.visible[static_cast<size_t>(i) * b.len] = 1;
      for (int j = 0; j < h; ++j) {
        b.input[static_cast<size_t>(i) * b.len + j + 1] = s.tokens[static_cast<size_t>(j)];
        b.visible[static_cast<size_t>(i) * b.len + j + 1] = 1;
        b.targets[static_cast<size_t>(i) * max_sent + j] = s.tokens[static_cast<size_t>(j)];
      }
      b.loss_positions.push_back(boundary_loss_positions(s.tree, task.level, h));
    }
  }
  return b;
}

Tensor lm_loss(Tape& tape, const LmTask& task, const LmBatch& b, const Tensor& logits,
               SupervisionMode mode, const std::vector<double>* teacher_logits, double tau) {
  if (!task.causal)
    return loss_masked(tape, logits, b.targets, b.masked, mode, teacher_logits, tau);
  return loss_level_boundary(tape, logits, b.targets, b.sentence_len, b.loss_positions, mode,
                             teacher_logits, tau);
}

std::vector<double> teacher_lm_logits(const TransformerParams& teacher, const LmBatch& b) {
  Tape tape(false);
  Tensor logits =
      transformer_forward(tape, teacher, b.input, b.count, b.len, &b.visible);
  return logits.values();
}

}  // namespace

LmEvalSet make_lm_eval_set(const LmTask& task, int count, Rng& rng) {
  LmEvalSet set;
  for (int i = 0; i < count; ++i) {
    Sentence s = sample_bounded_sentence(task, rng);
    set.masked.push_back(mask_with_retry(task, s.tokens, rng));
    set.sentences.push_back(std::move(s));
  }
  return set;
}

LmEval eval_lm(const LmTask& task, const TransformerParams& params, const LmEvalSet& eval) {
  LmEval out;
  const int group = 64;
  int total = static_cast<int>(eval.sentences.size());
  double loss_sum = 0.0;
  int64_t top1_hits = 0, top1_total = 0;
  int groups = 0;
  for (int start = 0; start < total; start += group) {
    int end = std::min(total, start + group);
    std::vector<Sentence> sent(eval.sentences.begin() + start, eval.sentences.begin() + end);
    std::vector<MaskedExample> masks(eval.masked.begin() + start, eval.masked.begin() + end);
    LmBatch b = build_lm_batch(task, sent, masks);
    Tape tape(false);
    Tensor logits = transformer_forward(tape, params, b.input, b.count, b.len, &b.visible);
    Tensor loss = lm_loss(tape, task, b, logits, SupervisionMode::kCrossEntropy, nullptr, 1.0);
    loss_sum += loss.item();
    ++groups;
    int C = params.cfg.vocab;
    const double* lv = logits.data();
    auto count_hits = [&](int row, int target) {
      const double* z = lv + static_cast<size_t>(row) * C;
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (z[c] > z[best]) best = c;
      ++top1_total;
      if (best == target) ++top1_hits;
    };
    for (int i = 0; i < b.count; ++i) {
      if (!task.causal) {
        for (int pos : b.masked[static_cast<size_t>(i)])
          count_hits(i * b.len + pos, b.targets[static_cast<size_t>(i) * b.len + pos]);
      } else {
        for (int pos : b.loss_positions[static_cast<size_t>(i)])
          count_hits(i * b.len + pos,
                     b.targets[static_cast<size_t>(i) * b.sentence_len + pos]);
      }
    }
  }
  out.loss = loss_sum / std::max(groups, 1);
  out.top1 = top1_total > 0 ? static_cast<double>(top1_hits) / top1_total : 0.0;
  return out;
}

namespace {

struct LmLossFn {
  std::function<Tensor(Tape&, int64_t step, const LmBatch&, const Tensor& logits)> loss;
};

LmRun run_lm_loop(const LmTask& task, const TransformerConfig& cfg, const TrainConfig& tc,
                  Rng& rng, MetricTable* table, const std::string& phase,
                  const LmLossFn& hooks) {
  LmRun run;
  Rng init_rng = rng.fork(0);
  run.params = init_transformer(cfg, init_rng);
  auto params = run.params.parameters();
  if (tc.optimizer != "adam")
    throw std::invalid_argument("lm training uses the adam optimizer");
  Adam adam(params, {0.9, 0.95, 1e-8, tc.weight_decay});

  Rng data_rng = rng.fork(1);
  Rng eval_rng = rng.fork(2);
  LmEvalSet eval_set = make_lm_eval_set(task, tc.eval_samples, eval_rng);

  auto snapshot = [&](int64_t step) {
    run.ckpt_steps.push_back(step);
    run.ckpts.push_back(run.params.clone());
  };
  auto evaluate = [&](int64_t step) {
    LmEval ev = eval_lm(task, run.params, eval_set);
    run.loss_curve.emplace_back(step, ev.loss);
    run.acc_curve.emplace_back(step, ev.top1);
    if (table) {
      table->add(step, phase, "eval_loss", ev.loss);
      table->add(step, phase, "eval_acc", ev.top1);
    }
  };

  if (tc.eval_every > 0) evaluate(0);
  int n = std::max(tc.batch, 1);
  for (int64_t step = 1; step <= tc.steps; ++step) {
    std::vector<Sentence> sentences;
    std::vector<MaskedExample> masks;
    sentences.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Sentence s = sample_bounded_sentence(task, data_rng);
      if (!task.causal) masks.push_back(mask_with_retry(task, s.tokens, data_rng));
      sentences.push_back(std::move(s));
    }
    LmBatch b = build_lm_batch(task, sentences, masks);
    Tape tape;
    Tensor logits = transformer_forward(tape, run.params, b.input, b.count, b.len, &b.visible);
    Tensor loss = hooks.loss(tape, step, b, logits);
    zero_grads(params);
    tape.backward(loss);
    double lr = tc.cosine ? cosine_lr(step, tc.steps, tc.lr, tc.lr_floor, tc.warmup) : tc.lr;
    adam.step(params, lr);
    if (tc.eval_every > 0 && step % tc.eval_every == 0) evaluate(step);
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) snapshot(step);
  }
  if (run.ckpt_steps.empty() || run.ckpt_steps.back() != tc.steps) snapshot(tc.steps);
  if (tc.eval_every > 0 &&
      (run.acc_curve.empty() || run.acc_curve.back().first != tc.steps))
    evaluate(tc.steps);
  return run;
}

}  // namespace

LmRun train_lm(const LmTask& task, const TransformerConfig& cfg, const TrainConfig& tc,
               Rng& rng, MetricTable* table, const std::string& phase) {
  LmLossFn hooks;
  hooks.loss = [&task](Tape& tape, int64_t, const LmBatch& b, const Tensor& logits) {
    return lm_loss(tape, task, b, logits, SupervisionMode::kCrossEntropy, nullptr, 1.0);
  };
  return run_lm_loop(task, cfg, tc, rng, table, phase, hooks);
}

LmRun distill_lm_student(const LmTask& task, const TransformerConfig& cfg,
                         const std::vector<TransformerParams>& teacher_ckpts,
                         const TeacherSchedule& schedule, const TrainConfig& tc,
                         const LmDistillSpec& spec, Rng& rng, MetricTable* table,
                         const std::string& phase) {
  schedule.validate();
  for (int id : schedule.checkpoint_ids)
    if (id < 0 || id >= static_cast<int>(teacher_ckpts.size()))
      throw std::invalid_argument("distill: schedule references a missing checkpoint");
  LmLossFn hooks;
  hooks.loss = [&task, &teacher_ckpts, &schedule, &spec](Tape& tape, int64_t step,
                                                         const LmBatch& b,
                                                         const Tensor& logits) {
    const TransformerParams& teacher =
        teacher_ckpts[static_cast<size_t>(
            schedule.checkpoint_ids[static_cast<size_t>(teacher_at_step(schedule, step - 1))])];
    std::vector<double> t_logits = teacher_lm_logits(teacher, b);
    return lm_loss(tape, task, b, logits, SupervisionMode::kDistill, &t_logits, spec.tau);
  };
  return run_lm_loop(task, cfg, tc, rng, table, phase, hooks);
}

// ---------------------------------------------------------- orchestration

namespace {

std::string ckpt_path(const std::string& dir, int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%08lld.bin", static_cast<long long>(step));
  return dir + "/teacher/" + buf;
}

std::string sanitize(const std::string& phase) {
  std::string out = phase;
  for (auto& c : out)
    if (c == '/') c = '_';
  return out;
}

constexpr uint64_t kTeacherStream = 0x7e11;
constexpr uint64_t kStudentStream = 0x57fd;
constexpr uint64_t kProbeStream = 0x9b0e;
constexpr uint64_t kMeasureStream = 0x3ea5;
constexpr uint64_t kGenStream = 0x6e41;

}  // namespace

std::vector<int64_t> stored_checkpoint_steps(const std::string& dir) {
  std::vector<int64_t> steps;
  fs::path tdir = fs::path(dir) / "teacher";
  if (!fs::exists(tdir)) throw std::runtime_error("no teacher directory under " + dir);
  for (const auto& entry : fs::directory_iterator(tdir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && name.size() >= 9)
      steps.push_back(std::strtoll(name.c_str() + 5, nullptr, 10));
  }
  std::sort(steps.begin(), steps.end());
  if (steps.empty()) throw std::runtime_error("no teacher checkpoints under " + dir);
  return steps;
}

void stage_teacher(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table) {
  fs::create_directories(fs::path(dir) / "teacher");
  Rng root(cfg.seed);
  Rng rng = root.fork(kTeacherStream);
  if (cfg.task.kind == "pcfg") {
    LmTask task = lm_task_from_config(cfg.task, cfg.teacher_model, cfg.teacher_train.level);
    TransformerConfig tcfg = transformer_config_from(cfg.teacher_model, task);
    LmRun run = train_lm(task, tcfg, cfg.teacher_train, rng, &table, "teacher");
    for (size_t i = 0; i < run.ckpts.size(); ++i)
      save_checkpoint_file(ckpt_path(dir, run.ckpt_steps[i]),
                           checkpoint_from_transformer(run.ckpts[i], run.ckpt_steps[i]));
  } else {
    BooleanTask task = boolean_task_from_config(cfg.task);
    Rng init_rng = rng.fork(7);
    MlpParams init = init_mlp_from_config(task, cfg.teacher_model, init_rng);
    MlpRun run =
        train_mlp_classifier(task, std::move(init), cfg.teacher_train, rng, &table, "teacher");
    for (size_t i = 0; i < run.ckpts.size(); ++i)
      save_checkpoint_file(ckpt_path(dir, run.ckpt_steps[i]),
                           checkpoint_from_mlp(run.ckpts[i], run.ckpt_steps[i]));
  }
  auto series = table.series("teacher", cfg.probes.transition_metric);
  if (series.size() >= 5) {
    TransitionResult tr = detect_transition(series, cfg.probes.smooth);
    table.add(0, "analysis", "transition_found", tr.found ? 1.0 : 0.0);
    if (tr.found) {
      table.add(0, "analysis", "transition_c1", static_cast<double>(tr.c1));
      table.add(0, "analysis", "transition_start", static_cast<double>(tr.segment_start));
      table.add(0, "analysis", "transition_end", static_cast<double>(tr.segment_end));
    }
  }
}

namespace {

int64_t nearest_step(const std::vector<int64_t>& steps, int64_t target) {
  int64_t best = steps[0];
  for (int64_t s : steps)
    if (std::abs(s - target) < std::abs(best - target)) best = s;
  return best;
}

int index_of_step(const std::vector<int64_t>& steps, int64_t step) {
  for (size_t i = 0; i < steps.size(); ++i)
    if (steps[i] == step) return static_cast<int>(i);
  throw std::runtime_error("checkpoint step not found");
}

int64_t transition_c1_or_fallback(const MetricTable& table, const std::vector<int64_t>& steps) {
  for (const auto& r : table.records())
    if (r.phase == "analysis" && r.metric == "transition_c1")
      return static_cast<int64_t>(r.value);
  return steps[steps.size() / 2];  // mid-training checkpoint
}

TeacherSchedule build_strategy_schedule(const StrategySpec& s,
                                        const std::vector<int64_t>& ckpt_steps, int64_t c1,
                                        int64_t budget, int64_t teacher_total) {
  int final_id = static_cast<int>(ckpt_steps.size()) - 1;
  if (s.variant == "one_shot") return schedule_one_shot(final_id);
  if (s.variant == "two_shot") {
    int64_t target = s.steps.empty() ? c1 : s.steps[0];
    int mid = index_of_step(ckpt_steps, nearest_step(ckpt_steps, target));
    return schedule_two_shot(mid, final_id, s.t);
  }
  if (s.variant == "n_t") return schedule_n_t_progressive(ckpt_steps, s.n, s.t);
  if (s.variant == "equal_split" || s.variant == "kappa_split") {
    int n = s.n > 0 ? s.n : static_cast<int>(ckpt_steps.size());
    std::vector<int> ids = select_checkpoints_at_multiples(ckpt_steps, c1, n);
    ids.back() = final_id;  // the last supervising checkpoint is the final one
    if (s.variant == "equal_split") return schedule_equal_split(ids, budget);
    return schedule_kappa_split(ids, s.kappa, teacher_total);
  }
  if (s.variant == "explicit") {
    std::vector<int> ids;
    for (int64_t st : s.steps) ids.push_back(index_of_step(ckpt_steps, nearest_step(ckpt_steps, st)));
    return schedule_explicit(ids, s.durations);
  }
  throw std::invalid_argument("unknown strategy variant '" + s.variant + "'");
}

}  // namespace

void stage_distill(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table) {
  if (cfg.distill.strategies.empty() || cfg.student_train.steps == 0) return;
  std::vector<int64_t> budgets = cfg.distill.budgets;
  if (budgets.empty()) budgets.push_back(cfg.student_train.steps);
  auto ckpt_steps = stored_checkpoint_steps(dir);
  int64_t c1 = transition_c1_or_fallback(table, ckpt_steps);
  fs::create_directories(fs::path(dir) / "students");
  Rng root(cfg.seed);

  if (cfg.task.kind == "pcfg") {
    LmTask task = lm_task_from_config(cfg.task, cfg.student_model, cfg.student_train.level);
    std::vector<TransformerParams> teachers;
    for (int64_t s : ckpt_steps)
      teachers.push_back(transformer_from_checkpoint(load_checkpoint_file(ckpt_path(dir, s))));
    TransformerConfig scfg = transformer_config_from(cfg.student_model, task);
    for (size_t si = 0; si < cfg.distill.strategies.size(); ++si) {
      const auto& strat = cfg.distill.strategies[si];
      for (size_t bi = 0; bi < budgets.size(); ++bi) {
        for (size_t ki = 0; ki < cfg.distill.seeds.size(); ++ki) {
          uint64_t run_seed = cfg.distill.seeds[ki];
          std::string phase = "student/" + strat.name() + "/seed" +
                              std::to_string(run_seed) + "/b" + std::to_string(budgets[bi]);
          TrainConfig tc = cfg.student_train;
          tc.steps = budgets[bi];
          Rng rng = root.fork(kStudentStream + 1000003 * si + 101 * bi).fork(run_seed);
          LmRun run;
          if (strat.variant == "ce") {
            run = train_lm(task, scfg, tc, rng, &table, phase);
          } else {
            TeacherSchedule sched = build_strategy_schedule(strat, ckpt_steps, c1, budgets[bi],
                                                            cfg.teacher_train.steps);
            LmDistillSpec spec{cfg.distill.tau};
            run = distill_lm_student(task, scfg, teachers, sched, tc, spec, rng, &table, phase);
          }
          table.add(budgets[bi], phase, "final_acc", run.acc_curve.back().second);
          table.add(budgets[bi], phase, "final_loss", run.loss_curve.back().second);
          save_checkpoint_file(dir + "/students/" + sanitize(phase) + ".bin",
                               checkpoint_from_transformer(run.params, budgets[bi]));
        }
      }
    }
  } else {
    BooleanTask task = boolean_task_from_config(cfg.task);
    std::vector<MlpParams> teachers;
    for (int64_t s : ckpt_steps)
      teachers.push_back(mlp_from_checkpoint(load_checkpoint_file(ckpt_path(dir, s))));
    for (size_t si = 0; si < cfg.distill.strategies.size(); ++si) {
      const auto& strat = cfg.distill.strategies[si];
      for (size_t bi = 0; bi < budgets.size(); ++bi) {
        for (size_t ki = 0; ki < cfg.distill.seeds.size(); ++ki) {
          uint64_t run_seed = cfg.distill.seeds[ki];
          std::string phase = "student/" + strat.name() + "/seed" +
                              std::to_string(run_seed) + "/b" + std::to_string(budgets[bi]);
          TrainConfig tc = cfg.student_train;
          tc.steps = budgets[bi];
          Rng rng = root.fork(kStudentStream + 1000003 * si + 101 * bi).fork(run_seed);
          Rng init_rng = rng.fork(7);
          MlpParams init = init_mlp_from_config(task, cfg.student_model, init_rng);
          MlpRun run;
          if (strat.variant == "ce") {
            TrainConfig ce_tc = tc;
            ce_tc.loss = cfg.student_train.loss == "hinge" ? "hinge" : "ce";
            run = train_mlp_classifier(task, std::move(init), ce_tc, rng, &table, phase);
          } else {
            TeacherSchedule sched = build_strategy_schedule(strat, ckpt_steps, c1, budgets[bi],
                                                            cfg.teacher_train.steps);
            MlpDistillSpec spec{cfg.distill.loss, cfg.distill.tau, cfg.distill.alpha};
            run = distill_mlp_student(task, std::move(init), teachers, sched, tc, spec, rng,
                                      &table, phase);
          }
          table.add(budgets[bi], phase, "final_acc", run.acc_curve.back().second);
          save_checkpoint_file(dir + "/students/" + sanitize(phase) + ".bin",
                               checkpoint_from_mlp(run.params, budgets[bi]));
        }
      }
    }
  }
}

void stage_probe(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table) {
  auto ckpt_steps = stored_checkpoint_steps(dir);
  Rng root(cfg.seed);
  Rng rng = root.fork(kProbeStream);
  if (cfg.task.kind != "pcfg" && cfg.probes.monomial_degree1) {
    BooleanTask task = boolean_task_from_config(cfg.task);
    int d = task.dim();
    int64_t c1 = transition_c1_or_fallback(table, ckpt_steps);
    std::vector<std::pair<std::string, int64_t>> picks = {
        {"probe/c1", nearest_step(ckpt_steps, c1)}, {"probe/final", ckpt_steps.back()}};
    std::vector<std::vector<int>> subsets;
    for (int j = 0; j < d; ++j) subsets.push_back({j});
    for (const auto& [phase, step] : picks) {
      MlpParams model = mlp_from_checkpoint(load_checkpoint_file(ckpt_path(dir, step)));
      BatchProbFn p1 = [&model](const double* xs, int n, double* out) {
        mlp_eval_p1(model, xs, n, out);
      };
      auto corr = monomial_correlations(p1, d, subsets, rng);
      for (int j = 0; j < d; ++j)
        table.add(step, phase, "corr_x" + std::to_string(j), corr[static_cast<size_t>(j)].value);
      if (task.is_parity) {
        double min_in = 1e300, max_off = 0.0;
        for (int j = 0; j < d; ++j) {
          bool in = std::find(task.parity.support.begin(), task.parity.support.end(), j) !=
                    task.parity.support.end();
          double v = corr[static_cast<size_t>(j)].value;
          if (in)
            min_in = std::min(min_in, v);
          else
            max_off = std::max(max_off, v);
        }
        table.add(step, phase, "corr_min_support", min_in);
        table.add(step, phase, "corr_max_off", max_off);
      }
    }
  }
  if (cfg.task.kind == "pcfg" && !cfg.probes.nt_levels.empty()) {
    LmTask task = lm_task_from_config(cfg.task, cfg.teacher_model, cfg.teacher_train.level);
    // Class = index of the nonterminal symbol among all nonterminals.
    std::vector<int> nt_class(static_cast<size_t>(task.grammar.num_symbols()), -1);
    int num_classes = 0;
    for (int s = 0; s < task.grammar.num_symbols(); ++s)
      if (task.grammar.is_nonterminal[static_cast<size_t>(s)])
        nt_class[static_cast<size_t>(s)] = num_classes++;

    struct ProbeTarget {
      std::string name;
      TransformerParams params;
    };
    std::vector<ProbeTarget> targets;
    targets.push_back({"teacher", transformer_from_checkpoint(
                                      load_checkpoint_file(ckpt_path(dir, ckpt_steps.back())))});
    if (fs::exists(fs::path(dir) / "students"))
      for (const auto& entry : fs::directory_iterator(fs::path(dir) / "students")) {
        std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.substr(name.size() - 4) == ".bin")
          targets.push_back({name.substr(0, name.size() - 4),
                             transformer_from_checkpoint(load_checkpoint_file(entry.path().string()))});
      }
    std::sort(targets.begin() + 1, targets.end(),
              [](const ProbeTarget& a, const ProbeTarget& b) { return a.name < b.name; });

    for (int level : cfg.probes.nt_levels) {
      Rng data_rng = rng.fork(static_cast<uint64_t>(level));
      std::vector<Sentence> train_sents, eval_sents;
      for (int i = 0; i < cfg.probes.nt_train; ++i)
        train_sents.push_back(sample_bounded_sentence(task, data_rng));
      for (int i = 0; i < cfg.probes.nt_eval; ++i)
        eval_sents.push_back(sample_bounded_sentence(task, data_rng));
      for (auto& target : targets) {
        auto embed = [&](const std::vector<Sentence>& sents) {
          std::vector<NtProbeExample> out;
          for (const auto& s : sents) {
            NtProbeExample ex;
            ex.len = static_cast<int>(s.tokens.size());
            Tape tape(false);
            Tensor e = transformer_embed(tape, target.params, s.tokens, 1, ex.len);
            ex.embeddings = e.values();
            if (level <= s.tree.depth - 1)
              for (auto& [pos, sym] : boundary_positions(s.tree, level))
                ex.labels.emplace_back(pos, nt_class[static_cast<size_t>(sym)]);
            out.push_back(std::move(ex));
          }
          return out;
        };
        auto train_data = embed(train_sents);
        auto eval_data = embed(eval_sents);
        NtProbeTrainConfig pc;
        pc.heads = cfg.probes.nt_heads;
        Rng probe_rng = rng.fork(1000 + static_cast<uint64_t>(level));
        NtProbe probe = train_nt_probe(train_data, target.params.cfg.width(), num_classes,
                                       task.max_len + 1, pc, probe_rng);
        double acc = eval_nt_probe(probe, eval_data);
        table.add(ckpt_steps.back(), "probe/" + target.name,
                  "nt_acc_l" + std::to_string(level), acc);
      }
    }
  }
}

void stage_measure(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table) {
  if (cfg.task.kind != "pcfg") return;
  if (cfg.probes.ngrams.empty() && cfg.probes.oracle_pairs == 0) return;
  auto ckpt_steps = stored_checkpoint_steps(dir);
  LmTask task = lm_task_from_config(cfg.task, cfg.teacher_model, cfg.teacher_train.level);
  Rng root(cfg.seed);
  Rng rng = root.fork(kMeasureStream);

  if (!cfg.probes.ngrams.empty() && cfg.probes.m_pairs > 0) {
    // One fixed pool of (sentence, position) pairs for every checkpoint.
    Rng pair_rng = rng.fork(1);
    std::vector<std::vector<int>> pool_tokens;
    std::vector<int> pool_pos;
    ContextMode mode =
        task.causal ? ContextMode::kAutoregressive : ContextMode::kBidirectional;
    while (static_cast<int>(pool_tokens.size()) < cfg.probes.m_pairs) {
      Sentence s = sample_bounded_sentence(task, pair_rng);
      int h = static_cast<int>(s.tokens.size());
      int lo = task.causal ? 1 : 0;
      int i = lo + static_cast<int>(pair_rng.below(static_cast<uint64_t>(h - lo)));
      pool_tokens.push_back(s.tokens);
      pool_pos.push_back(i);
    }
    for (int64_t step : ckpt_steps) {
      TransformerParams params =
          transformer_from_checkpoint(load_checkpoint_file(ckpt_path(dir, step)));
      MaskedLm lm{&params, task.vocab};
      for (int n : cfg.probes.ngrams) {
        std::vector<double> robust, close;
        for (size_t q = 0; q < pool_tokens.size(); ++q) {
          robust.push_back(m_robust(lm, pool_tokens[q], pool_pos[q], n, mode));
          close.push_back(m_close(lm, pool_tokens[q], pool_pos[q], n, mode));
        }
        table.add(step, "measure/teacher", "m_robust_n" + std::to_string(n),
                  percentile(robust, 0.5));
        table.add(step, "measure/teacher", "m_close_n" + std::to_string(n),
                  percentile(close, 0.5));
      }
    }
  }

  if (cfg.probes.oracle_pairs > 0) {
    TransformerParams params =
        transformer_from_checkpoint(load_checkpoint_file(ckpt_path(dir, ckpt_steps.back())));
    MaskedLm lm{&params, task.vocab};
    Rng oracle_rng = rng.fork(2);
    std::vector<double> tvs;
    int made = 0;
    while (made < cfg.probes.oracle_pairs) {
      Sentence s = sample_bounded_sentence(task, oracle_rng);
      MaskedExample ex = mask_with_retry(task, s.tokens, oracle_rng);
      // Pure-[mask] corruption so the model's evidence matches the oracle's.
      std::vector<int> input = ex.tokens;
      std::vector<int> visible(ex.tokens.begin(), ex.tokens.end());
      for (int pos : ex.masked_positions) {
        input[static_cast<size_t>(pos)] = task.vocab.mask_id();
        visible[static_cast<size_t>(pos)] = -1;
      }
      int pick = ex.masked_positions[static_cast<size_t>(
          oracle_rng.below(ex.masked_positions.size()))];
      auto exact = exact_masked_posterior(task.grammar, visible, pick);
      auto model_p = lm.posterior(input, pick);
      exact.resize(model_p.size(), 0.0);  // exact puts zero mass on special tokens
      tvs.push_back(tv_distance(model_p, exact));
      ++made;
    }
    table.add(ckpt_steps.back(), "measure/teacher", "oracle_tv_median",
              percentile(tvs, 0.5));
  }
}

std::string run_experiment(const ExperimentConfig& cfg) {
  if (cfg.out.empty()) throw std::invalid_argument("run_experiment: config.out is empty");
  std::string dir = cfg.out;
  fs::create_directories(dir);
  {
    std::ofstream f(dir + "/config.json", std::ios::binary);
    f << config_to_json(cfg) << "\n";
    std::ofstream b(dir + "/build.txt", std::ios::binary);
    b << kBuildStamp << " config_hash=" << config_hash(cfg) << "\n";
  }
  MetricTable table;
  auto run_stage = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      table.save(dir + "/metrics.csv");
      throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
    }
    table.save(dir + "/metrics.csv");
  };
  run_stage("teacher", [&] { stage_teacher(cfg, dir, table); });
  run_stage("distill", [&] { stage_distill(cfg, dir, table); });
  run_stage("probe", [&] { stage_probe(cfg, dir, table); });
  run_stage("measure", [&] { stage_measure(cfg, dir, table); });
  run_stage("report", [&] { write_report(dir); });
  return dir;
}

void generate_data(const ExperimentConfig& cfg, const std::string& dir, int64_t count) {
  fs::create_directories(dir);
  Rng root(cfg.seed);
  Rng rng = root.fork(kGenStream);
  if (cfg.task.kind == "pcfg") {
    LmTask task = lm_task_from_config(cfg.task, cfg.teacher_model, 1);
    std::ofstream f(dir + "/corpus.jsonl", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write corpus.jsonl");
    for (int64_t i = 0; i < count; ++i) {
      Sentence s = sample_bounded_sentence(task, rng);
      MaskedExample ex = mask_with_retry(task, s.tokens, rng);
      write_masked_jsonl(f, ex);
    }
  } else {
    BooleanTask task = boolean_task_from_config(cfg.task);
    auto batch = task.is_parity ? sample_batch(task.parity, rng, static_cast<int>(count))
                                : sample_batch(task.hierarchy, rng, static_cast<int>(count));
    std::ofstream f(dir + "/batch.csv", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write batch.csv");
    write_batch_csv(f, batch, task.dim());
  }
}

void sweep_lr(const ExperimentConfig& cfg, const std::string& dir) {
  if (cfg.teacher_train.lr_grid.empty())
    throw std::invalid_argument("sweep: teacher.train.lr_grid is empty");
  fs::create_directories(dir);
  MetricTable table;
  Rng root(cfg.seed);
  for (double lr : cfg.teacher_train.lr_grid) {
    TrainConfig tc = cfg.teacher_train;
    tc.lr = lr;
    tc.checkpoint_every = 0;
    std::string phase = "sweep/lr" + format_double(lr);
    Rng rng = root.fork(kTeacherStream);
    if (cfg.task.kind == "pcfg") {
      LmTask task = lm_task_from_config(cfg.task, cfg.teacher_model, tc.level);
      TransformerConfig tcfg = transformer_config_from(cfg.teacher_model, task);
      train_lm(task, tcfg, tc, rng, &table, phase);
    } else {
      BooleanTask task = boolean_task_from_config(cfg.task);
      Rng init_rng = rng.fork(7);
      MlpParams init = init_mlp_from_config(task, cfg.teacher_model, init_rng);
      train_mlp_classifier(task, std::move(init), tc, rng, &table, phase);
    }
  }
  table.save(dir + "/sweep_metrics.csv");
  std::ofstream f(dir + "/sweep.csv", std::ios::binary);
  f << "lr,final_metric\n";
  for (double lr : cfg.teacher_train.lr_grid) {
    std::string phase = "sweep/lr" + format_double(lr);
    std::string metric = cfg.task.kind == "pcfg" ? "eval_acc" : "eval_acc";
    f << format_double(lr) << "," << format_double(table.last_value(phase, metric)) << "\n";
  }
}

}  // namespace distillab
