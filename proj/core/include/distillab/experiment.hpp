#pragma once

#include <string>
#include <vector>

#include "distillab/config.hpp"
#include "distillab/grammar.hpp"
#include "distillab/masking.hpp"
#include "distillab/metrics.hpp"
#include "distillab/mlp.hpp"
#include "distillab/schedule.hpp"
#include "distillab/transformer.hpp"

namespace distillab {

extern const char* kBuildStamp;

// ---- boolean-task runs (MLP models) ----

struct BooleanTask {
  bool is_parity = true;
  ParitySpec parity;
  HierarchySpec hierarchy;

  int dim() const { return is_parity ? parity.d : hierarchy.d; }
  int classes() const { return is_parity ? 2 : hierarchy.num_classes(); }
  void sample(Rng& rng, int n, double* xs, int* ys) const;
};

BooleanTask boolean_task_from_config(const TaskConfig& t);
MlpParams init_mlp_from_config(const BooleanTask& task, const ModelConfig& m, Rng& rng);

struct MlpRun {
  MlpParams params;
  std::vector<int64_t> ckpt_steps;
  std::vector<MlpParams> ckpts;
  std::vector<std::pair<int64_t, double>> acc_curve;
};

MlpRun train_mlp_classifier(const BooleanTask& task, MlpParams init, const TrainConfig& tc,
                            Rng& rng, MetricTable* table, const std::string& phase);

struct MlpDistillSpec {
  std::string loss = "dl";  // dl | hinge_mix | ce
  double tau = 1e-4;
  double alpha = 0.0;
};

MlpRun distill_mlp_student(const BooleanTask& task, MlpParams init,
                           const std::vector<MlpParams>& teacher_ckpts,
                           const TeacherSchedule& schedule, const TrainConfig& tc,
                           const MlpDistillSpec& spec, Rng& rng, MetricTable* table,
                           const std::string& phase);

// ---- PCFG runs (transformer models) ----

struct LmTask {
  Grammar grammar;
  TokenVocab vocab;
  double mask_rate = 0.3;
  int max_len = 64;
  bool fresh_masks = true;
  bool causal = false;
  int level = 1;  // boundary-loss level in causal mode
};

LmTask lm_task_from_config(const TaskConfig& t, const ModelConfig& model, int level);
TransformerConfig transformer_config_from(const ModelConfig& m, const LmTask& task);

// Fixed evaluation corpus (sentences with one frozen masking).
struct LmEvalSet {
  std::vector<Sentence> sentences;
  std::vector<MaskedExample> masked;
};
LmEvalSet make_lm_eval_set(const LmTask& task, int count, Rng& rng);

struct LmEval {
  double loss = 0.0;
  double top1 = 0.0;
};
LmEval eval_lm(const LmTask& task, const TransformerParams& params, const LmEvalSet& eval);

struct LmRun {
  TransformerParams params;
  std::vector<int64_t> ckpt_steps;
  std::vector<TransformerParams> ckpts;
  std::vector<std::pair<int64_t, double>> loss_curve;
  std::vector<std::pair<int64_t, double>> acc_curve;
};

LmRun train_lm(const LmTask& task, const TransformerConfig& cfg, const TrainConfig& tc,
               Rng& rng, MetricTable* table, const std::string& phase);

struct LmDistillSpec {
  double tau = 1e-4;
};

LmRun distill_lm_student(const LmTask& task, const TransformerConfig& cfg,
                         const std::vector<TransformerParams>& teacher_ckpts,
                         const TeacherSchedule& schedule, const TrainConfig& tc,
                         const LmDistillSpec& spec, Rng& rng, MetricTable* table,
                         const std::string& phase);

// ---- staged orchestration over a run directory ----

void stage_teacher(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table);
void stage_distill(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table);
void stage_probe(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table);
void stage_measure(const ExperimentConfig& cfg, const std::string& dir, MetricTable& table);

// All stages plus the report; returns the run directory. Partial outputs are
// kept on failure and the failing stage is named in the exception.
std::string run_experiment(const ExperimentConfig& cfg);

// CLI helpers.
void generate_data(const ExperimentConfig& cfg, const std::string& dir, int64_t count);
void sweep_lr(const ExperimentConfig& cfg, const std::string& dir);

// Loads the teacher checkpoints stored by stage_teacher, ascending by step.
std::vector<int64_t> stored_checkpoint_steps(const std::string& dir);

}  // namespace distillab
