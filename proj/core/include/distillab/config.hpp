#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace distillab {

struct TaskConfig {
  std::string kind;  // parity | hierarchy | pcfg
  int d = 0;
  int k = 0;
  int depth = 0;
  std::vector<int> support;  // optional explicit parity support
  std::string grammar;       // pcfg rule file (resolved at load)
  double mask_rate = 0.3;
  int max_len = 64;
  bool require_uniform_depth = false;
  bool fresh_masks = true;
};

struct ModelConfig {
  std::string kind = "mlp";  // mlp | transformer
  int width = 0;             // mlp hidden width
  std::string output = "two_logit";  // scalar | two_logit | logits
  int layers = 2;
  int heads = 2;
  int head_dim = 8;
  std::string mode = "bidirectional";  // bidirectional | causal
};

struct TrainConfig {
  std::string optimizer = "sgd";  // sgd | adam
  std::string loss = "ce";        // ce | hinge | masked_ce | level_ce
  double lr = 0.01;
  double lr_floor = 0.0;
  int64_t warmup = 0;
  bool cosine = false;
  int64_t steps = 0;
  int batch = 1;
  double weight_decay = 0.0;
  int64_t eval_every = 0;
  int eval_samples = 2048;
  int64_t checkpoint_every = 0;
  int level = 1;  // level-boundary loss level in causal mode
  std::vector<double> lr_grid;  // sweep candidates
};

struct StrategySpec {
  std::string variant;  // one_shot | two_shot | n_t | equal_split | kappa_split | explicit | ce
  int64_t t = 0;        // two_shot switch step / n_t per-checkpoint steps
  int n = 0;
  double kappa = 0.5;
  std::vector<int64_t> steps;      // explicit: checkpoint steps
  std::vector<int64_t> durations;  // explicit: matching durations

  std::string name() const;
};

struct DistillSection {
  double tau = 1e-4;
  std::string loss = "dl";  // dl | hinge_mix | masked_dl | level_dl
  double alpha = 0.0;
  std::vector<StrategySpec> strategies;
  std::vector<uint64_t> seeds = {1};
  std::vector<int64_t> budgets;  // student horizons; empty = [student_train.steps]
};

struct ProbesSection {
  bool monomial_degree1 = false;
  std::string transition_metric = "eval_acc";
  int smooth = 3;
  std::vector<int> ngrams;
  int m_pairs = 0;
  std::vector<int> nt_levels;
  int nt_train = 4096;
  int nt_eval = 512;
  int nt_heads = 2;
  int oracle_pairs = 0;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  int threads = 1;
  TaskConfig task;
  ModelConfig teacher_model;
  TrainConfig teacher_train;
  ModelConfig student_model;
  TrainConfig student_train;
  DistillSection distill;
  ProbesSection probes;
  std::string out;
};

ExperimentConfig config_from_json(const std::string& text);
// Canonical (sorted-key) serialization; hashing this makes the config hash
// independent of key order in the source file.
std::string config_to_json(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

// Loads, resolves the grammar path relative to the config file, and checks
// referenced files exist.
ExperimentConfig load_config_file(const std::string& path);

}  // namespace distillab
