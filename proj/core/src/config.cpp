#include "distillab/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "distillab/metrics.hpp"

namespace distillab {

using nlohmann::json;

std::string StrategySpec::name() const {
  if (variant == "two_shot") return "two_shot_t" + std::to_string(t);
  if (variant == "n_t") return "n" + std::to_string(n) + "_t" + std::to_string(t);
  if (variant == "equal_split") return "equal_split_n" + std::to_string(n);
  if (variant == "kappa_split") {
    std::ostringstream os;
    os << "kappa" << format_double(kappa) << "_n" << n;
    return os.str();
  }
  return variant;
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

TaskConfig task_from_json(const json& j) {
  TaskConfig t;
  t.kind = j.at("kind").get<std::string>();
  get_if(j, "d", t.d);
  get_if(j, "k", t.k);
  get_if(j, "depth", t.depth);
  get_if(j, "support", t.support);
  get_if(j, "grammar", t.grammar);
  get_if(j, "mask_rate", t.mask_rate);
  get_if(j, "max_len", t.max_len);
  get_if(j, "require_uniform_depth", t.require_uniform_depth);
  get_if(j, "fresh_masks", t.fresh_masks);
  return t;
}

json task_to_json(const TaskConfig& t) {
  json j;
  j["kind"] = t.kind;
  j["d"] = t.d;
  j["k"] = t.k;
  j["depth"] = t.depth;
  j["support"] = t.support;
  j["grammar"] = t.grammar;
  j["mask_rate"] = t.mask_rate;
  j["max_len"] = t.max_len;
  j["require_uniform_depth"] = t.require_uniform_depth;
  j["fresh_masks"] = t.fresh_masks;
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  get_if(j, "kind", m.kind);
  get_if(j, "width", m.width);
  get_if(j, "output", m.output);
  get_if(j, "layers", m.layers);
  get_if(j, "heads", m.heads);
  get_if(j, "head_dim", m.head_dim);
  get_if(j, "mode", m.mode);
  return m;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["kind"] = m.kind;
  j["width"] = m.width;
  j["output"] = m.output;
  j["layers"] = m.layers;
  j["heads"] = m.heads;
  j["head_dim"] = m.head_dim;
  j["mode"] = m.mode;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  get_if(j, "optimizer", t.optimizer);
  get_if(j, "loss", t.loss);
  get_if(j, "lr", t.lr);
  get_if(j, "lr_floor", t.lr_floor);
  get_if(j, "warmup", t.warmup);
  get_if(j, "cosine", t.cosine);
  get_if(j, "steps", t.steps);
  get_if(j, "batch", t.batch);
  get_if(j, "weight_decay", t.weight_decay);
  get_if(j, "eval_every", t.eval_every);
  get_if(j, "eval_samples", t.eval_samples);
  get_if(j, "checkpoint_every", t.checkpoint_every);
  get_if(j, "level", t.level);
  get_if(j, "lr_grid", t.lr_grid);
  return t;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["optimizer"] = t.optimizer;
  j["loss"] = t.loss;
  j["lr"] = t.lr;
  j["lr_floor"] = t.lr_floor;
  j["warmup"] = t.warmup;
  j["cosine"] = t.cosine;
  j["steps"] = t.steps;
  j["batch"] = t.batch;
  j["weight_decay"] = t.weight_decay;
  j["eval_every"] = t.eval_every;
  j["eval_samples"] = t.eval_samples;
  j["checkpoint_every"] = t.checkpoint_every;
  j["level"] = t.level;
  j["lr_grid"] = t.lr_grid;
  return j;
}

StrategySpec strategy_from_json(const json& j) {
  StrategySpec s;
  s.variant = j.at("variant").get<std::string>();
  get_if(j, "t", s.t);
  get_if(j, "n", s.n);
  get_if(j, "kappa", s.kappa);
  get_if(j, "steps", s.steps);
  get_if(j, "durations", s.durations);
  return s;
}

json strategy_to_json(const StrategySpec& s) {
  json j;
  j["variant"] = s.variant;
  j["t"] = s.t;
  j["n"] = s.n;
  j["kappa"] = s.kappa;
  j["steps"] = s.steps;
  j["durations"] = s.durations;
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config: parse failure: ") + e.what());
  }
  ExperimentConfig c;
  if (!j.contains("seed")) throw std::runtime_error("config: seed is required");
  c.seed = j.at("seed").get<uint64_t>();
  get_if(j, "threads", c.threads);
  c.task = task_from_json(j.at("task"));
  if (j.contains("teacher")) {
    c.teacher_model = model_from_json(j.at("teacher").value("model", json::object()));
    c.teacher_train = train_from_json(j.at("teacher").value("train", json::object()));
  }
  if (j.contains("student")) {
    c.student_model = model_from_json(j.at("student").value("model", json::object()));
    c.student_train = train_from_json(j.at("student").value("train", json::object()));
  }
  if (j.contains("distill")) {
    const json& d = j.at("distill");
    get_if(d, "tau", c.distill.tau);
    get_if(d, "loss", c.distill.loss);
    get_if(d, "alpha", c.distill.alpha);
    get_if(d, "seeds", c.distill.seeds);
    get_if(d, "budgets", c.distill.budgets);
    if (d.contains("strategies"))
      for (const auto& s : d.at("strategies")) c.distill.strategies.push_back(strategy_from_json(s));
  }
  if (j.contains("probes")) {
    const json& p = j.at("probes");
    get_if(p, "monomial_degree1", c.probes.monomial_degree1);
    get_if(p, "transition_metric", c.probes.transition_metric);
    get_if(p, "smooth", c.probes.smooth);
    get_if(p, "ngrams", c.probes.ngrams);
    get_if(p, "m_pairs", c.probes.m_pairs);
    get_if(p, "nt_levels", c.probes.nt_levels);
    get_if(p, "nt_train", c.probes.nt_train);
    get_if(p, "nt_eval", c.probes.nt_eval);
    get_if(p, "nt_heads", c.probes.nt_heads);
    get_if(p, "oracle_pairs", c.probes.oracle_pairs);
  }
  get_if(j, "out", c.out);
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["task"] = task_to_json(c.task);
  j["teacher"]["model"] = model_to_json(c.teacher_model);
  j["teacher"]["train"] = train_to_json(c.teacher_train);
  j["student"]["model"] = model_to_json(c.student_model);
  j["student"]["train"] = train_to_json(c.student_train);
  json d;
  d["tau"] = c.distill.tau;
  d["loss"] = c.distill.loss;
  d["alpha"] = c.distill.alpha;
  d["seeds"] = c.distill.seeds;
  d["budgets"] = c.distill.budgets;
  d["strategies"] = json::array();
  for (const auto& s : c.distill.strategies) d["strategies"].push_back(strategy_to_json(s));
  j["distill"] = std::move(d);
  json p;
  p["monomial_degree1"] = c.probes.monomial_degree1;
  p["transition_metric"] = c.probes.transition_metric;
  p["smooth"] = c.probes.smooth;
  p["ngrams"] = c.probes.ngrams;
  p["m_pairs"] = c.probes.m_pairs;
  p["nt_levels"] = c.probes.nt_levels;
  p["nt_train"] = c.probes.nt_train;
  p["nt_eval"] = c.probes.nt_eval;
  p["nt_heads"] = c.probes.nt_heads;
  p["oracle_pairs"] = c.probes.oracle_pairs;
  j["probes"] = std::move(p);
  j["out"] = c.out;
  return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a(config_to_json(cfg)); }

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  ExperimentConfig c = config_from_json(ss.str());
  if (c.task.kind == "pcfg") {
    if (c.task.grammar.empty())
      throw std::runtime_error("config: pcfg task requires a grammar file");
    std::filesystem::path g(c.task.grammar);
    if (g.is_relative()) g = std::filesystem::path(path).parent_path() / g;
    if (!std::filesystem::exists(g))
      throw std::runtime_error("config: grammar file does not exist: " + g.string());
    c.task.grammar = std::filesystem::absolute(g).lexically_normal().string();
  }
  return c;
}

}  // namespace distillab
