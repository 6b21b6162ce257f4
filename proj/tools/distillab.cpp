#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "distillab/config.hpp"
#include "distillab/experiment.hpp"
#include "distillab/metrics.hpp"
#include "distillab/report.hpp"

namespace {

struct GlobalArgs {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

distillab::ExperimentConfig resolve(const GlobalArgs& g) {
  distillab::ExperimentConfig cfg = distillab::load_config_file(g.config);
  if (g.seed_set) cfg.seed = g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  if (g.threads > 0) cfg.threads = g.threads;
  if (cfg.out.empty()) throw std::runtime_error("no output directory (--out or config.out)");
  return cfg;
}

// Stage wrapper: loads the accumulated metrics for the run directory,
// appends, saves.
template <typename Fn>
void with_metrics(const distillab::ExperimentConfig& cfg, Fn&& fn) {
  std::filesystem::create_directories(cfg.out);
  distillab::MetricTable table;
  std::string path = cfg.out + "/metrics.csv";
  if (std::filesystem::exists(path)) table = distillab::MetricTable::load(path);
  fn(cfg, cfg.out, table);
  table.save(path);
}

void write_run_stamp(const distillab::ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  std::ofstream f(cfg.out + "/config.json", std::ios::binary);
  f << distillab::config_to_json(cfg) << "\n";
  std::ofstream b(cfg.out + "/build.txt", std::ios::binary);
  b << distillab::kBuildStamp << " config_hash=" << distillab::config_hash(cfg) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distillation laboratory for synthetic boolean and grammar tasks"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--out", g.out, "run directory (overrides config.out)");
  auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
  app.add_option("--threads", g.threads, "worker threads for probe evaluation");

  int64_t gen_count = 1000;
  auto* gen = app.add_subcommand("gen", "emit data/corpora for the configured task");
  gen->add_option("--count", gen_count, "number of samples/sentences");

  auto* teach = app.add_subcommand("train-teacher", "train the teacher and store checkpoints");
  auto* dist = app.add_subcommand("distill", "train students against stored teacher checkpoints");
  auto* probe = app.add_subcommand("probe", "monomial / non-terminal probes on stored models");
  auto* measure = app.add_subcommand("measure", "n-gram measures and exact-posterior checks");
  auto* report = app.add_subcommand("report", "summary tables from a run directory");
  auto* sweep = app.add_subcommand("sweep", "learning-rate sweep over config lr_grid");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (report->parsed()) {
      std::string dir = g.out;
      if (dir.empty() && !g.config.empty()) dir = resolve(g).out;
      if (dir.empty()) throw std::runtime_error("report needs --out or a config with out");
      distillab::write_report(dir);
      std::printf("report written under %s/report\n", dir.c_str());
      return 0;
    }
    distillab::ExperimentConfig cfg = resolve(g);
    if (gen->parsed()) {
      distillab::generate_data(cfg, cfg.out, gen_count);
      std::printf("data written under %s\n", cfg.out.c_str());
    } else if (teach->parsed()) {
      write_run_stamp(cfg);
      with_metrics(cfg, distillab::stage_teacher);
      std::printf("teacher artifacts under %s/teacher\n", cfg.out.c_str());
    } else if (dist->parsed()) {
      with_metrics(cfg, distillab::stage_distill);
      std::printf("student runs recorded under %s\n", cfg.out.c_str());
    } else if (probe->parsed()) {
      with_metrics(cfg, distillab::stage_probe);
      std::printf("probe metrics recorded under %s\n", cfg.out.c_str());
    } else if (measure->parsed()) {
      with_metrics(cfg, distillab::stage_measure);
      std::printf("measures recorded under %s\n", cfg.out.c_str());
    } else if (sweep->parsed()) {
      distillab::sweep_lr(cfg, cfg.out);
      std::printf("sweep results under %s\n", cfg.out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
