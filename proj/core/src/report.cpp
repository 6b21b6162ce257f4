#include "distillab/report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "distillab/config.hpp"
#include "distillab/experiment.hpp"
#include "distillab/metrics.hpp"

namespace distillab {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("report: cannot write " + path);
  return f;
}

}  // namespace

void write_report(const std::string& dir) {
  std::string metrics_path = dir + "/metrics.csv";
  if (!fs::exists(metrics_path))
    throw std::runtime_error("report: missing " + metrics_path);
  MetricTable table = MetricTable::load(metrics_path);
  fs::create_directories(fs::path(dir) / "report");

  // Accuracy-vs-steps series for every phase that logged eval_acc.
  {
    auto acc = open_out(dir + "/report/accuracy.csv");
    acc << "phase,step,eval_acc\n";
    auto plot = open_out(dir + "/report/plot_accuracy.dat");
    for (const auto& phase : table.phases()) {
      auto series = table.series(phase, "eval_acc");
      if (series.empty()) continue;
      plot << "# " << phase << "\n";
      for (auto& [step, v] : series) {
        acc << phase << "," << step << "," << format_double(v) << "\n";
        plot << step << " " << format_double(v) << "\n";
      }
      plot << "\n\n";
    }
  }

  // Final accuracy per student run.
  {
    auto fin = open_out(dir + "/report/final_accuracy.csv");
    fin << "phase,budget,final_acc\n";
    for (const auto& r : table.records())
      if (r.metric == "final_acc")
        fin << r.phase << "," << r.step << "," << format_double(r.value) << "\n";
  }

  // Monomial correlation grouping: in-support mean vs off-support mean/std.
  {
    std::vector<int> support;
    std::string cfg_path = dir + "/config.json";
    if (fs::exists(cfg_path)) {
      std::ifstream f(cfg_path);
      std::ostringstream ss;
      ss << f.rdbuf();
      ExperimentConfig cfg = config_from_json(ss.str());
      if (cfg.task.kind == "parity") {
        BooleanTask task = boolean_task_from_config(cfg.task);
        support = task.parity.support;
      }
    }
    auto corr = open_out(dir + "/report/correlations.csv");
    corr << "phase,step,coord,value\n";
    struct Group {
      std::string phase;
      int64_t step;
      std::vector<double> in, off;
    };
    std::vector<Group> groups;
    for (const auto& r : table.records()) {
      if (r.metric.rfind("corr_x", 0) != 0) continue;
      int coord = std::atoi(r.metric.c_str() + 6);
      corr << r.phase << "," << r.step << "," << coord << "," << format_double(r.value)
           << "\n";
      Group* g = nullptr;
      for (auto& cand : groups)
        if (cand.phase == r.phase && cand.step == r.step) g = &cand;
      if (!g) {
        groups.push_back({r.phase, r.step, {}, {}});
        g = &groups.back();
      }
      bool in = false;
      for (int s : support) in = in || s == coord;
      (in ? g->in : g->off).push_back(r.value);
    }
    if (!support.empty()) {
      auto grouped = open_out(dir + "/report/correlation_groups.csv");
      grouped << "phase,step,in_mean,off_mean,off_std\n";
      for (const auto& g : groups) {
        auto mean = [](const std::vector<double>& v) {
          double s = 0.0;
          for (double x : v) s += x;
          return v.empty() ? 0.0 : s / static_cast<double>(v.size());
        };
        double om = mean(g.off);
        double var = 0.0;
        for (double x : g.off) var += (x - om) * (x - om);
        double osd = g.off.empty() ? 0.0 : std::sqrt(var / static_cast<double>(g.off.size()));
        grouped << g.phase << "," << g.step << "," << format_double(mean(g.in)) << ","
                << format_double(om) << "," << format_double(osd) << "\n";
      }
    }
  }

  // n-gram measures per checkpoint.
  {
    auto ms = open_out(dir + "/report/measures.csv");
    ms << "phase,step,metric,value\n";
    for (const auto& r : table.records())
      if (r.metric.rfind("m_robust_n", 0) == 0 || r.metric.rfind("m_close_n", 0) == 0 ||
          r.metric.rfind("oracle_tv", 0) == 0)
        ms << r.phase << "," << r.step << "," << r.metric << "," << format_double(r.value)
           << "\n";
  }

  // Non-terminal probe table.
  {
    auto nt = open_out(dir + "/report/nt_probe.csv");
    nt << "phase,level,accuracy\n";
    for (const auto& r : table.records())
      if (r.metric.rfind("nt_acc_l", 0) == 0)
        nt << r.phase << "," << r.metric.substr(8) << "," << format_double(r.value) << "\n";
  }
}

}  // namespace distillab
