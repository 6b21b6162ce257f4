#include "distillab/metrics.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace distillab {

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void MetricTable::add(int64_t step, const std::string& phase, const std::string& metric,
                      double value) {
  records_.push_back({step, phase, metric, value});
}

std::vector<std::pair<int64_t, double>> MetricTable::series(const std::string& phase,
                                                            const std::string& metric) const {
  std::vector<std::pair<int64_t, double>> out;
  for (const auto& r : records_)
    if (r.phase == phase && r.metric == metric) out.emplace_back(r.step, r.value);
  return out;
}

std::vector<std::string> MetricTable::phases() const {
  std::vector<std::string> out;
  for (const auto& r : records_) {
    bool seen = false;
    for (const auto& p : out)
      if (p == r.phase) {
        seen = true;
        break;
      }
    if (!seen) out.push_back(r.phase);
  }
  return out;
}

double MetricTable::last_value(const std::string& phase, const std::string& metric) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (it->phase == phase && it->metric == metric) return it->value;
  throw std::runtime_error("metrics: no record for " + phase + "/" + metric);
}

void MetricTable::write_csv(std::ostream& os) const {
  os << "step,phase,metric,value\n";
  for (const auto& r : records_)
    os << r.step << "," << r.phase << "," << r.metric << "," << format_double(r.value)
       << "\n";
}

MetricTable MetricTable::read_csv(std::istream& is) {
  MetricTable t;
  std::string line;
  if (!std::getline(is, line) || line != "step,phase,metric,value")
    throw std::runtime_error("metrics: bad CSV header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step, phase, metric, value;
    if (!std::getline(ls, step, ',') || !std::getline(ls, phase, ',') ||
        !std::getline(ls, metric, ',') || !std::getline(ls, value))
      throw std::runtime_error("metrics: malformed row: " + line);
    t.records_.push_back({std::strtoll(step.c_str(), nullptr, 10), phase, metric,
                          std::strtod(value.c_str(), nullptr)});
  }
  return t;
}

void MetricTable::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write metrics: " + path);
  write_csv(f);
}

MetricTable MetricTable::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read metrics: " + path);
  return read_csv(f);
}

}  // namespace distillab
