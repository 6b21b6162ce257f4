#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace distillab {

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

uint64_t fnv1a(const std::string& s);

struct MetricRecord {
  int64_t step = 0;
  std::string phase;
  std::string metric;
  double value = 0.0;
};

// Append-only metric log; serialized as `step,phase,metric,value` CSV.
class MetricTable {
 public:
  void add(int64_t step, const std::string& phase, const std::string& metric, double value);
  const std::vector<MetricRecord>& records() const { return records_; }

  std::vector<std::pair<int64_t, double>> series(const std::string& phase,
                                                 const std::string& metric) const;
  // Distinct phases, in first-appearance order.
  std::vector<std::string> phases() const;
  double last_value(const std::string& phase, const std::string& metric) const;

  void write_csv(std::ostream& os) const;
  static MetricTable read_csv(std::istream& is);
  void save(const std::string& path) const;
  static MetricTable load(const std::string& path);

 private:
  std::vector<MetricRecord> records_;
};

}  // namespace distillab
