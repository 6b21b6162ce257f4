#include "distillab/boolean_tasks.hpp"

#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

namespace distillab {

namespace {

void check_indices(const std::vector<int>& idx, int d, const char* what) {
  std::set<int> seen;
  for (int i : idx) {
    if (i < 0 || i >= d)
      throw std::invalid_argument(std::string(what) + ": index " + std::to_string(i) +
                                  " out of range [0," + std::to_string(d) + ")");
    if (!seen.insert(i).second)
      throw std::invalid_argument(std::string(what) + ": duplicate index " +
                                  std::to_string(i));
  }
}

void check_input(int n, int d, const char* op) {
  if (n != d)
    throw std::invalid_argument(std::string(op) + ": input has length " +
                                std::to_string(n) + ", spec expects " + std::to_string(d));
}

}  // namespace

ParitySpec ParitySpec::first_k(int d, int k) {
  ParitySpec s;
  s.d = d;
  s.k = k;
  for (int i = 0; i < k; ++i) s.support.push_back(i);
  s.validate();
  return s;
}

void ParitySpec::validate() const {
  if (k < 1) throw std::invalid_argument("parity spec: k must be >= 1");
  if (k > d) throw std::invalid_argument("parity spec: k must be <= d");
  if (static_cast<int>(support.size()) != k)
    throw std::invalid_argument("parity spec: support size must equal k");
  check_indices(support, d, "parity spec");
}

HierarchySpec HierarchySpec::first_blocks(int d, int depth, int k) {
  HierarchySpec s;
  s.d = d;
  s.depth = depth;
  int nodes = (1 << depth) - 1;
  for (int node = 0; node < nodes; ++node) {
    std::vector<int> f;
    for (int j = 0; j < k; ++j) f.push_back(node * k + j);
    s.features.push_back(std::move(f));
  }
  s.validate();
  return s;
}

void HierarchySpec::validate() const {
  if (depth < 1) throw std::invalid_argument("hierarchy spec: depth must be >= 1");
  int nodes = (1 << depth) - 1;
  if (static_cast<int>(features.size()) != nodes)
    throw std::invalid_argument("hierarchy spec: expected " + std::to_string(nodes) +
                                " feature sets, got " + std::to_string(features.size()));
  std::set<int> all;
  for (const auto& f : features) {
    if (f.empty()) throw std::invalid_argument("hierarchy spec: empty feature set");
    check_indices(f, d, "hierarchy spec");
    for (int i : f)
      if (!all.insert(i).second)
        throw std::invalid_argument("hierarchy spec: feature sets must be disjoint");
  }
}

int parity_label(const ParitySpec& spec, const double* x, int n) {
  check_input(n, spec.d, "parity_label");
  double prod = 1.0;
  for (int i : spec.support) prod *= x[i];
  return prod > 0.0 ? 1 : 2;
}

int hierarchy_label(const HierarchySpec& spec, const double* x, int n) {
  check_input(n, spec.d, "hierarchy_label");
  // Heap-indexed descent: node j has children 2j+1 (left) and 2j+2 (right).
  int node = 0;
  int internal = (1 << spec.depth) - 1;
  while (node < internal) {
    double prod = 1.0;
    for (int i : spec.features[static_cast<size_t>(node)]) prod *= x[i];
    node = prod < 0.0 ? 2 * node + 1 : 2 * node + 2;
  }
  return node - internal + 1;
}

std::vector<BooleanSample> sample_batch(const ParitySpec& spec, Rng& rng, int n) {
  std::vector<BooleanSample> out(static_cast<size_t>(n));
  for (auto& s : out) {
    s.x.resize(static_cast<size_t>(spec.d));
    rng.sign_vector(s.x.data(), spec.d);
    s.y = parity_label(spec, s.x.data(), spec.d);
  }
  return out;
}

std::vector<BooleanSample> sample_batch(const HierarchySpec& spec, Rng& rng, int n) {
  std::vector<BooleanSample> out(static_cast<size_t>(n));
  for (auto& s : out) {
    s.x.resize(static_cast<size_t>(spec.d));
    rng.sign_vector(s.x.data(), spec.d);
    s.y = hierarchy_label(spec, s.x.data(), spec.d);
  }
  return out;
}

void sample_batch_flat(const ParitySpec& spec, Rng& rng, int n, double* xs, int* ys) {
  for (int i = 0; i < n; ++i) {
    double* row = xs + static_cast<size_t>(i) * spec.d;
    rng.sign_vector(row, spec.d);
    ys[i] = parity_label(spec, row, spec.d);
  }
}

void sample_batch_flat(const HierarchySpec& spec, Rng& rng, int n, double* xs, int* ys) {
  for (int i = 0; i < n; ++i) {
    double* row = xs + static_cast<size_t>(i) * spec.d;
    rng.sign_vector(row, spec.d);
    ys[i] = hierarchy_label(spec, row, spec.d);
  }
}

void write_batch_csv(std::ostream& os, const std::vector<BooleanSample>& batch, int d) {
  for (int i = 0; i < d; ++i) os << "x_" << i << ",";
  os << "y\n";
  for (const auto& s : batch) {
    for (double v : s.x) os << (v > 0 ? 1 : -1) << ",";
    os << s.y << "\n";
  }
}

}  // namespace distillab
