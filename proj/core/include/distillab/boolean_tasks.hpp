#pragma once

#include <iosfwd>
#include <vector>

#include "distillab/rng.hpp"

namespace distillab {

// (d, k)-sparse parity: class 1 when the product over the support is +1,
// class 2 otherwise.
struct ParitySpec {
  int d = 0;
  int k = 0;
  std::vector<int> support;  // k distinct indices in [0, d)

  static ParitySpec first_k(int d, int k);
  void validate() const;
};

// Depth-D binary decision tree over disjoint parity features, one feature
// set per internal node in breadth-first order (2^D - 1 sets). At a node the
// product over its feature set picks the child: -1 goes left, +1 goes right.
// Classes are 1-based leaf indices in left-to-right order.
struct HierarchySpec {
  int d = 0;
  int depth = 0;
  std::vector<std::vector<int>> features;

  // Feature sets of size k carved from the first (2^D - 1) * k coordinates.
  static HierarchySpec first_blocks(int d, int depth, int k);
  void validate() const;
  int num_classes() const { return 1 << depth; }
};

struct BooleanSample {
  std::vector<double> x;  // entries in {+1, -1}
  int y = 0;              // 1-based class
};

int parity_label(const ParitySpec& spec, const double* x, int n);
int hierarchy_label(const HierarchySpec& spec, const double* x, int n);

// +-1 class encoding of a parity label: +1 <-> class 1.
inline double parity_sign(int label) { return label == 1 ? 1.0 : -1.0; }

std::vector<BooleanSample> sample_batch(const ParitySpec& spec, Rng& rng, int n);
std::vector<BooleanSample> sample_batch(const HierarchySpec& spec, Rng& rng, int n);

// Fills a flat row-major [n, d] buffer and labels; avoids per-sample
// allocation in training loops.
void sample_batch_flat(const ParitySpec& spec, Rng& rng, int n, double* xs, int* ys);
void sample_batch_flat(const HierarchySpec& spec, Rng& rng, int n, double* xs, int* ys);

// Debug dump: header x_0,...,x_{d-1},y then one row per sample.
void write_batch_csv(std::ostream& os, const std::vector<BooleanSample>& batch, int d);

}  // namespace distillab
