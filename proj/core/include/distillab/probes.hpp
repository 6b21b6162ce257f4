#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "distillab/masking.hpp"
#include "distillab/mlp.hpp"
#include "distillab/rng.hpp"
#include "distillab/transformer.hpp"

namespace distillab {

// Half the L1 distance between probability vectors.
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

// sign(sum x_i), ties (even d) resolved to +1.
double majority_sign(const double* x, int d);

// Fourier coefficient of Majority on d bits at subset size s, exact through
// integer-valued binomial sums; zero is returned exactly for even s on odd
// d. Enumerable for d within a few dozen bits.
double maj_fourier(int d, int s);
// Brute-force enumeration over all 2^d inputs (test oracle, d <= 25).
double maj_fourier_enum(int d, int s);

// Batched model posteriors / scores over inputs laid out row-major.
using BatchProbFn = std::function<void(const double* xs, int batch, double* p1)>;
using BatchScoreFn = std::function<void(const double* xs, int batch, double* f)>;

struct CorrelationEstimate {
  double value = 0.0;    // |E[g(x) * chi_A(x)]|
  double signed_value = 0.0;
  double std_error = 0.0;  // 0 in exact mode
  bool exact = false;
  int64_t samples = 0;
};

// E[g(x) * chi_A(x)] for every subset in `subsets`, sharing one sweep over
// the inputs. Exact enumeration when 2^d <= max_exact, else Monte-Carlo
// with mc_samples draws.
std::vector<CorrelationEstimate> monomial_correlations(
    const BatchProbFn& g, int d, const std::vector<std::vector<int>>& subsets,
    Rng& rng, int64_t max_exact = int64_t{1} << 22, int64_t mc_samples = 100000);

// All 2^d signed Fourier coefficients of g by fast Walsh-Hadamard transform
// of the full value table (small d only). Index bit j <=> coordinate j.
std::vector<double> fourier_spectrum(const BatchProbFn& g, int d);

// Claim-level oracle: enumerated population gradient of the hinge loss at
// symmetric initialization for weight (neuron, coord) against the closed
// form -a_i/2 * zeta * chi(w_i). Requires k >= 2 and d within enumeration
// budget.
struct GradientCheck {
  double enumerated = 0.0;
  double closed_form = 0.0;
};
GradientCheck verify_claim_gradient(const ParitySpec& spec, const MlpParams& params,
                                    int neuron, int coord);

// Majority-gated support correlation E[f(x) * 1[sum_j x_j >= 0] * x_i] per
// coordinate, exact when 2^d <= max_exact. The indicator form keeps the
// degree-1 signal (it equals (E[f x_i] + E[f Maj x_i]) / 2).
std::vector<double> support_correlations(const BatchScoreFn& f, int d, Rng& rng,
                                         int64_t max_exact = int64_t{1} << 22,
                                         int64_t mc_samples = 100000);

// ---- n-gram context measures over masked language models ----

std::vector<double> softmax_probs(const std::vector<double>& logits);

struct MaskedLm {
  const TransformerParams* params;
  TokenVocab vocab;

  // Model posterior at `position` for the given corrupted input.
  std::vector<double> posterior(const std::vector<int>& input, int position) const;
};

enum class ContextMode { kBidirectional, kAutoregressive };

// TV between predictions with only x_i masked and with the whole n-gram
// window around i masked. Bidirectional removal replaces tokens by [mask];
// autoregressive removal hides positions from attention and keeps the
// immediately preceding token ("skip n-gram"). Autoregressive mode is
// undefined at i = 0 (no context).
double m_robust(const MaskedLm& lm, const std::vector<int>& tokens, int i, int n,
                ContextMode mode);

// TV between predictions with full context and with only the n-gram window
// visible.
double m_close(const MaskedLm& lm, const std::vector<int>& tokens, int i, int n,
               ContextMode mode);

double percentile(std::vector<double> values, double q);  // q in [0,1]

// ---- training-curve phase detection ----

struct TransitionResult {
  bool found = false;
  int64_t c1 = 0;           // midpoint step of the steepest segment
  int64_t segment_start = 0;
  int64_t segment_end = 0;
};

// Smooths the series with a centered moving average of width `smooth`,
// locates the maximum-|slope| run, and reports its midpoint. A series with
// (near-)constant slope yields found = false.
TransitionResult detect_transition(const std::vector<std::pair<int64_t, double>>& series,
                                   int smooth = 1);

}  // namespace distillab
