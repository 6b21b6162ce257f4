#include "distillab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace distillab {

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("tv_distance: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double majority_sign(const double* x, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += x[i];
  return s >= 0.0 ? 1.0 : -1.0;
}

namespace {

// Binomial coefficients as exact doubles (integer-valued well below 2^53
// for the d used here).
double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

// E[Maj_tie(u) * chi_A(u)] for |A| = s, where Maj_tie breaks zero sums with
// `tie` (+1 or -1; irrelevant for odd d). Grouping inputs by the number of
// +1 entries inside and outside A makes every term an integer.
double maj_fourier_tie(int d, int s, double tie) {
  if (s < 0 || s > d) throw std::invalid_argument("maj_fourier: s outside [0, d]");
  if (d % 2 == 1 && s % 2 == 0) return 0.0;  // odd symmetric function
  double total = 0.0;
  for (int a = 0; a <= s; ++a) {
    double chi = (s - a) % 2 == 0 ? 1.0 : -1.0;
    for (int g = 0; g <= d - s; ++g) {
      int sum = 2 * (a + g) - d;
      double maj = sum > 0 ? 1.0 : (sum < 0 ? -1.0 : tie);
      total += binom(s, a) * binom(d - s, g) * chi * maj;
    }
  }
  return total / std::ldexp(1.0, d);
}

}  // namespace

double maj_fourier(int d, int s) {
  if (d < 1 || d > 52)
    throw std::invalid_argument("maj_fourier: d outside exact-arithmetic budget");
  return maj_fourier_tie(d, s, 1.0);
}

double maj_fourier_enum(int d, int s) {
  if (d > 25) throw std::invalid_argument("maj_fourier_enum: d exceeds enumeration budget");
  int64_t n = int64_t{1} << d;
  int64_t acc = 0;  // sum of +-1 terms, exact in int64
  int64_t smask = (int64_t{1} << s) - 1;
  for (int64_t bits = 0; bits < n; ++bits) {
    int pop = __builtin_popcountll(static_cast<unsigned long long>(bits));
    int maj = 2 * pop >= d ? 1 : -1;  // ties to +1
    int ones_in_s = __builtin_popcountll(static_cast<unsigned long long>(bits & smask));
    int chi = (s - ones_in_s) % 2 == 0 ? 1 : -1;
    acc += maj * chi;
  }
  return static_cast<double>(acc) / std::ldexp(1.0, d);
}

std::vector<CorrelationEstimate> monomial_correlations(
    const BatchProbFn& g, int d, const std::vector<std::vector<int>>& subsets, Rng& rng,
    int64_t max_exact, int64_t mc_samples) {
  for (const auto& a : subsets) {
    if (a.empty()) throw std::invalid_argument("monomial_correlations: empty subset");
    for (int i : a)
      if (i < 0 || i >= d)
        throw std::invalid_argument("monomial_correlations: coordinate out of range");
  }
  bool exact = (int64_t{1} << d) <= max_exact;
  int64_t total = exact ? (int64_t{1} << d) : mc_samples;
  const int64_t chunk = 8192;
  std::vector<double> xs(static_cast<size_t>(chunk) * d);
  std::vector<double> vals(static_cast<size_t>(chunk));
  std::vector<double> sums(subsets.size(), 0.0);
  std::vector<double> sq_sums(subsets.size(), 0.0);
  for (int64_t base = 0; base < total; base += chunk) {
    int64_t nb = std::min(chunk, total - base);
    for (int64_t s = 0; s < nb; ++s) {
      double* row = xs.data() + static_cast<size_t>(s) * d;
      if (exact) {
        int64_t bits = base + s;
        for (int j = 0; j < d; ++j) row[j] = (bits >> j) & 1 ? 1.0 : -1.0;
      } else {
        rng.sign_vector(row, d);
      }
    }
    g(xs.data(), static_cast<int>(nb), vals.data());
    for (size_t ai = 0; ai < subsets.size(); ++ai) {
      double local = 0.0, local_sq = 0.0;
      for (int64_t s = 0; s < nb; ++s) {
        const double* row = xs.data() + static_cast<size_t>(s) * d;
        double chi = 1.0;
        for (int j : subsets[ai]) chi *= row[j];
        double term = vals[static_cast<size_t>(s)] * chi;
        local += term;
        local_sq += term * term;
      }
      sums[ai] += local;
      sq_sums[ai] += local_sq;
    }
  }
  std::vector<CorrelationEstimate> out(subsets.size());
  for (size_t ai = 0; ai < subsets.size(); ++ai) {
    double mean = sums[ai] / static_cast<double>(total);
    out[ai].signed_value = mean;
    out[ai].value = std::abs(mean);
    out[ai].exact = exact;
    out[ai].samples = total;
    if (!exact) {
      double var = sq_sums[ai] / static_cast<double>(total) - mean * mean;
      out[ai].std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(total));
    }
  }
  return out;
}

std::vector<double> fourier_spectrum(const BatchProbFn& g, int d) {
  if (d > 20) throw std::invalid_argument("fourier_spectrum: d too large for a full table");
  int64_t n = int64_t{1} << d;
  std::vector<double> table(static_cast<size_t>(n));
  const int64_t chunk = 8192;
  std::vector<double> xs(static_cast<size_t>(chunk) * d);
  for (int64_t base = 0; base < n; base += chunk) {
    int64_t nb = std::min(chunk, n - base);
    for (int64_t s = 0; s < nb; ++s)
      for (int j = 0; j < d; ++j)
        xs[static_cast<size_t>(s * d + j)] = ((base + s) >> j) & 1 ? 1.0 : -1.0;
    g(xs.data(), static_cast<int>(nb), table.data() + base);
  }
  // In-place Walsh-Hadamard with the (u+v, v-u) butterfly, which under the
  // bit-set -> +1 encoding lands coefficient E[g * chi_S] at index S.
  for (int64_t h = 1; h < n; h <<= 1)
    for (int64_t i = 0; i < n; i += h << 1)
      for (int64_t j = i; j < i + h; ++j) {
        double u = table[static_cast<size_t>(j)];
        double v = table[static_cast<size_t>(j + h)];
        table[static_cast<size_t>(j)] = u + v;
        table[static_cast<size_t>(j + h)] = v - u;
      }
  for (auto& v : table) v /= static_cast<double>(n);
  return table;
}

GradientCheck verify_claim_gradient(const ParitySpec& spec, const MlpParams& params,
                                    int neuron, int coord) {
  spec.validate();
  if (spec.k < 2)
    throw std::invalid_argument("verify_claim_gradient: needs k >= 2");
  if (spec.d > 25)
    throw std::invalid_argument("verify_claim_gradient: d exceeds enumeration budget");
  int d = spec.d;
  int m = params.width();
  if (neuron < 0 || neuron >= m || coord < 0 || coord >= d)
    throw std::invalid_argument("verify_claim_gradient: neuron/coord out of range");
  const double* w = params.w.data() + static_cast<size_t>(neuron) * d;
  double b = params.b.data()[neuron];
  double a = params.a.data()[neuron];

  // Population gradient of the hinge loss at the symmetric-init zero
  // function: -E[a * 1[<w,x>+b > 0] * x_j * y].
  int64_t n = int64_t{1} << d;
  double acc = 0.0;
  std::vector<double> x(static_cast<size_t>(d));
  for (int64_t bits = 0; bits < n; ++bits) {
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] = (bits >> j) & 1 ? 1.0 : -1.0;
    double z = b;
    for (int j = 0; j < d; ++j) z += w[j] * x[static_cast<size_t>(j)];
    if (z <= 0.0) continue;
    double y = 1.0;
    for (int j : spec.support) y *= x[static_cast<size_t>(j)];
    acc += x[static_cast<size_t>(coord)] * y;
  }
  GradientCheck out;
  out.enumerated = -a * acc / std::ldexp(1.0, d);

  bool in_support =
      std::find(spec.support.begin(), spec.support.end(), coord) != spec.support.end();
  int s = in_support ? spec.k - 1 : spec.k + 1;
  double chi = 1.0;
  for (int j : spec.support)
    if (j != coord) chi *= w[j];
  if (!in_support) chi *= w[coord];
  // Ties at <w,x> = 0 (even d) resolve through the bias sign.
  double zeta = maj_fourier_tie(d, s, b > 0.0 ? 1.0 : -1.0);
  out.closed_form = -0.5 * a * zeta * chi;
  return out;
}

std::vector<double> support_correlations(const BatchScoreFn& f, int d, Rng& rng,
                                         int64_t max_exact, int64_t mc_samples) {
  bool exact = (int64_t{1} << d) <= max_exact;
  int64_t total = exact ? (int64_t{1} << d) : mc_samples;
  const int64_t chunk = 8192;
  std::vector<double> xs(static_cast<size_t>(chunk) * d);
  std::vector<double> vals(static_cast<size_t>(chunk));
  std::vector<double> sums(static_cast<size_t>(d), 0.0);
  for (int64_t base = 0; base < total; base += chunk) {
    int64_t nb = std::min(chunk, total - base);
    for (int64_t s = 0; s < nb; ++s) {
      double* row = xs.data() + static_cast<size_t>(s) * d;
      if (exact) {
        int64_t bits = base + s;
        for (int j = 0; j < d; ++j) row[j] = (bits >> j) & 1 ? 1.0 : -1.0;
      } else {
        rng.sign_vector(row, d);
      }
    }
    f(xs.data(), static_cast<int>(nb), vals.data());
    for (int64_t s = 0; s < nb; ++s) {
      const double* row = xs.data() + static_cast<size_t>(s) * d;
      // 0/1 majority indicator: 1[sum x >= 0]. The +-1-signed form kills the
      // degree-1 term identically (E[sign-majority] = 0), so the separation
      // the first-stage teacher carries lives in the indicator-weighted
      // correlation 1[..] = (1 + sign)/2.
      if (majority_sign(row, d) < 0.0) continue;
      double base_term = vals[static_cast<size_t>(s)];
      for (int j = 0; j < d; ++j) sums[static_cast<size_t>(j)] += base_term * row[j];
    }
  }
  for (auto& v : sums) v /= static_cast<double>(total);
  return sums;
}

std::vector<double> softmax_probs(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::vector<double> MaskedLm::posterior(const std::vector<int>& input, int position) const {
  Tape tape(false);
  int h = static_cast<int>(input.size());
  Tensor logits = transformer_forward(tape, *params, input, 1, h);
  const double* row = logits.data() + static_cast<size_t>(position) * params->cfg.vocab;
  std::vector<double> z(row, row + params->cfg.vocab);
  return softmax_probs(z);
}

namespace {

std::vector<double> causal_posterior(const MaskedLm& lm, const std::vector<int>& tokens,
                                     int i, const std::vector<uint8_t>* visible_sentence) {
  // BOS-prefixed input; prediction of x_i is read at row i.
  int h = static_cast<int>(tokens.size());
  std::vector<int> input(static_cast<size_t>(h) + 1);
  input[0] = lm.vocab.bos_id();
  std::copy(tokens.begin(), tokens.end(), input.begin() + 1);
  std::vector<uint8_t> visible(static_cast<size_t>(h) + 1, 1);
  if (visible_sentence)
    for (int j = 0; j < h; ++j) visible[static_cast<size_t>(j) + 1] = (*visible_sentence)[static_cast<size_t>(j)];
  Tape tape(false);
  Tensor logits = transformer_forward(tape, *lm.params, input, 1, h + 1, &visible);
  const double* row = logits.data() + static_cast<size_t>(i) * lm.params->cfg.vocab;
  std::vector<double> z(row, row + lm.params->cfg.vocab);
  return softmax_probs(z);
}

}  // namespace

double m_robust(const MaskedLm& lm, const std::vector<int>& tokens, int i, int n,
                ContextMode mode) {
  int h = static_cast<int>(tokens.size());
  if (i < 0 || i >= h) throw std::invalid_argument("m_robust: position out of range");
  if (n < 1) throw std::invalid_argument("m_robust: n must be >= 1");
  if (mode == ContextMode::kBidirectional) {
    std::vector<int> only_i = tokens;
    only_i[static_cast<size_t>(i)] = lm.vocab.mask_id();
    std::vector<int> window_masked = tokens;
    for (int j : ngram_window(i, n, h, WindowMode::kCentered))
      window_masked[static_cast<size_t>(j)] = lm.vocab.mask_id();
    return tv_distance(lm.posterior(only_i, i), lm.posterior(window_masked, i));
  }
  if (i == 0)
    throw std::invalid_argument("m_robust: autoregressive mode undefined at position 0");
  // Skip n-gram: hide the window to the left of i but keep token i-1.
  std::vector<uint8_t> visible(static_cast<size_t>(h), 1);
  for (int j : ngram_window(i, n, h, WindowMode::kLeft))
    if (j != i - 1) visible[static_cast<size_t>(j)] = 0;
  return tv_distance(causal_posterior(lm, tokens, i, nullptr),
                     causal_posterior(lm, tokens, i, &visible));
}

double m_close(const MaskedLm& lm, const std::vector<int>& tokens, int i, int n,
               ContextMode mode) {
  int h = static_cast<int>(tokens.size());
  if (i < 0 || i >= h) throw std::invalid_argument("m_close: position out of range");
  if (n < 1) throw std::invalid_argument("m_close: n must be >= 1");
  if (mode == ContextMode::kBidirectional) {
    std::vector<int> only_i = tokens;
    only_i[static_cast<size_t>(i)] = lm.vocab.mask_id();
    auto window = ngram_window(i, n, h, WindowMode::kCentered);
    std::vector<int> window_only(static_cast<size_t>(h), lm.vocab.mask_id());
    for (int j : window) window_only[static_cast<size_t>(j)] = tokens[static_cast<size_t>(j)];
    window_only[static_cast<size_t>(i)] = lm.vocab.mask_id();
    return tv_distance(lm.posterior(only_i, i), lm.posterior(window_only, i));
  }
  if (i == 0)
    throw std::invalid_argument("m_close: autoregressive mode undefined at position 0");
  std::vector<uint8_t> visible(static_cast<size_t>(h), 0);
  for (int j : ngram_window(i, n, h, WindowMode::kLeft)) visible[static_cast<size_t>(j)] = 1;
  visible[static_cast<size_t>(i)] = 1;  // token i itself stays attendable downstream
  for (int j = i + 1; j < h; ++j) visible[static_cast<size_t>(j)] = 1;  // causal mask handles the future
  return tv_distance(causal_posterior(lm, tokens, i, nullptr),
                     causal_posterior(lm, tokens, i, &visible));
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty sample");
  std::sort(values.begin(), values.end());
  double idx = q * static_cast<double>(values.size() - 1);
  size_t lo = static_cast<size_t>(idx);
  size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = idx - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

TransitionResult detect_transition(const std::vector<std::pair<int64_t, double>>& series,
                                   int smooth) {
  TransitionResult result;
  if (series.size() < 5)
    throw std::invalid_argument("detect_transition: need at least 5 points");
  if (smooth < 1) smooth = 1;
  size_t n = series.size();
  std::vector<double> smoothed(n);
  int half = smooth / 2;
  for (size_t i = 0; i < n; ++i) {
    int64_t lo = std::max<int64_t>(0, static_cast<int64_t>(i) - half);
    int64_t hi = std::min<int64_t>(static_cast<int64_t>(n) - 1, static_cast<int64_t>(i) + half);
    double s = 0.0;
    for (int64_t j = lo; j <= hi; ++j) s += series[static_cast<size_t>(j)].second;
    smoothed[i] = s / static_cast<double>(hi - lo + 1);
  }
  // Slopes between consecutive samples, positioned at the right endpoint.
  std::vector<double> mag(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) {
    double dv = smoothed[i + 1] - smoothed[i];
    double dt = static_cast<double>(series[i + 1].first - series[i].first);
    mag[i] = dt > 0 ? std::abs(dv / dt) : 0.0;
  }
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  double med = sorted[sorted.size() / 2];
  double peak = sorted.back();
  double lo_val = *std::min_element(smoothed.begin(), smoothed.end());
  double hi_val = *std::max_element(smoothed.begin(), smoothed.end());
  if (peak <= 0.0 || hi_val - lo_val < 1e-12 || peak < 4.0 * med) {
    result.found = false;  // flat or uniformly sloped series
    return result;
  }
  size_t arg = static_cast<size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
  size_t lo_i = arg, hi_i = arg;
  while (lo_i > 0 && mag[lo_i - 1] >= 0.5 * peak) --lo_i;
  while (hi_i + 1 < mag.size() && mag[hi_i + 1] >= 0.5 * peak) ++hi_i;
  result.found = true;
  result.segment_start = series[lo_i + 1].first;
  result.segment_end = series[hi_i + 1].first;
  result.c1 = (result.segment_start + result.segment_end) / 2;
  return result;
}

}  // namespace distillab
