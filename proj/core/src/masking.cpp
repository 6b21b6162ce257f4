#include "distillab/masking.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace distillab {

MaskedExample apply_masking(const std::vector<int>& tokens, double p, Rng& rng,
                            const TokenVocab& vocab) {
  if (tokens.empty()) throw std::invalid_argument("apply_masking: empty token sequence");
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("apply_masking: mask rate must be in (0, 1)");
  MaskedExample ex;
  ex.tokens = tokens;
  ex.input = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!rng.bernoulli(p)) continue;
    ex.masked_positions.push_back(static_cast<int>(i));
    double u = rng.uniform();
    if (u < 0.8) {
      ex.input[i] = vocab.mask_id();
      ex.kinds.push_back(CorruptionKind::kMaskToken);
    } else if (u < 0.9) {
      ex.input[i] = static_cast<int>(rng.below(static_cast<uint64_t>(vocab.num_terminals)));
      ex.kinds.push_back(CorruptionKind::kRandomToken);
    } else {
      ex.kinds.push_back(CorruptionKind::kUnchanged);
    }
  }
  return ex;
}

std::vector<int> ngram_window(int i, int n, int h, WindowMode mode) {
  if (i < 0 || i >= h) throw std::invalid_argument("ngram_window: position out of range");
  if (n < 1) throw std::invalid_argument("ngram_window: n must be >= 1");
  std::vector<int> out;
  if (mode == WindowMode::kCentered) {
    int lo = std::max(i - (n - 1 + 1) / 2, 0);  // ceil((n-1)/2) back
    int hi = std::min(i + (n - 1) / 2, h - 1);  // floor((n-1)/2) forward
    for (int j = lo; j <= hi; ++j) out.push_back(j);
  } else {
    for (int j = std::max(i - n + 1, 0); j < i; ++j) out.push_back(j);
  }
  return out;
}

void write_masked_jsonl(std::ostream& os, const MaskedExample& ex) {
  auto write_ints = [&os](const std::vector<int>& v) {
    os << "[";
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) os << ",";
      os << v[i];
    }
    os << "]";
  };
  os << "{\"tokens\":";
  write_ints(ex.tokens);
  os << ",\"masked\":";
  write_ints(ex.masked_positions);
  os << ",\"input\":";
  write_ints(ex.input);
  os << ",\"kinds\":[";
  for (size_t i = 0; i < ex.kinds.size(); ++i) {
    if (i) os << ",";
    switch (ex.kinds[i]) {
      case CorruptionKind::kMaskToken: os << "\"mask\""; break;
      case CorruptionKind::kRandomToken: os << "\"random\""; break;
      case CorruptionKind::kUnchanged: os << "\"keep\""; break;
    }
  }
  os << "]}\n";
}

}  // namespace distillab
