#include "distillab/grammar_oracle.hpp"

#include <map>
#include <stdexcept>

namespace distillab {

namespace {

using StringDist = std::vector<std::pair<std::vector<int>, double>>;

struct Enumerator {
  const Grammar& g;
  int64_t budget;
  std::vector<StringDist> memo;
  std::vector<bool> done;
  std::vector<bool> in_progress;

  Enumerator(const Grammar& gg, int64_t b)
      : g(gg),
        budget(b),
        memo(static_cast<size_t>(gg.num_symbols())),
        done(static_cast<size_t>(gg.num_symbols()), false),
        in_progress(static_cast<size_t>(gg.num_symbols()), false) {}

  const StringDist& strings_of(int sym) {
    size_t u = static_cast<size_t>(sym);
    if (done[u]) return memo[u];
    if (in_progress[u])
      throw std::runtime_error("exact oracle: grammar is recursive; enumeration unavailable");
    in_progress[u] = true;
    StringDist result;
    if (!g.is_nonterminal[u]) {
      result.push_back({{g.token_of_symbol[u]}, 1.0});
    } else {
      std::map<std::vector<int>, double> merged;
      for (int ri : g.rules_of[u]) {
        const auto& rule = g.rules[static_cast<size_t>(ri)];
        if (rule.prob <= 0.0) continue;
        // Cartesian product over the RHS symbols.
        StringDist acc{{{}, rule.prob}};
        for (int child : rule.rhs) {
          const StringDist& cs = strings_of(child);
          StringDist next;
          if (static_cast<int64_t>(acc.size()) * static_cast<int64_t>(cs.size()) > budget)
            throw std::runtime_error("exact oracle: enumeration budget exceeded");
          next.reserve(acc.size() * cs.size());
          for (const auto& [prefix, pp] : acc)
            for (const auto& [tail, tp] : cs) {
              std::vector<int> s = prefix;
              s.insert(s.end(), tail.begin(), tail.end());
              next.push_back({std::move(s), pp * tp});
            }
          acc = std::move(next);
        }
        for (auto& [s, p] : acc) merged[s] += p;
      }
      result.assign(merged.begin(), merged.end());
    }
    if (static_cast<int64_t>(result.size()) > budget)
      throw std::runtime_error("exact oracle: enumeration budget exceeded");
    memo[u] = std::move(result);
    done[u] = true;
    in_progress[u] = false;
    return memo[u];
  }
};

}  // namespace

StringDist enumerate_strings(const Grammar& g, int64_t budget) {
  Enumerator e(g, budget);
  return e.strings_of(g.root);
}

std::vector<double> exact_masked_posterior(const Grammar& g, const std::vector<int>& visible,
                                           int position, int64_t budget) {
  int h = static_cast<int>(visible.size());
  if (position < 0 || position >= h)
    throw std::invalid_argument("exact_masked_posterior: position out of range");
  if (visible[static_cast<size_t>(position)] >= 0)
    throw std::invalid_argument("exact_masked_posterior: query position must be unobserved");
  auto strings = enumerate_strings(g, budget);
  std::vector<double> posterior(static_cast<size_t>(g.num_terminals()), 0.0);
  double total = 0.0;
  for (const auto& [s, p] : strings) {
    if (static_cast<int>(s.size()) != h) continue;
    bool consistent = true;
    for (int j = 0; j < h; ++j)
      if (visible[static_cast<size_t>(j)] >= 0 && s[static_cast<size_t>(j)] != visible[static_cast<size_t>(j)]) {
        consistent = false;
        break;
      }
    if (!consistent) continue;
    posterior[static_cast<size_t>(s[static_cast<size_t>(position)])] += p;
    total += p;
  }
  if (total <= 0.0)
    throw std::runtime_error(
        "exact_masked_posterior: no derivation is consistent with the evidence");
  for (auto& v : posterior) v /= total;
  return posterior;
}

}  // namespace distillab
