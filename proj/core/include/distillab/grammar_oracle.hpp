#pragma once

#include <vector>

#include "distillab/grammar.hpp"

namespace distillab {

// All strings a symbol can derive, with total derivation probability per
// distinct string. Throws when the intermediate lists exceed the budget.
std::vector<std::pair<std::vector<int>, double>> enumerate_strings(
    const Grammar& g, int64_t budget = 1000000);

// Exact P(x_i = t | visible tokens, |x| = h) over terminal tokens, by
// enumerating every derivation consistent with the evidence. `visible` holds
// token ids with -1 at unobserved positions (every position in M, whatever
// its corruption kind). Position i must be unobserved.
std::vector<double> exact_masked_posterior(const Grammar& g,
                                           const std::vector<int>& visible, int position,
                                           int64_t budget = 1000000);

}  // namespace distillab
