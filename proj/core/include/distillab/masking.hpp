#pragma once

#include <iosfwd>
#include <vector>

#include "distillab/rng.hpp"

namespace distillab {

// Token id layout used by sequence models: grammar terminals occupy
// [0, num_terminals), then the specials below.
struct TokenVocab {
  int num_terminals = 0;
  int mask_id() const { return num_terminals; }
  int bos_id() const { return num_terminals + 1; }
  int pad_id() const { return num_terminals + 2; }
  int model_vocab() const { return num_terminals + 3; }
};

enum class CorruptionKind { kMaskToken, kRandomToken, kUnchanged };

struct MaskedExample {
  std::vector<int> tokens;            // original sequence
  std::vector<int> masked_positions;  // M, ascending
  std::vector<int> input;             // corrupted sequence
  std::vector<CorruptionKind> kinds;  // parallel to masked_positions
};

// Each position independently enters M with probability p; positions in M
// become [mask] / a random vocabulary token / stay unchanged with
// probabilities 0.8 / 0.1 / 0.1. Unchanged positions remain members of M.
MaskedExample apply_masking(const std::vector<int>& tokens, double p, Rng& rng,
                            const TokenVocab& vocab);

enum class WindowMode { kCentered, kLeft };

// Centered: positions within the n-gram window around i (includes i).
// Left: the n-1 positions strictly before i.
std::vector<int> ngram_window(int i, int n, int h, WindowMode mode);

// One JSON object per line:
// {"tokens":[...],"masked":[...],"input":[...],"kinds":[...]}
void write_masked_jsonl(std::ostream& os, const MaskedExample& ex);

}  // namespace distillab
