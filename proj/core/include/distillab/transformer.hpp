#pragma once

#include <cstdint>
#include <vector>

#include "distillab/checkpoint.hpp"
#include "distillab/rng.hpp"
#include "distillab/tensor.hpp"

namespace distillab {

// Pre-norm transformer with learned absolute positions. Width is always
// heads * head_dim; the MLP hidden size is 4x the width.
struct TransformerConfig {
  int layers = 2;
  int heads = 2;
  int head_dim = 8;
  int vocab = 0;
  int max_len = 0;
  bool causal = false;

  int width() const { return heads * head_dim; }
  void validate() const;
};

struct TransformerLayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
};

struct TransformerParams {
  TransformerConfig cfg;
  Tensor tok_emb;  // [vocab, E]
  Tensor pos_emb;  // [max_len, E]
  std::vector<TransformerLayerParams> layers;
  Tensor lnf_g, lnf_b;
  Tensor head_w;  // [E, vocab]
  Tensor head_b;  // [vocab]

  std::vector<Tensor> parameters() const;
  TransformerParams clone() const;
};

TransformerParams init_transformer(const TransformerConfig& cfg, Rng& rng);

// tokens: batch*len ids, row-major. `visible` (optional, batch*len) marks
// positions every query may attend to; 0 entries are excluded from attention
// score computation without shifting position ids. Causal mode additionally
// forbids attending to the future. `pos_ids` (optional, batch*len) overrides
// the default 0..len-1 position ids.
Tensor transformer_embed(Tape& tape, const TransformerParams& p,
                         const std::vector<int>& tokens, int batch, int len,
                         const std::vector<uint8_t>* visible = nullptr,
                         const std::vector<int>* pos_ids = nullptr);

// Per-position logits over the vocabulary: [batch, len, vocab].
Tensor transformer_forward(Tape& tape, const TransformerParams& p,
                           const std::vector<int>& tokens, int batch, int len,
                           const std::vector<uint8_t>* visible = nullptr,
                           const std::vector<int>* pos_ids = nullptr);

Checkpoint checkpoint_from_transformer(const TransformerParams& p, int64_t step,
                                       const std::string& meta_json = "{}");
TransformerParams transformer_from_checkpoint(const Checkpoint& c);

}  // namespace distillab
