#pragma once

#include <vector>

#include "distillab/rng.hpp"
#include "distillab/tensor.hpp"

namespace distillab {

// One training example for the probe: frozen model embeddings for a
// sentence plus (position, class) labels at that sentence's boundary
// positions.
struct NtProbeExample {
  std::vector<double> embeddings;  // [len, embed_dim] row-major
  int len = 0;
  std::vector<std::pair<int, int>> labels;  // (position, class)
};

// Position-based linear attention probe: prediction at position i is
// G_i = sum_{r,k} w_{r,i->k} f_r(e_k) with w_r = softmax over keys of
// <P_{i,r}, P_{k,r}> and f_r affine.
struct NtProbe {
  int heads = 1;
  int embed_dim = 0;
  int num_classes = 0;
  int max_len = 0;
  int key_dim = 16;
  std::vector<Tensor> f_w;  // per head [num_classes, embed_dim]
  std::vector<Tensor> f_b;  // per head [num_classes]
  std::vector<Tensor> pos;  // per head [max_len, key_dim]

  std::vector<Tensor> parameters() const;
  // Attention row w_{r, i -> *} over a length-len sentence.
  std::vector<double> attention_row(int head, int i, int len) const;
  // Scores G for every position: [len, num_classes].
  std::vector<double> scores(const std::vector<double>& embeddings, int len) const;
};

struct NtProbeTrainConfig {
  int heads = 2;
  int key_dim = 16;
  int epochs = 20;
  double lr = 1e-2;
  int batch = 32;
};

NtProbe train_nt_probe(const std::vector<NtProbeExample>& data, int embed_dim,
                       int num_classes, int max_len, const NtProbeTrainConfig& cfg,
                       Rng& rng);

// Top-1 accuracy over the labelled boundary positions.
double eval_nt_probe(const NtProbe& probe, const std::vector<NtProbeExample>& data);

}  // namespace distillab
