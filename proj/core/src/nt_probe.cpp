#include "distillab/nt_probe.hpp"

#include <cmath>
#include <stdexcept>

#include "distillab/distill.hpp"
#include "distillab/optim.hpp"

namespace distillab {

std::vector<Tensor> NtProbe::parameters() const {
  std::vector<Tensor> out;
  for (int r = 0; r < heads; ++r) {
    out.push_back(f_w[static_cast<size_t>(r)]);
    out.push_back(f_b[static_cast<size_t>(r)]);
    out.push_back(pos[static_cast<size_t>(r)]);
  }
  return out;
}

std::vector<double> NtProbe::attention_row(int head, int i, int len) const {
  const double* p = pos[static_cast<size_t>(head)].data();
  std::vector<double> logits(static_cast<size_t>(len));
  for (int k = 0; k < len; ++k) {
    double dot = 0.0;
    for (int c = 0; c < key_dim; ++c)
      dot += p[static_cast<size_t>(i) * key_dim + c] * p[static_cast<size_t>(k) * key_dim + c];
    logits[static_cast<size_t>(k)] = dot;
  }
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : logits) v /= sum;
  return logits;
}

std::vector<double> NtProbe::scores(const std::vector<double>& embeddings, int len) const {
  std::vector<double> g(static_cast<size_t>(len) * num_classes, 0.0);
  std::vector<double> fr(static_cast<size_t>(len) * num_classes);
  for (int r = 0; r < heads; ++r) {
    const double* fw = f_w[static_cast<size_t>(r)].data();
    const double* fb = f_b[static_cast<size_t>(r)].data();
    for (int k = 0; k < len; ++k) {
      const double* e = embeddings.data() + static_cast<size_t>(k) * embed_dim;
      for (int c = 0; c < num_classes; ++c) {
        double z = fb[c];
        const double* row = fw + static_cast<size_t>(c) * embed_dim;
        for (int j = 0; j < embed_dim; ++j) z += row[j] * e[j];
        fr[static_cast<size_t>(k) * num_classes + c] = z;
      }
    }
    for (int i = 0; i < len; ++i) {
      auto w = attention_row(r, i, len);
      for (int k = 0; k < len; ++k) {
        double wik = w[static_cast<size_t>(k)];
        for (int c = 0; c < num_classes; ++c)
          g[static_cast<size_t>(i) * num_classes + c] +=
              wik * fr[static_cast<size_t>(k) * num_classes + c];
      }
    }
  }
  return g;
}

namespace {

// Tape version of the probe forward for one sentence, restricted to the
// labelled positions: returns [num_labels, num_classes].
Tensor probe_forward(Tape& tape, const NtProbe& probe, const NtProbeExample& ex) {
  int len = ex.len;
  Tensor emb = tape.constant({len, probe.embed_dim}, ex.embeddings);
  std::vector<int> positions(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) positions[static_cast<size_t>(i)] = i;
  std::vector<int> label_rows;
  for (const auto& [p, cls] : ex.labels) label_rows.push_back(p);

  Tensor total;
  for (int r = 0; r < probe.heads; ++r) {
    Tensor fr = tape.add(tape.matmul_nt(emb, probe.f_w[static_cast<size_t>(r)]),
                         probe.f_b[static_cast<size_t>(r)]);  // [len, C]
    Tensor pk = tape.embedding(probe.pos[static_cast<size_t>(r)], positions, {len});
    Tensor attn_logits = tape.matmul(pk, tape.transpose(pk, 0, 1));  // [len, len]
    Tensor w = tape.softmax(attn_logits);
    Tensor labelled_w = w;
    if (static_cast<int>(label_rows.size()) != len) {
      // Keep only the labelled query rows.
      std::vector<Tensor> rows;
      for (int p : label_rows) rows.push_back(tape.reshape(tape.select(w, 0, p), {1, len}));
      labelled_w = tape.concat(rows, 0);
    }
    Tensor g = tape.matmul(labelled_w, fr);  // [labels, C]
    total = total.defined() ? tape.add(total, g) : g;
  }
  return total;
}

}  // namespace

NtProbe train_nt_probe(const std::vector<NtProbeExample>& data, int embed_dim,
                       int num_classes, int max_len, const NtProbeTrainConfig& cfg,
                       Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_nt_probe: no examples");
  bool any_label = false;
  for (const auto& ex : data) any_label = any_label || !ex.labels.empty();
  if (!any_label) throw std::invalid_argument("train_nt_probe: no labels at this level");

  NtProbe probe;
  probe.heads = cfg.heads;
  probe.embed_dim = embed_dim;
  probe.num_classes = num_classes;
  probe.max_len = max_len;
  probe.key_dim = cfg.key_dim;
  for (int r = 0; r < cfg.heads; ++r) {
    Tensor fw({num_classes, embed_dim}, true);
    Tensor fb({num_classes}, true);
    Tensor pk({max_len, cfg.key_dim}, true);
    double* p = fw.data();
    for (int64_t i = 0; i < fw.size(); ++i) p[i] = 0.05 * rng.normal();
    p = pk.data();
    for (int64_t i = 0; i < pk.size(); ++i) p[i] = 0.05 * rng.normal();
    probe.f_w.push_back(fw);
    probe.f_b.push_back(fb);
    probe.pos.push_back(pk);
  }

  auto params = probe.parameters();
  Adam opt(params, {});
  int n = static_cast<int>(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int start = 0; start < n; start += cfg.batch) {
      int end = std::min(n, start + cfg.batch);
      Tape tape;
      Tensor loss;
      int groups = 0;
      for (int idx = start; idx < end; ++idx) {
        const auto& ex = data[static_cast<size_t>(idx)];
        if (ex.labels.empty()) continue;
        Tensor logits = probe_forward(tape, probe, ex);
        std::vector<int> ys;
        for (const auto& [p, cls] : ex.labels) ys.push_back(cls);
        Tensor l = loss_ce(tape, logits, ys);
        loss = loss.defined() ? tape.add(loss, l) : l;
        ++groups;
      }
      if (groups == 0) continue;
      loss = tape.scale(loss, 1.0 / groups);
      zero_grads(params);
      tape.backward(loss);
      opt.step(params, cfg.lr);
    }
  }
  return probe;
}

double eval_nt_probe(const NtProbe& probe, const std::vector<NtProbeExample>& data) {
  int64_t total = 0, correct = 0;
  for (const auto& ex : data) {
    if (ex.labels.empty()) continue;
    auto g = probe.scores(ex.embeddings, ex.len);
    for (const auto& [p, cls] : ex.labels) {
      const double* row = g.data() + static_cast<size_t>(p) * probe.num_classes;
      int best = 0;
      for (int c = 1; c < probe.num_classes; ++c)
        if (row[c] > row[best]) best = c;
      ++total;
      if (best == cls) ++correct;
    }
  }
  if (total == 0) throw std::invalid_argument("eval_nt_probe: no labels");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace distillab
