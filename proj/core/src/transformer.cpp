#include "distillab/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace distillab {

void TransformerConfig::validate() const {
  if (layers < 1 || heads < 1 || head_dim < 1)
    throw std::invalid_argument("transformer config: layers/heads/head_dim must be >= 1");
  if (vocab < 2) throw std::invalid_argument("transformer config: vocab must be >= 2");
  if (max_len < 1) throw std::invalid_argument("transformer config: max_len must be >= 1");
}

std::vector<Tensor> TransformerParams::parameters() const {
  std::vector<Tensor> out{tok_emb, pos_emb};
  for (const auto& l : layers) {
    for (const auto& t : {l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo,
                          l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2, l.b2})
      out.push_back(t);
  }
  out.push_back(lnf_g);
  out.push_back(lnf_b);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

TransformerParams TransformerParams::clone() const {
  TransformerParams c;
  c.cfg = cfg;
  c.tok_emb = tok_emb.clone();
  c.pos_emb = pos_emb.clone();
  for (const auto& l : layers) {
    TransformerLayerParams cl;
    cl.ln1_g = l.ln1_g.clone();
    cl.ln1_b = l.ln1_b.clone();
    cl.wq = l.wq.clone();
    cl.bq = l.bq.clone();
    cl.wk = l.wk.clone();
    cl.bk = l.bk.clone();
    cl.wv = l.wv.clone();
    cl.bv = l.bv.clone();
    cl.wo = l.wo.clone();
    cl.bo = l.bo.clone();
    cl.ln2_g = l.ln2_g.clone();
    cl.ln2_b = l.ln2_b.clone();
    cl.w1 = l.w1.clone();
    cl.b1 = l.b1.clone();
    cl.w2 = l.w2.clone();
    cl.b2 = l.b2.clone();
    c.layers.push_back(std::move(cl));
  }
  c.lnf_g = lnf_g.clone();
  c.lnf_b = lnf_b.clone();
  c.head_w = head_w.clone();
  c.head_b = head_b.clone();
  return c;
}

namespace {

Tensor normal_tensor(std::vector<int> shape, double std_dev, Rng& rng) {
  Tensor t(shape, true);
  double* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = std_dev * rng.normal();
  return t;
}

Tensor const_tensor(std::vector<int> shape, double v) {
  Tensor t(std::move(shape), true);
  double* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = v;
  return t;
}

}  // namespace

TransformerParams init_transformer(const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  int E = cfg.width();
  const double s = 0.02;
  TransformerParams p;
  p.cfg = cfg;
  p.tok_emb = normal_tensor({cfg.vocab, E}, s, rng);
  p.pos_emb = normal_tensor({cfg.max_len, E}, s, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    TransformerLayerParams lp;
    lp.ln1_g = const_tensor({E}, 1.0);
    lp.ln1_b = const_tensor({E}, 0.0);
    lp.wq = normal_tensor({E, E}, s, rng);
    lp.bq = const_tensor({E}, 0.0);
    lp.wk = normal_tensor({E, E}, s, rng);
    lp.bk = const_tensor({E}, 0.0);
    lp.wv = normal_tensor({E, E}, s, rng);
    lp.bv = const_tensor({E}, 0.0);
    lp.wo = normal_tensor({E, E}, s, rng);
    lp.bo = const_tensor({E}, 0.0);
    lp.ln2_g = const_tensor({E}, 1.0);
    lp.ln2_b = const_tensor({E}, 0.0);
    lp.w1 = normal_tensor({E, 4 * E}, s, rng);
    lp.b1 = const_tensor({4 * E}, 0.0);
    lp.w2 = normal_tensor({4 * E, E}, s, rng);
    lp.b2 = const_tensor({E}, 0.0);
    p.layers.push_back(std::move(lp));
  }
  p.lnf_g = const_tensor({E}, 1.0);
  p.lnf_b = const_tensor({E}, 0.0);
  p.head_w = normal_tensor({E, cfg.vocab}, s, rng);
  p.head_b = const_tensor({cfg.vocab}, 0.0);
  return p;
}

Tensor transformer_embed(Tape& tape, const TransformerParams& p,
                         const std::vector<int>& tokens, int batch, int len,
                         const std::vector<uint8_t>* visible,
                         const std::vector<int>* pos_ids) {
  const TransformerConfig& cfg = p.cfg;
  if (static_cast<int64_t>(tokens.size()) != static_cast<int64_t>(batch) * len)
    tensor_error("transformer", "token count does not match batch*len");
  if (len > cfg.max_len)
    tensor_error("transformer", "sequence length " + std::to_string(len) +
                                    " exceeds max_len " + std::to_string(cfg.max_len));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab) tensor_error("transformer", "token id out of vocab range");
  if (visible && static_cast<int64_t>(visible->size()) != static_cast<int64_t>(batch) * len)
    tensor_error("transformer", "visibility mask size does not match batch*len");

  int E = cfg.width();
  int H = cfg.heads;
  int dh = cfg.head_dim;

  std::vector<int> positions;
  if (pos_ids) {
    positions = *pos_ids;
  } else {
    positions.resize(static_cast<size_t>(batch) * len);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < len; ++i) positions[static_cast<size_t>(b) * len + i] = i;
  }

  Tensor x = tape.add(tape.embedding(p.tok_emb, tokens, {batch, len}),
                      tape.embedding(p.pos_emb, positions, {batch, len}));

  // Combined attention-ban mask, 1 where key j is never attendable from
  // query i: hidden keys plus (in causal mode) future keys.
  std::vector<double> ban(static_cast<size_t>(batch) * len * len, 0.0);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < len; ++j) {
        bool hidden = visible && !(*visible)[static_cast<size_t>(b) * len + j];
        bool future = cfg.causal && j > i;
        if (hidden || future)
          ban[(static_cast<size_t>(b) * len + i) * len + j] = 1.0;
      }
  Tensor ban_mask = tape.constant({batch, 1, len, len}, std::move(ban));
  const double scale = std::sqrt(static_cast<double>(dh));

  for (const auto& l : p.layers) {
    Tensor h = tape.layer_norm(x, l.ln1_g, l.ln1_b);
    auto heads_view = [&](const Tensor& w, const Tensor& bias) {
      Tensor proj = tape.add(tape.matmul(h, w), bias);            // [B,L,E]
      Tensor split = tape.reshape(proj, {batch, len, H, dh});     // [B,L,H,dh]
      return tape.transpose(split, 1, 2);                         // [B,H,L,dh]
    };
    Tensor q = heads_view(l.wq, l.bq);
    Tensor k = heads_view(l.wk, l.bk);
    Tensor v = heads_view(l.wv, l.bv);
    Tensor scores = tape.matmul(q, tape.transpose(k, 2, 3));      // [B,H,L,L]
    scores = tape.masked_fill(scores, ban_mask, -1e30);
    Tensor attn = tape.softmax(scores, scale);                    // scores/sqrt(dh)
    Tensor ctx = tape.matmul(attn, v);                            // [B,H,L,dh]
    ctx = tape.reshape(tape.transpose(ctx, 1, 2), {batch, len, E});
    Tensor attn_out = tape.add(tape.matmul(ctx, l.wo), l.bo);
    x = tape.add(x, attn_out);

    Tensor m = tape.layer_norm(x, l.ln2_g, l.ln2_b);
    Tensor inner = tape.relu(tape.add(tape.matmul(m, l.w1), l.b1));
    Tensor mlp_out = tape.add(tape.matmul(inner, l.w2), l.b2);
    x = tape.add(x, mlp_out);
  }
  return tape.layer_norm(x, p.lnf_g, p.lnf_b);
}

Tensor transformer_forward(Tape& tape, const TransformerParams& p,
                           const std::vector<int>& tokens, int batch, int len,
                           const std::vector<uint8_t>* visible,
                           const std::vector<int>* pos_ids) {
  Tensor h = transformer_embed(tape, p, tokens, batch, len, visible, pos_ids);
  return tape.add(tape.matmul(h, p.head_w), p.head_b);
}

Checkpoint checkpoint_from_transformer(const TransformerParams& p, int64_t step,
                                       const std::string& meta_json) {
  Checkpoint c;
  c.kind = "transformer";
  c.step = step;
  nlohmann::json meta = nlohmann::json::parse(meta_json);
  meta["layers"] = p.cfg.layers;
  meta["heads"] = p.cfg.heads;
  meta["head_dim"] = p.cfg.head_dim;
  meta["vocab"] = p.cfg.vocab;
  meta["max_len"] = p.cfg.max_len;
  meta["causal"] = p.cfg.causal;
  c.meta_json = meta.dump();
  c.tensors.emplace_back("tok_emb", p.tok_emb);
  c.tensors.emplace_back("pos_emb", p.pos_emb);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    c.tensors.emplace_back(prefix + "ln1_g", lp.ln1_g);
    c.tensors.emplace_back(prefix + "ln1_b", lp.ln1_b);
    c.tensors.emplace_back(prefix + "wq", lp.wq);
    c.tensors.emplace_back(prefix + "bq", lp.bq);
    c.tensors.emplace_back(prefix + "wk", lp.wk);
    c.tensors.emplace_back(prefix + "bk", lp.bk);
    c.tensors.emplace_back(prefix + "wv", lp.wv);
    c.tensors.emplace_back(prefix + "bv", lp.bv);
    c.tensors.emplace_back(prefix + "wo", lp.wo);
    c.tensors.emplace_back(prefix + "bo", lp.bo);
    c.tensors.emplace_back(prefix + "ln2_g", lp.ln2_g);
    c.tensors.emplace_back(prefix + "ln2_b", lp.ln2_b);
    c.tensors.emplace_back(prefix + "w1", lp.w1);
    c.tensors.emplace_back(prefix + "b1", lp.b1);
    c.tensors.emplace_back(prefix + "w2", lp.w2);
    c.tensors.emplace_back(prefix + "b2", lp.b2);
  }
  c.tensors.emplace_back("lnf_g", p.lnf_g);
  c.tensors.emplace_back("lnf_b", p.lnf_b);
  c.tensors.emplace_back("head_w", p.head_w);
  c.tensors.emplace_back("head_b", p.head_b);
  return c;
}

TransformerParams transformer_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "transformer")
    throw std::runtime_error("checkpoint kind '" + c.kind + "' is not a transformer");
  nlohmann::json meta = nlohmann::json::parse(c.meta_json);
  TransformerConfig cfg;
  cfg.layers = meta.at("layers").get<int>();
  cfg.heads = meta.at("heads").get<int>();
  cfg.head_dim = meta.at("head_dim").get<int>();
  cfg.vocab = meta.at("vocab").get<int>();
  cfg.max_len = meta.at("max_len").get<int>();
  cfg.causal = meta.at("causal").get<bool>();
  Rng dummy(0);
  TransformerParams p = init_transformer(cfg, dummy);
  auto load = [&c](Tensor& dst, const std::string& name) {
    const Tensor& src = c.tensor(name);
    if (src.shape() != dst.shape())
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_str(src.shape()) + ", expected " +
                               shape_str(dst.shape()));
    std::copy(src.data(), src.data() + src.size(), dst.data());
  };
  load(p.tok_emb, "tok_emb");
  load(p.pos_emb, "pos_emb");
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    load(lp.ln1_g, prefix + "ln1_g");
    load(lp.ln1_b, prefix + "ln1_b");
    load(lp.wq, prefix + "wq");
    load(lp.bq, prefix + "bq");
    load(lp.wk, prefix + "wk");
    load(lp.bk, prefix + "bk");
    load(lp.wv, prefix + "wv");
    load(lp.bv, prefix + "bv");
    load(lp.wo, prefix + "wo");
    load(lp.bo, prefix + "bo");
    load(lp.ln2_g, prefix + "ln2_g");
    load(lp.ln2_b, prefix + "ln2_b");
    load(lp.w1, prefix + "w1");
    load(lp.b1, prefix + "b1");
    load(lp.w2, prefix + "w2");
    load(lp.b2, prefix + "b2");
  }
  load(p.lnf_g, "lnf_g");
  load(p.lnf_b, "lnf_b");
  load(p.head_w, "head_w");
  load(p.head_b, "head_b");
  return p;
}

}  // namespace distillab
