#pragma once

// Causal self-attention next-item model. The input embedding is the item
// embedding plus either the plain position embedding (fusion none) or a
// rhythm-morphed position matrix from embeddings.hpp. Pre-layer-norm
// residual blocks; output logits are tied to the item embedding table.
//
// Dropout placement: once on the composed input embedding, on the
// attention probabilities, and on each sublayer output before its
// residual add.

#include <cstdint>
#include <string>
#include <vector>

#include "rhythmrec/embeddings.hpp"
#include "rhythmrec/ops.hpp"
#include "rhythmrec/rng.hpp"
#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden_dim = 64;
  std::size_t inner_dim = 256;
  double dropout = 0.5;
  double attention_dropout = 0.5;
  std::size_t max_len = 50;
  FusionKind fusion = FusionKind::None;
  double rhythm_norm = 0.2;
  std::int64_t rhythm_clip = 800;
  std::size_t vocab_size = 0;  // number of real items; index 0 is padding

  std::size_t bucket_count() const { return static_cast<std::size_t>(rhythm_clip) + 1; }

  void validate() const {
    if (hidden_dim == 0 || hidden_dim % num_heads != 0)
      throw Error("model config: hidden_dim must be a positive multiple of num_heads");
    if (dropout < 0.0 || dropout >= 1.0 || attention_dropout < 0.0 || attention_dropout >= 1.0)
      throw Error("model config: dropout probabilities must be in [0, 1)");
    if (vocab_size == 0) throw Error("model config: vocab_size not set");
    if (max_len == 0) throw Error("model config: max_len must be >= 1");
  }
};

// hidden size 64 / inner 256 and hidden size 128 / inner 256 presets.
inline void apply_preset(ModelConfig& cfg, const std::string& name) {
  if (name == "lightsans-cfg") {
    cfg.hidden_dim = 64;
    cfg.inner_dim = 256;
  } else if (name == "sasrec-cfg") {
    cfg.hidden_dim = 128;
    cfg.inner_dim = 256;
  } else {
    throw Error("unknown model preset '" + name + "' (expected lightsans-cfg|sasrec-cfg)");
  }
}

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  LinearParams q, k, v, o;
  Tensor ln2_gain, ln2_bias;
  LinearParams ff1, ff2;
};

struct ModelParams {
  EmbeddingTable item_emb;    // (vocab_size + 1) x d, row 0 pinned to zero
  EmbeddingTable pos_emb;     // max_len x d
  EmbeddingTable rhythm_emb;  // bucket_count x d, absent when fusion == none
  FusionParams fusion;
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = cfg.hidden_dim;
    ModelParams p;
    {
      Rng r = Rng::derive(seed, "item_emb");
      p.item_emb = EmbeddingTable::make(cfg.vocab_size + 1, d, r);
      std::fill_n(p.item_emb.weights.data(), d, 0.0);  // padding row
    }
    {
      Rng r = Rng::derive(seed, "pos_emb");
      p.pos_emb = EmbeddingTable::make(cfg.max_len, d, r);
    }
    if (cfg.fusion != FusionKind::None) {
      Rng r = Rng::derive(seed, "rhythm_emb");
      p.rhythm_emb = EmbeddingTable::make(cfg.bucket_count(), d, r);
      p.fusion = FusionParams::make(cfg.fusion, d, seed);
    }
    p.layers.resize(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string base = "layer" + std::to_string(l) + ".";
      LayerParams& lp = p.layers[l];
      lp.ln1_gain = Tensor::param({d});
      lp.ln1_bias = Tensor::param({d});
      std::fill(lp.ln1_gain.values().begin(), lp.ln1_gain.values().end(), 1.0);
      auto mk = [&](const char* name, std::size_t in, std::size_t out) {
        Rng r = Rng::derive(seed, (base + name).c_str());
        return LinearParams::make(in, out, r);
      };
      lp.q = mk("attn.wq", d, d);
      lp.k = mk("attn.wk", d, d);
      lp.v = mk("attn.wv", d, d);
      lp.o = mk("attn.wo", d, d);
      lp.ln2_gain = Tensor::param({d});
      lp.ln2_bias = Tensor::param({d});
      std::fill(lp.ln2_gain.values().begin(), lp.ln2_gain.values().end(), 1.0);
      lp.ff1 = mk("ffn.w1", d, cfg.inner_dim);
      lp.ff2 = mk("ffn.w2", cfg.inner_dim, d);
    }
    p.final_gain = Tensor::param({d});
    p.final_bias = Tensor::param({d});
    std::fill(p.final_gain.values().begin(), p.final_gain.values().end(), 1.0);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("item_emb", item_emb.weights);
    out.emplace_back("pos_emb", pos_emb.weights);
    if (rhythm_emb.weights.defined()) out.emplace_back("rhythm_emb", rhythm_emb.weights);
    for (const auto& [name, t] : fusion.named()) out.emplace_back(name, t);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = "layer" + std::to_string(l) + ".";
      const LayerParams& lp = layers[l];
      out.emplace_back(base + "ln1.gain", lp.ln1_gain);
      out.emplace_back(base + "ln1.bias", lp.ln1_bias);
      out.emplace_back(base + "attn.wq", lp.q.w);
      out.emplace_back(base + "attn.bq", lp.q.b);
      out.emplace_back(base + "attn.wk", lp.k.w);
      out.emplace_back(base + "attn.bk", lp.k.b);
      out.emplace_back(base + "attn.wv", lp.v.w);
      out.emplace_back(base + "attn.bv", lp.v.b);
      out.emplace_back(base + "attn.wo", lp.o.w);
      out.emplace_back(base + "attn.bo", lp.o.b);
      out.emplace_back(base + "ln2.gain", lp.ln2_gain);
      out.emplace_back(base + "ln2.bias", lp.ln2_bias);
      out.emplace_back(base + "ffn.w1", lp.ff1.w);
      out.emplace_back(base + "ffn.b1", lp.ff1.b);
      out.emplace_back(base + "ffn.w2", lp.ff2.w);
      out.emplace_back(base + "ffn.b2", lp.ff2.b);
    }
    out.emplace_back("final_norm.gain", final_gain);
    out.emplace_back("final_norm.bias", final_bias);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  // Restores values from a loaded checkpoint; names and shapes must match.
  void load_from(const std::vector<std::pair<std::string, Tensor>>& entries) {
    auto self = named();
    if (entries.size() != self.size())
      throw Error("checkpoint has " + std::to_string(entries.size()) +
                  " tensors, model expects " + std::to_string(self.size()));
    for (std::size_t i = 0; i < self.size(); ++i) {
      if (entries[i].first != self[i].first)
        throw Error("checkpoint tensor '" + entries[i].first + "' does not match model tensor '" +
                    self[i].first + "'");
      if (entries[i].second.shape() != self[i].second.shape())
        throw Error("checkpoint tensor '" + entries[i].first + "' has shape " +
                    shape_str(entries[i].second.shape()) + ", model expects " +
                    shape_str(self[i].second.shape()));
      self[i].second.values() = entries[i].second.values();
    }
  }
};

// One padded minibatch of user sequences, flattened row-major to
// (batch * seq_len) positions.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int64_t> items;      // input item indices, 0 = pad
  std::vector<std::int64_t> buckets;    // rhythm buckets aligned with items
  std::vector<std::uint8_t> mask;       // real input positions
  std::vector<std::int64_t> targets;    // next-item targets (training only)
  std::vector<std::uint8_t> loss_mask;  // positions contributing to the loss
};

// Pre-layer-norm residual attention sublayer.
inline Tensor causal_attention_block(const Tensor& x, const LayerParams& lp,
                                     const ModelConfig& cfg, std::size_t batch,
                                     const std::vector<std::uint8_t>& key_mask,
                                     bool training, Rng& rng) {
  Tensor a = layer_norm(x, lp.ln1_gain, lp.ln1_bias);
  Tensor q = linear(a, lp.q.w, lp.q.b);
  Tensor k = linear(a, lp.k.w, lp.k.b);
  Tensor v = linear(a, lp.v.w, lp.v.b);
  Tensor ctx = causal_attention(q, k, v, batch, cfg.max_len, cfg.num_heads, key_mask,
                                cfg.attention_dropout, training, &rng);
  Tensor o = dropout(linear(ctx, lp.o.w, lp.o.b), cfg.dropout, training, rng);
  return add(x, o);
}

inline Tensor feed_forward_block(const Tensor& x, const LayerParams& lp, const ModelConfig& cfg,
                                 bool training, Rng& rng) {
  Tensor f = layer_norm(x, lp.ln2_gain, lp.ln2_bias);
  Tensor h = linear(gelu_op(linear(f, lp.ff1.w, lp.ff1.b)), lp.ff2.w, lp.ff2.b);
  return add(x, dropout(h, cfg.dropout, training, rng));
}

// Per-position logits over the full vocabulary (width vocab_size + 1; the
// padding column is forced to a -inf equivalent).
inline Tensor forward(const ModelParams& params, const ModelConfig& cfg, const Batch& batch,
                      bool training, Rng& rng) {
  cfg.validate();
  if (batch.seq_len != cfg.max_len)
    throw Error("forward: batch seq_len " + std::to_string(batch.seq_len) +
                " != configured max_len " + std::to_string(cfg.max_len));
  const std::size_t rows = batch.batch * batch.seq_len;
  if (batch.items.size() != rows || batch.mask.size() != rows)
    throw Error("forward: batch arrays do not match batch * seq_len");
  if (cfg.fusion != FusionKind::None && batch.buckets.size() != rows)
    throw Error("forward: rhythm buckets missing");

  Tensor emb = embed_items(params.item_emb, batch.items);

  std::vector<std::int64_t> pos_idx(rows);
  for (std::size_t i = 0; i < rows; ++i)
    pos_idx[i] = static_cast<std::int64_t>(i % batch.seq_len);
  Tensor pos = embedding_lookup(params.pos_emb.weights, pos_idx);

  Tensor morphed =
      cfg.fusion == FusionKind::None
          ? pos
          : fuse(cfg.fusion, pos, embed_rhythm(params.rhythm_emb, batch.buckets), params.fusion);

  Tensor x = dropout(compose_input(emb, morphed), cfg.dropout, training, rng);
  for (const LayerParams& lp : params.layers) {
    x = causal_attention_block(x, lp, cfg, batch.batch, batch.mask, training, rng);
    x = feed_forward_block(x, lp, cfg, training, rng);
  }
  x = layer_norm(x, params.final_gain, params.final_bias);
  Tensor logits = matmul(x, params.item_emb.weights, false, true);
  return fill_column(logits, 0, -1e30);
}

// Single-sequence convenience wrapper (batch of one).
inline Tensor forward_single(const ModelParams& params, const ModelConfig& cfg,
                             const std::vector<std::int64_t>& items,
                             const std::vector<std::int64_t>& buckets,
                             const std::vector<std::uint8_t>& mask, bool training, Rng& rng) {
  Batch b;
  b.batch = 1;
  b.seq_len = cfg.max_len;
  b.items = items;
  b.buckets = buckets;
  b.mask = mask;
  return forward(params, cfg, b, training, rng);
}

}  // namespace rhythmrec
