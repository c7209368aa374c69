#pragma once

#include "symseq/graph.hpp"
#include "symseq/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace symseq {

// Parameter tensors registered as leaves of a tape. Student tensors get
// gradients (when enabled); teacher tensors never do, so no gradient can
// reach the teacher path by construction.
template <class T>
struct TapeParams {
  using Id = typename ad::Graph<T>::Id;

  std::map<std::string, Id> ids;

  Id operator()(const std::string& name) const {
    auto it = ids.find(name);
    check(it != ids.end(), "unknown parameter tensor: " + name);
    return it->second;
  }

  static TapeParams bind(ad::Graph<T>& g, const ParamMap<T>& params,
                         bool with_grads) {
    TapeParams tp;
    for (const auto& [name, tensor] : params)
      tp.ids[name] = g.leaf(tensor, with_grads && is_student_param(name));
    return tp;
  }
};

template <class T>
typename ad::Graph<T>::Id linear(ad::Graph<T>& g, const TapeParams<T>& tp,
                                 const std::string& prefix,
                                 typename ad::Graph<T>::Id x) {
  return g.add_row(g.matmul(x, tp(prefix + ".w")), tp(prefix + ".b"));
}

// DINO-style head: Linear -> GELU -> Linear -> l2-normalize -> Linear.
// x is [m x d_model]; output is [m x K] prototype logits.
template <class T>
typename ad::Graph<T>::Id projector_forward(ad::Graph<T>& g,
                                            const TapeParams<T>& tp,
                                            const std::string& prefix,
                                            typename ad::Graph<T>::Id x) {
  auto h = g.gelu(linear(g, tp, prefix + ".l1", x));
  auto z = linear(g, tp, prefix + ".l2", h);
  auto n = g.l2_normalize_rows(z);
  return linear(g, tp, prefix + ".l3", n);
}

template <class T>
struct DecoderOut {
  using Id = typename ad::Graph<T>::Id;
  Id logits = -1;      // [m*t x A]
  Id final_norm = -1;  // [m*t x d_model], post final LayerNorm (VQ input)
  std::vector<Id> cross_attn;  // per layer: node whose saved_probs are
                               // [m*t x heads*(P-1)]
};

// Full-prefix decoder forward over m sequences of t rows each. x_rows holds
// raw input embeddings (row 0 of each block is the start token embedding);
// positional embeddings are added here. patch is [m*(P-1) x d_t].
template <class T>
DecoderOut<T> decoder_forward(ad::Graph<T>& g, const TapeParams<T>& tp,
                              const ModelConfig& cfg,
                              typename ad::Graph<T>::Id x_rows,
                              typename ad::Graph<T>::Id patch, Index m,
                              Index t) {
  check(t >= 1 && t <= cfg.seq_len, "decoder: prefix length out of [1, L]");
  const Index p = g.val(patch).rows() / m;
  check(p >= 1 && p * m == g.val(patch).rows(),
        "decoder: patch token rows not divisible by batch");

  DecoderOut<T> out;
  auto x = g.add_pos_blocks(x_rows, tp("dec.pos"), m, t);
  for (int l = 0; l < cfg.dec_depth; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l);
    auto h = g.layer_norm(x, tp(pre + ".ln1.g"), tp(pre + ".ln1.b"));
    auto q = linear(g, tp, pre + ".attn.q", h);
    auto k = linear(g, tp, pre + ".attn.k", h);
    auto v = linear(g, tp, pre + ".attn.v", h);
    auto a = g.attention_blocks(q, k, v, m, t, t, cfg.n_heads, true);
    x = g.add(x, linear(g, tp, pre + ".attn.o", a));

    auto h2 = g.layer_norm(x, tp(pre + ".ln2.g"), tp(pre + ".ln2.b"));
    auto cq = linear(g, tp, pre + ".cross.q", h2);
    auto ck = linear(g, tp, pre + ".cross.k", patch);
    auto cv = linear(g, tp, pre + ".cross.v", patch);
    auto ca = g.attention_blocks(cq, ck, cv, m, t, p, cfg.n_heads, false);
    out.cross_attn.push_back(ca);
    x = g.add(x, linear(g, tp, pre + ".cross.o", ca));

    auto h3 = g.layer_norm(x, tp(pre + ".ln3.g"), tp(pre + ".ln3.b"));
    auto mlp = linear(g, tp, pre + ".mlp.fc2",
                      g.gelu(linear(g, tp, pre + ".mlp.fc1", h3)));
    x = g.add(x, mlp);
  }
  out.final_norm = g.layer_norm(x, tp("dec.lnf.g"), tp("dec.lnf.b"));
  out.logits = linear(g, tp, "dec.head", out.final_norm);
  return out;
}

template <class T>
struct DecoderStepOut {
  using Id = typename ad::Graph<T>::Id;
  Id logits;           // [1 x A], for the position after the prefix
  Id final_norm;       // [1 x d_model]
  Mat<T> cross_attn;   // deepest layer, [heads x P-1], rows sum to 1
};

// One autoregressive step: consume a prefix of t input embeddings (row 0 is
// the start token), emit symbol logits for position t-1 plus that position's
// deepest-layer cross-attention rows.
template <class T>
DecoderStepOut<T> decoder_step(ad::Graph<T>& g, const TapeParams<T>& tp,
                               const ModelConfig& cfg,
                               typename ad::Graph<T>::Id prefix_embeddings,
                               typename ad::Graph<T>::Id patch) {
  const Index t = g.val(prefix_embeddings).rows();
  auto full = decoder_forward(g, tp, cfg, prefix_embeddings, patch, 1, t);
  const Index p = g.val(patch).rows();
  const Mat<T>& probs = g.saved_probs(full.cross_attn.back());
  Mat<T> attn(cfg.n_heads, p);
  for (int h = 0; h < cfg.n_heads; ++h)
    attn.row(h) = probs.row(t - 1).segment(h * p, p);
  return DecoderStepOut<T>{g.slice_rows(full.logits, t - 1, 1),
                           g.slice_rows(full.final_norm, t - 1, 1),
                           std::move(attn)};
}

// Sequence encoder over m blocks of n token embeddings each (steps[i] is
// [m x d]). A learned summary token is prepended, positional embeddings
// added, enc_depth bidirectional pre-norm layers applied; the summary slot's
// residual stream is returned ([m x d]). No final norm: with enc_depth == 0
// the summary embedding passes through unchanged.
template <class T>
typename ad::Graph<T>::Id encoder_forward_steps(
    ad::Graph<T>& g, const TapeParams<T>& tp, const ModelConfig& cfg,
    const std::vector<typename ad::Graph<T>::Id>& steps, Index m) {
  const Index n = static_cast<Index>(steps.size());
  check(n >= 1 && n <= cfg.seq_len, "encoder: token count out of [1, L]");
  const Index s = n + 1;

  std::vector<typename ad::Graph<T>::Id> rows;
  rows.reserve(steps.size() + 1);
  rows.push_back(g.broadcast_row(tp("enc.summary"), m));
  for (auto id : steps) rows.push_back(id);
  auto x = g.stack_steps(rows, m);
  x = g.add_pos_blocks(x, tp("enc.pos"), m, s);

  for (int l = 0; l < cfg.enc_depth; ++l) {
    const std::string pre = "enc.layer" + std::to_string(l);
    auto h = g.layer_norm(x, tp(pre + ".ln1.g"), tp(pre + ".ln1.b"));
    auto q = linear(g, tp, pre + ".attn.q", h);
    auto k = linear(g, tp, pre + ".attn.k", h);
    auto v = linear(g, tp, pre + ".attn.v", h);
    auto a = g.attention_blocks(q, k, v, m, s, s, cfg.n_heads, false);
    x = g.add(x, linear(g, tp, pre + ".attn.o", a));

    auto h2 = g.layer_norm(x, tp(pre + ".ln2.g"), tp(pre + ".ln2.b"));
    auto mlp = linear(g, tp, pre + ".mlp.fc2",
                      g.gelu(linear(g, tp, pre + ".mlp.fc1", h2)));
    x = g.add(x, mlp);
  }
  return g.gather_rows_strided(x, s, 0, m);
}

// Single-sequence wrapper: token_embeddings is [n x d].
template <class T>
typename ad::Graph<T>::Id encoder_forward(ad::Graph<T>& g,
                                          const TapeParams<T>& tp,
                                          const ModelConfig& cfg,
                                          typename ad::Graph<T>::Id toks) {
  const Index n = g.val(toks).rows();
  check(n >= 1, "encoder: empty token sequence");
  std::vector<typename ad::Graph<T>::Id> steps;
  steps.reserve(n);
  for (Index i = 0; i < n; ++i) steps.push_back(g.slice_rows(toks, i, 1));
  return encoder_forward_steps(g, tp, cfg, steps, 1);
}

}  // namespace symseq
