#pragma once

#include "symseq/discretize.hpp"
#include "symseq/netops.hpp"

#include <algorithm>
#include <vector>

namespace symseq {

// {1, 2, 4, ..., L}: the prefix granularities.
inline std::vector<int> prefix_lengths(int L) {
  check(is_power_of_two(L), "prefix_lengths: L must be a power of two");
  std::vector<int> out;
  for (int n = 1; n <= L; n *= 2) out.push_back(n);
  return out;
}

// One generated sequence: per-position vocabulary logits, simplex
// assignments, hard token ids, and captured cross-attention (deepest decoder
// layer first unless all layers were kept).
template <class T>
struct SymbolSequence {
  Mat<T> logits;            // [L x A]
  Mat<T> soft;              // [L x A], rows on the simplex
  std::vector<Index> ids;   // [L], ids[l] = argmax(soft.row(l))
  std::vector<std::vector<Mat<T>>> attn;  // [layers_kept][L]: [heads x P-1]
};

template <class T>
struct GranularEmbeddings {
  std::vector<int> lengths;          // {1, 2, 4, ..., L}
  std::vector<Mat<T>> pooled;        // per n: [1 x d_model]
  std::vector<Mat<T>> proj;          // per n: [1 x K]
  Mat<T> aggregated;                 // [1 x K], elementwise sum of proj
};

// How a generation run draws and feeds back symbols.
template <class T>
struct GenMode {
  double tau = 0.12;
  bool eval = false;          // deterministic: no gumbel noise, hard one-hot feed
  RngStream* noise = nullptr; // required for gumbel training draws
};

// Batched generation state held on a live graph. m sequences advance in
// lockstep; per-step tensors are [m x ...] nodes.
template <class T>
struct GenBatch {
  using Id = typename ad::Graph<T>::Id;
  Index m = 0;
  int L = 0;
  std::vector<Id> logits;    // per step: [m x A]
  std::vector<Id> soft;      // per step: [m x A] pre-straight-through
  std::vector<Id> sym_emb;   // per step: [m x d] embedding of symbol j
  std::vector<std::vector<Index>> ids;        // [L][m]
  std::vector<std::vector<Id>> cross_nodes;   // [dec_depth][L] attention nodes
  Id vq_aux = -1;            // [1 x 1] mean auxiliary loss (VQ only)
};

// Free-running autoregressive generation with discretized re-feeding. Step j
// consumes the start token plus the embeddings of previously discretized
// outputs (soft mixture, straight-through one-hot, or VQ code depending on
// spec/mode). Self-attention keys/values are cached per step; cross-attention
// keys/values over the patch tokens are computed once per layer.
template <class T>
GenBatch<T> generate_batch(ad::Graph<T>& g, const TapeParams<T>& tp,
                           const ModelConfig& cfg, const DiscretizeSpec& spec,
                           typename ad::Graph<T>::Id patch, Index m,
                           const GenMode<T>& mode) {
  using Id = typename ad::Graph<T>::Id;
  spec.validate();
  check(m >= 1, "generate: empty batch");
  check(g.val(patch).rows() % m == 0, "generate: patch rows not multiple of m");
  const Index p = g.val(patch).rows() / m;
  check(p >= 1, "generate: no patch tokens");
  check(mode.tau > 0.0, "generate: tau must be > 0");
  const bool gumbel_draws =
      spec.kind == DiscretizeKind::kGumbel && !mode.eval;
  check(!gumbel_draws || mode.noise != nullptr,
        "generate: gumbel draws need a noise stream");

  GenBatch<T> out;
  out.m = m;
  out.L = cfg.seq_len;
  out.cross_nodes.resize(cfg.dec_depth);

  // Per-layer cross-attention keys/values, shared across steps.
  std::vector<Id> ck(cfg.dec_depth), cv(cfg.dec_depth);
  for (int l = 0; l < cfg.dec_depth; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l);
    ck[l] = linear(g, tp, pre + ".cross.k", patch);
    cv[l] = linear(g, tp, pre + ".cross.v", patch);
  }
  std::vector<std::vector<Id>> kc(cfg.dec_depth), vc(cfg.dec_depth);

  std::vector<Id> aux_terms;
  Id feed = g.broadcast_row(tp("dec.start"), m);
  for (int j = 0; j < cfg.seq_len; ++j) {
    Id x = g.add_row(feed, g.slice_rows(tp("dec.pos"), j, 1));
    for (int l = 0; l < cfg.dec_depth; ++l) {
      const std::string pre = "dec.layer" + std::to_string(l);
      auto h = g.layer_norm(x, tp(pre + ".ln1.g"), tp(pre + ".ln1.b"));
      kc[l].push_back(linear(g, tp, pre + ".attn.k", h));
      vc[l].push_back(linear(g, tp, pre + ".attn.v", h));
      auto a = g.attention_incremental(linear(g, tp, pre + ".attn.q", h),
                                       kc[l], vc[l], cfg.n_heads);
      x = g.add(x, linear(g, tp, pre + ".attn.o", a));

      auto h2 = g.layer_norm(x, tp(pre + ".ln2.g"), tp(pre + ".ln2.b"));
      auto ca = g.attention_blocks(linear(g, tp, pre + ".cross.q", h2), ck[l],
                                   cv[l], m, 1, p, cfg.n_heads, false);
      out.cross_nodes[l].push_back(ca);
      x = g.add(x, linear(g, tp, pre + ".cross.o", ca));

      auto h3 = g.layer_norm(x, tp(pre + ".ln3.g"), tp(pre + ".ln3.b"));
      x = g.add(x, linear(g, tp, pre + ".mlp.fc2",
                          g.gelu(linear(g, tp, pre + ".mlp.fc1", h3))));
    }
    Id f = g.layer_norm(x, tp("dec.lnf.g"), tp("dec.lnf.b"));

    Id soft, emb;
    std::vector<Index> step_ids(static_cast<std::size_t>(m));
    if (spec.kind == DiscretizeKind::kVq) {
      auto vq = vq_quantize(g, f, tp("tokemb"), spec.vq_beta);
      step_ids = vq.ids;
      // Diagnostic "logits": negative squared distances to each code.
      const Mat<T>& zv = g.val(f);
      const Mat<T>& cb = g.val(tp("tokemb"));
      Mat<T> neg_d2(m, cb.rows());
      for (Index r = 0; r < m; ++r)
        for (Index c = 0; c < cb.rows(); ++c)
          neg_d2(r, c) = -(zv.row(r) - cb.row(c)).squaredNorm();
      out.logits.push_back(g.constant(std::move(neg_d2)));
      Mat<T> onehot = Mat<T>::Zero(m, cb.rows());
      for (Index r = 0; r < m; ++r) onehot(r, step_ids[r]) = T(1);
      soft = g.constant(std::move(onehot));
      emb = vq.st_out;
      aux_terms.push_back(vq.aux_loss);
    } else {
      Id logits = linear(g, tp, "dec.head", f);
      out.logits.push_back(logits);
      if (gumbel_draws) {
        Mat<T> noise =
            gumbel_noise<T>(m, cfg.vocab_size, *mode.noise);
        soft = gumbel_soft(g, logits, mode.tau, noise);
      } else {
        soft = softmax_soft(g, logits, mode.tau);
      }
      const Mat<T>& sv = g.val(soft);
      for (Index r = 0; r < m; ++r) step_ids[r] = argmax_row(sv.row(r));
      Id soft_eff =
          (spec.st_hard || mode.eval) ? straight_through_hard(g, soft) : soft;
      emb = g.matmul(soft_eff, tp("tokemb"));
    }
    out.soft.push_back(soft);
    out.sym_emb.push_back(emb);
    out.ids.push_back(std::move(step_ids));
    feed = emb;
  }
  if (!aux_terms.empty()) {
    Id s = aux_terms[0];
    for (std::size_t i = 1; i < aux_terms.size(); ++i) s = g.add(s, aux_terms[i]);
    out.vq_aux = g.scale(s, T(1) / static_cast<T>(aux_terms.size()));
  }
  return out;
}

// Per-granularity encode + project. Returns student prototype logits per
// prefix and their elementwise sum (the aggregated representation).
template <class T>
struct PrefixBatch {
  using Id = typename ad::Graph<T>::Id;
  std::vector<int> lengths;
  std::vector<Id> pooled;  // per n: [m x d_model]
  std::vector<Id> proj;    // per n: [m x K]
  Id aggregated = -1;      // [m x K]
};

template <class T>
PrefixBatch<T> embed_prefixes_batch(ad::Graph<T>& g, const TapeParams<T>& tp,
                                    const ModelConfig& cfg,
                                    const GenBatch<T>& gen) {
  PrefixBatch<T> out;
  out.lengths = prefix_lengths(gen.L);
  for (int n : out.lengths) {
    std::vector<typename ad::Graph<T>::Id> steps(
        gen.sym_emb.begin(), gen.sym_emb.begin() + n);
    auto pooled = encoder_forward_steps(g, tp, cfg, steps, gen.m);
    auto proj = projector_forward(g, tp, "proj_s", pooled);
    out.pooled.push_back(pooled);
    out.proj.push_back(proj);
    out.aggregated =
        out.aggregated < 0 ? proj : g.add(out.aggregated, proj);
  }
  return out;
}

// Mean per-position assignment entropy: (1/L) sum_l H(soft[l]), averaged
// over the batch. Differentiable through soft.
template <class T>
typename ad::Graph<T>::Id sequence_entropy_node(ad::Graph<T>& g,
                                                const GenBatch<T>& gen) {
  typename ad::Graph<T>::Id acc = -1;
  for (auto s : gen.soft) {
    auto h = g.scale(g.sum_all(g.xlogx(s)), T(-1));
    acc = acc < 0 ? h : g.add(acc, h);
  }
  return g.scale(acc, T(1) / static_cast<T>(gen.L * gen.m));
}

// Information content I(s) = H(mean_l soft[l]): zero when every position
// repeats the same symbol, maximal when positions spread evenly. Batch mean.
template <class T>
typename ad::Graph<T>::Id sequence_info_node(ad::Graph<T>& g,
                                             const GenBatch<T>& gen) {
  typename ad::Graph<T>::Id acc = -1;
  for (auto s : gen.soft) acc = acc < 0 ? s : g.add(acc, s);
  auto mean = g.scale(acc, T(1) / static_cast<T>(gen.L));
  return g.scale(g.sum_all(g.xlogx(mean)), T(-1) / static_cast<T>(gen.m));
}

// ---- plain per-sample forms ----

template <class T>
double sequence_entropy(const SymbolSequence<T>& seq) {
  double total = 0.0;
  for (Index r = 0; r < seq.soft.rows(); ++r)
    for (Index c = 0; c < seq.soft.cols(); ++c) {
      const double v = static_cast<double>(seq.soft(r, c));
      if (v > 0.0) total -= v * std::log(v);
    }
  return total / static_cast<double>(seq.soft.rows());
}

template <class T>
double sequence_info(const SymbolSequence<T>& seq) {
  Eigen::RowVectorXd mean =
      seq.soft.template cast<double>().colwise().mean();
  double h = 0.0;
  for (Index c = 0; c < mean.size(); ++c)
    if (mean(c) > 0.0) h -= mean(c) * std::log(mean(c));
  return h;
}

// Fraction of distinct tokens in the hard sequence; non-differentiable
// diagnostic logged alongside I(s).
template <class T>
double distinct_token_fraction(const SymbolSequence<T>& seq) {
  std::vector<Index> sorted = seq.ids;
  std::sort(sorted.begin(), sorted.end());
  const auto uniq = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  return static_cast<double>(uniq) / static_cast<double>(seq.ids.size());
}

// Extract sample r of a generation batch into a standalone SymbolSequence.
// Captured cross-attention rows ([m x heads*(P-1)] on the node) are reshaped
// to [heads x P-1]. keep_all_layers retains every decoder layer; otherwise
// only the deepest layer is kept (attn[0] is then the deepest layer).
template <class T>
SymbolSequence<T> extract_sequence(const ad::Graph<T>& g,
                                   const GenBatch<T>& gen, Index r,
                                   int n_heads,
                                   bool keep_all_layers = false) {
  SymbolSequence<T> seq;
  const Index A = g.val(gen.logits[0]).cols();
  seq.logits.resize(gen.L, A);
  seq.soft.resize(gen.L, A);
  seq.ids.resize(static_cast<std::size_t>(gen.L));
  for (int j = 0; j < gen.L; ++j) {
    seq.logits.row(j) = g.val(gen.logits[j]).row(r);
    seq.soft.row(j) = g.val(gen.soft[j]).row(r);
    seq.ids[static_cast<std::size_t>(j)] = gen.ids[j][static_cast<std::size_t>(r)];
  }
  const int depth = static_cast<int>(gen.cross_nodes.size());
  const int first = keep_all_layers ? 0 : depth - 1;
  for (int l = depth - 1; l >= first; --l) {
    std::vector<Mat<T>> per_step;
    for (int j = 0; j < gen.L; ++j) {
      const Mat<T>& probs = g.saved_probs(gen.cross_nodes[l][j]);
      const Index p = probs.cols() / n_heads;
      Mat<T> attn(n_heads, p);
      for (int h = 0; h < n_heads; ++h)
        attn.row(h) = probs.row(r).segment(h * p, p);
      per_step.push_back(std::move(attn));
    }
    seq.attn.push_back(std::move(per_step));
  }
  return seq;
}

// Per-sample generation convenience: builds a private graph, no gradients.
template <class T>
SymbolSequence<T> generate(const ParamMap<T>& params, const ModelConfig& cfg,
                           const DiscretizeSpec& spec,
                           const Mat<T>& patch_tokens, double tau,
                           RngStream noise, bool eval = false,
                           bool keep_all_layers = false) {
  ad::Graph<T> g;
  auto tp = TapeParams<T>::bind(g, params, /*with_grads=*/false);
  auto patch = g.constant(patch_tokens);
  GenMode<T> mode{tau, eval, &noise};
  auto gen = generate_batch(g, tp, cfg, spec, patch, 1, mode);
  return extract_sequence(g, gen, 0, cfg.n_heads, keep_all_layers);
}

// Per-sample granular embeddings from a fresh deterministic-mode pass is the
// trainer's batched path with m=1; this wrapper exposes the contract shape.
template <class T>
GranularEmbeddings<T> embed_prefixes(const ParamMap<T>& params,
                                     const ModelConfig& cfg,
                                     const Mat<T>& soft_rows) {
  check(soft_rows.rows() == cfg.seq_len, "embed_prefixes: need L soft rows");
  ad::Graph<T> g;
  auto tp = TapeParams<T>::bind(g, params, /*with_grads=*/false);
  GranularEmbeddings<T> out;
  out.lengths = prefix_lengths(cfg.seq_len);
  for (int n : out.lengths) {
    auto toks = g.matmul(g.constant(Mat<T>(soft_rows.topRows(n))), tp("tokemb"));
    auto pooled = encoder_forward(g, tp, cfg, toks);
    auto proj = projector_forward(g, tp, "proj_s", pooled);
    out.pooled.push_back(g.val(pooled));
    out.proj.push_back(g.val(proj));
    if (out.aggregated.size() == 0)
      out.aggregated = g.val(proj);
    else
      out.aggregated += g.val(proj);
  }
  return out;
}

}  // namespace symseq
