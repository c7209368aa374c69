#include "symseq/probe.hpp"

#include "symseq/seqgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace symseq {

namespace {

constexpr Index kChunk = 256;  // samples per evaluation graph

int infer_n_classes(const std::vector<std::uint32_t>& a,
                    const std::vector<std::uint32_t>& b) {
  std::uint32_t mx = 0;
  for (auto l : a) mx = std::max(mx, l);
  for (auto l : b) mx = std::max(mx, l);
  return static_cast<int>(mx) + 1;
}

MatF normalized_rows(const MatF& x) {
  MatF out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const float n = std::max(x.row(r).norm(), 1e-12f);
    out.row(r) = x.row(r) / n;
  }
  return out;
}

struct Scored {
  std::vector<double> top1;
  std::vector<double> top5;
};

}  // namespace

Representation representation_from_string(const std::string& s) {
  if (s == "pooled" || s == "student_pooled") return Representation::kStudentPooled;
  if (s == "aggregated" || s == "student_aggregated")
    return Representation::kStudentAggregated;
  if (s == "teacher" || s == "teacher_feature")
    return Representation::kTeacherFeature;
  fail("unknown representation: " + s);
}

std::string to_string(Representation r) {
  switch (r) {
    case Representation::kStudentPooled: return "student_pooled";
    case Representation::kStudentAggregated: return "student_aggregated";
    case Representation::kTeacherFeature: return "teacher_feature";
  }
  return "?";
}

MatF extract_embeddings(const ParamMap<float>& params, const ModelConfig& cfg,
                        const DiscretizeSpec& spec, const FeatureSet& fs,
                        Representation rep, int prefix_n, double eval_tau) {
  fs.validate();
  if (rep == Representation::kTeacherFeature) {
    MatF out(fs.n_samples, fs.d_t);
    for (std::uint32_t i = 0; i < fs.n_samples; ++i)
      out.row(i) = view(fs, i, 0).global_token;
    return out;
  }

  check(static_cast<int>(fs.d_t) == cfg.d_t, "feature d_t mismatch");
  int n = prefix_n;
  if (n < 0) n = cfg.seq_len;
  const auto lengths = prefix_lengths(cfg.seq_len);
  check(std::find(lengths.begin(), lengths.end(), n) != lengths.end(),
        "prefix_n is not a valid prefix length");

  const Index P1 = fs.tokens_per_view() - 1;
  const Index d_out = rep == Representation::kStudentPooled
                          ? cfg.d_model
                          : cfg.n_prototypes;
  MatF out(fs.n_samples, d_out);

  for (Index at = 0; at < static_cast<Index>(fs.n_samples); at += kChunk) {
    const Index m = std::min<Index>(kChunk, fs.n_samples - at);
    MatF patch(m * P1, fs.d_t);
    for (Index i = 0; i < m; ++i)
      patch.middleRows(i * P1, P1) =
          view(fs, static_cast<std::uint32_t>(at + i), 0).patch_tokens;

    ad::Graph<float> g;
    auto tp = TapeParams<float>::bind(g, params, /*with_grads=*/false);
    GenMode<float> mode{eval_tau, /*eval=*/true, nullptr};
    auto gen = generate_batch(g, tp, cfg, spec, g.constant(patch), m, mode);

    if (rep == Representation::kStudentPooled) {
      std::vector<ad::Graph<float>::Id> steps(gen.sym_emb.begin(),
                                              gen.sym_emb.begin() + n);
      auto pooled = encoder_forward_steps(g, tp, cfg, steps, m);
      out.middleRows(at, m) = g.val(pooled);
    } else {
      auto pb = embed_prefixes_batch(g, tp, cfg, gen);
      out.middleRows(at, m) = g.val(pb.aggregated);
    }
  }
  return out;
}

ProbeReport knn_classify(const MatF& train_emb,
                         const std::vector<std::uint32_t>& train_labels,
                         const MatF& eval_emb,
                         const std::vector<std::uint32_t>& eval_labels,
                         const std::vector<int>& k_values, double knn_temp) {
  const Index nt = train_emb.rows();
  const Index ne = eval_emb.rows();
  check(nt >= 1 && ne >= 1, "knn: empty embedding sets");
  check(train_labels.size() == static_cast<std::size_t>(nt) &&
            eval_labels.size() == static_cast<std::size_t>(ne),
        "knn: label count mismatch");
  check(!k_values.empty(), "knn: no k values");
  for (int k : k_values) check(k >= 1 && k <= nt, "knn: k > N_train");
  check(knn_temp > 0.0, "knn: temperature must be > 0");

  const int n_classes = infer_n_classes(train_labels, eval_labels);
  const MatF tn = normalized_rows(train_emb);
  const MatF en = normalized_rows(eval_emb);
  MatF sims(ne, nt);
  sims.noalias() = en * tn.transpose();

  ProbeReport rep;
  rep.k_values = k_values;
  std::vector<Index> order(static_cast<std::size_t>(nt));
  std::vector<double> score(static_cast<std::size_t>(n_classes));
  for (int k : k_values) {
    long hit1 = 0, hit5 = 0;
    for (Index e = 0; e < ne; ++e) {
      std::iota(order.begin(), order.end(), Index(0));
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&](Index a, Index b) {
                          const float sa = sims(e, a), sb = sims(e, b);
                          if (sa != sb) return sa > sb;
                          return a < b;  // deterministic tie order
                        });
      std::fill(score.begin(), score.end(), 0.0);
      for (int i = 0; i < k; ++i) {
        const Index t = order[static_cast<std::size_t>(i)];
        score[train_labels[static_cast<std::size_t>(t)]] +=
            std::exp(static_cast<double>(sims(e, t)) / knn_temp);
      }
      std::vector<int> cls(static_cast<std::size_t>(n_classes));
      std::iota(cls.begin(), cls.end(), 0);
      std::sort(cls.begin(), cls.end(), [&](int a, int b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
      });
      const auto truth = static_cast<int>(eval_labels[static_cast<std::size_t>(e)]);
      if (cls[0] == truth) ++hit1;
      for (int i = 0; i < std::min(5, n_classes); ++i)
        if (cls[static_cast<std::size_t>(i)] == truth) {
          ++hit5;
          break;
        }
    }
    rep.top1.push_back(100.0 * static_cast<double>(hit1) / static_cast<double>(ne));
    rep.top5.push_back(100.0 * static_cast<double>(hit5) / static_cast<double>(ne));
  }
  return rep;
}

ProbeReport linear_probe(const MatF& train_emb,
                         const std::vector<std::uint32_t>& train_labels,
                         const MatF& eval_emb,
                         const std::vector<std::uint32_t>& eval_labels,
                         int epochs, double lr) {
  const Index nt = train_emb.rows();
  const Index ne = eval_emb.rows();
  check(nt >= 1 && ne >= 1, "linear_probe: empty embedding sets");
  check(train_labels.size() == static_cast<std::size_t>(nt) &&
            eval_labels.size() == static_cast<std::size_t>(ne),
        "linear_probe: label count mismatch");
  const int n_classes = infer_n_classes(train_labels, eval_labels);
  {
    std::vector<std::uint32_t> uniq = train_labels;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    check(uniq.size() >= 2, "linear_probe: single-class training set");
  }

  const Index d = train_emb.cols();
  MatD X = train_emb.cast<double>();
  MatD W = MatD::Zero(d, n_classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(n_classes);
  MatD Y = MatD::Zero(nt, n_classes);
  for (Index i = 0; i < nt; ++i) Y(i, train_labels[static_cast<std::size_t>(i)]) = 1.0;

  // AdamW moments (no weight decay: plain convex logistic fit).
  MatD mW = MatD::Zero(d, n_classes), vW = MatD::Zero(d, n_classes);
  Eigen::RowVectorXd mb = Eigen::RowVectorXd::Zero(n_classes);
  Eigen::RowVectorXd vb = Eigen::RowVectorXd::Zero(n_classes);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int t = 1; t <= epochs; ++t) {
    MatD z = (X * W).rowwise() + b;
    MatD p(z.rows(), z.cols());
    for (Index r = 0; r < z.rows(); ++r) {
      const double mx = z.row(r).maxCoeff();
      Eigen::ArrayXd e = (z.row(r).array() - mx).exp();
      p.row(r) = (e / e.sum()).matrix();
    }
    MatD gz = (p - Y) / static_cast<double>(nt);
    MatD gW = X.transpose() * gz;
    Eigen::RowVectorXd gb = gz.colwise().sum();

    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    mW = b1 * mW + (1 - b1) * gW;
    vW = b2 * vW + (1 - b2) * gW.cwiseProduct(gW);
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
    W -= lr * ((mW / c1).array() / ((vW / c2).array().sqrt() + eps)).matrix();
    b -= lr * ((mb / c1).array() / ((vb / c2).array().sqrt() + eps)).matrix();
  }

  long hit1 = 0, hit5 = 0;
  MatD ze = (eval_emb.cast<double>() * W).rowwise() + b;
  std::vector<int> cls(static_cast<std::size_t>(n_classes));
  for (Index e = 0; e < ne; ++e) {
    std::iota(cls.begin(), cls.end(), 0);
    std::sort(cls.begin(), cls.end(), [&](int a, int c) {
      if (ze(e, a) != ze(e, c)) return ze(e, a) > ze(e, c);
      return a < c;
    });
    const auto truth = static_cast<int>(eval_labels[static_cast<std::size_t>(e)]);
    if (cls[0] == truth) ++hit1;
    for (int i = 0; i < std::min(5, n_classes); ++i)
      if (cls[static_cast<std::size_t>(i)] == truth) {
        ++hit5;
        break;
      }
  }
  ProbeReport rep;
  rep.top1.push_back(100.0 * static_cast<double>(hit1) / static_cast<double>(ne));
  rep.top5.push_back(100.0 * static_cast<double>(hit5) / static_cast<double>(ne));
  return rep;
}

std::vector<SubseqRow> subsequence_report(
    const ParamMap<float>& params, const ModelConfig& cfg,
    const DiscretizeSpec& spec, const FeatureSet& train_set,
    const FeatureSet& eval_set, int k, double knn_temp, double eval_tau) {
  check(train_set.labels && eval_set.labels,
        "subsequence_report: labels required");
  std::vector<SubseqRow> rows;
  for (int n : prefix_lengths(cfg.seq_len)) {
    MatF tr = extract_embeddings(params, cfg, spec, train_set,
                                 Representation::kStudentPooled, n, eval_tau);
    MatF ev = extract_embeddings(params, cfg, spec, eval_set,
                                 Representation::kStudentPooled, n, eval_tau);
    auto rep = knn_classify(tr, *train_set.labels, ev, *eval_set.labels, {k},
                            knn_temp);
    rows.push_back(SubseqRow{n, rep.top1[0], rep.top5[0]});
  }
  return rows;
}

}  // namespace symseq
