#pragma once

#include "symseq/graph.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace symseq {

enum class Strategy { kBase, kEntropy, kInfo, kCombined };

struct LossSpec {
  double teacher_temp = 0.04;
  double student_temp = 0.1;
  double center_momentum = 0.9;
  double granularity_lambda = 1.0;  // lambda^j weights over granularities
  Strategy strategy = Strategy::kBase;
  double alpha = 0.5;  // entropy-encouragement scale
  double beta = 0.5;   // information-maximization scale
  int strategy_switch_epoch = -1;  // combined: exploration until this epoch
  bool cross_view = false;         // pair teacher view i with student views j != i
  bool aggregate_loss_term = false;  // add the aggregated sum as a (D+1)-th term

  void validate() const {
    check(teacher_temp > 0.0 && student_temp > 0.0,
          "temperatures must be > 0");
    check(center_momentum >= 0.0 && center_momentum < 1.0,
          "center_momentum must lie in [0, 1)");
    check(granularity_lambda > 0.0, "granularity_lambda must be > 0");
    check(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be >= 0");
  }
};

// Exploration coefficients in effect at a given epoch. The combined strategy
// applies both exploration terms until strategy_switch_epoch, then reverts
// to the base objective.
inline std::pair<double, double> exploration_coefficients(const LossSpec& spec,
                                                          int epoch) {
  switch (spec.strategy) {
    case Strategy::kBase:
      return {0.0, 0.0};
    case Strategy::kEntropy:
      return {spec.alpha, 0.0};
    case Strategy::kInfo:
      return {0.0, spec.beta};
    case Strategy::kCombined:
      if (spec.strategy_switch_epoch >= 0 && epoch >= spec.strategy_switch_epoch)
        return {0.0, 0.0};
      return {spec.alpha, spec.beta};
  }
  fail("exploration_coefficients: bad strategy");
}

// p_t = softmax((logits - center) / T_t). Teacher-side: treated as a
// constant downstream, no gradient ever flows here.
template <class T>
Mat<T> teacher_distribution(const Mat<T>& logits, const Mat<T>& center,
                            double teacher_temp) {
  check(teacher_temp > 0.0, "teacher_temp must be > 0");
  check(center.rows() == 1 && center.cols() == logits.cols(),
        "teacher_distribution: center must be [1 x K]");
  Mat<T> p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    Eigen::Array<T, 1, Eigen::Dynamic> z =
        (logits.row(r) - center.row(0)).array() / static_cast<T>(teacher_temp);
    const T m = z.maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (z - m).exp();
    p.row(r) = (e / e.sum()).matrix();
  }
  return p;
}

// center <- m*center + (1-m)*mean of the batch teacher logits.
template <class T>
Mat<T> update_center(const Mat<T>& center, const Mat<T>& batch_logits,
                     double momentum) {
  check(batch_logits.rows() >= 1, "update_center: empty batch");
  check(center.rows() == 1 && center.cols() == batch_logits.cols(),
        "update_center: shape mismatch");
  check(momentum >= 0.0 && momentum <= 1.0, "update_center: momentum range");
  Mat<T> mean = batch_logits.colwise().mean();
  return static_cast<T>(momentum) * center +
         static_cast<T>(1.0 - momentum) * mean;
}

// Normalized granularity weights w_j = lambda^j / sum_j lambda^j, j = 1..D.
inline std::vector<double> granularity_weights(double lambda, int count) {
  check(count >= 1, "granularity_weights: empty");
  std::vector<double> w(static_cast<std::size_t>(count));
  double acc = 0.0, p = 1.0;
  for (int j = 0; j < count; ++j) {
    p *= lambda;
    w[static_cast<std::size_t>(j)] = p;
    acc += p;
  }
  for (auto& v : w) v /= acc;
  return w;
}

template <class T>
struct SslLossOut {
  using Id = typename ad::Graph<T>::Id;
  Id total = -1;                          // [1 x 1], batch mean
  std::vector<double> per_granularity;    // forward values of each term
};

// Batched granularity loss. teacher is a [M x K] constant of per-row p_t
// (M = B*V rows, sample-major, view-minor); student[j] holds the student
// prototype logits for granularity j as an [M x K] node. The loss is the
// weighted cross-entropy summed over granularities, averaged over rows:
//   (1/M) sum_rows sum_j w_j H(p_t_row, softmax(student_j_row / T_s)).
// With cross_view set, teacher rows are re-paired so view v scores against
// the other views' teacher distributions.
template <class T>
SslLossOut<T> ssl_loss_node(ad::Graph<T>& g, const Mat<T>& teacher,
                            const std::vector<typename ad::Graph<T>::Id>& student,
                            const std::vector<double>& weights,
                            double student_temp, Index n_views,
                            bool cross_view) {
  check(!student.empty(), "ssl_loss: no granularities");
  check(weights.size() == student.size(), "ssl_loss: weight count mismatch");
  check(student_temp > 0.0, "student_temp must be > 0");
  const Index M = teacher.rows();
  check(n_views >= 1 && M % n_views == 0, "ssl_loss: rows not divisible by views");
  check(!cross_view || n_views >= 2, "cross_view pairing needs >= 2 views");
  for (Index r = 0; r < M; ++r) {
    T s = teacher.row(r).sum();
    check(std::abs(static_cast<double>(s) - 1.0) < 1e-4 &&
              teacher.row(r).minCoeff() >= T(0),
          "ssl_loss: teacher rows must lie on the simplex");
  }

  // Teacher pairings: same-view or each of the V-1 cross offsets.
  std::vector<Mat<T>> pairings;
  if (!cross_view) {
    pairings.push_back(teacher);
  } else {
    const Index B = M / n_views;
    for (Index off = 1; off < n_views; ++off) {
      Mat<T> perm(M, teacher.cols());
      for (Index b = 0; b < B; ++b)
        for (Index v = 0; v < n_views; ++v)
          perm.row(b * n_views + v) =
              teacher.row(b * n_views + (v + off) % n_views);
      pairings.push_back(std::move(perm));
    }
  }
  const T row_norm = T(1) / static_cast<T>(M * pairings.size());

  SslLossOut<T> out;
  for (std::size_t j = 0; j < student.size(); ++j) {
    typename ad::Graph<T>::Id term = -1;
    auto logq = g.log_softmax_rows(
        g.scale(student[j], static_cast<T>(1.0 / student_temp)));
    for (const auto& pt : pairings) {
      auto ce = g.scale(g.sum_all(g.hadamard(g.constant(pt), logq)), -row_norm);
      term = term < 0 ? ce : g.add(term, ce);
    }
    out.per_granularity.push_back(static_cast<double>(g.val(term)(0, 0)));
    auto weighted = g.scale(term, static_cast<T>(weights[j]));
    out.total = out.total < 0 ? weighted : g.add(out.total, weighted);
  }
  return out;
}

// Plain per-sample form of the granularity loss (contract shape): one p_t
// row per view, per-view maps granularity n -> student prototype logits.
// Returns the total and the per-granularity breakdown.
inline std::pair<double, std::map<int, double>> ssl_loss(
    const std::vector<Eigen::RowVectorXd>& teacher_views,
    const std::vector<std::map<int, Eigen::RowVectorXd>>& student_views,
    const LossSpec& spec) {
  check(!teacher_views.empty(), "ssl_loss: empty views");
  check(teacher_views.size() == student_views.size(),
        "ssl_loss: view count mismatch");
  const auto& gran = student_views.front();
  check(!gran.empty(), "ssl_loss: no granularities");
  const int D = static_cast<int>(gran.size());
  const auto w = granularity_weights(spec.granularity_lambda, D);

  double total = 0.0;
  std::map<int, double> breakdown;
  for (std::size_t v = 0; v < teacher_views.size(); ++v) {
    const auto& pt = teacher_views[v];
    check(std::abs(pt.sum() - 1.0) < 1e-6 && pt.minCoeff() >= 0.0,
          "ssl_loss: teacher distribution not on the simplex");
    int j = 0;
    for (const auto& [n, logits] : student_views[v]) {
      Eigen::ArrayXd z = (logits.array() / spec.student_temp).transpose();
      const double m = z.maxCoeff();
      const double lse = std::log((z - m).exp().sum()) + m;
      double ce = 0.0;
      for (Index k = 0; k < pt.size(); ++k) ce -= pt(k) * (z(k) - lse);
      const double contrib =
          w[static_cast<std::size_t>(j)] * ce / static_cast<double>(teacher_views.size());
      total += contrib;
      breakdown[n] += contrib;
      ++j;
    }
  }
  return {total, breakdown};
}

// total = ssl - alpha*H(p) - beta*I(s) (+ VQ auxiliary when present), with
// the exploration coefficients resolved per strategy and epoch.
template <class T>
typename ad::Graph<T>::Id total_loss_node(ad::Graph<T>& g,
                                          typename ad::Graph<T>::Id ssl,
                                          typename ad::Graph<T>::Id seq_entropy,
                                          typename ad::Graph<T>::Id seq_info,
                                          typename ad::Graph<T>::Id vq_aux,
                                          const LossSpec& spec, int epoch) {
  auto [alpha, beta] = exploration_coefficients(spec, epoch);
  auto total = ssl;
  if (alpha > 0.0)
    total = g.sub(total, g.scale(seq_entropy, static_cast<T>(alpha)));
  if (beta > 0.0) total = g.sub(total, g.scale(seq_info, static_cast<T>(beta)));
  if (vq_aux >= 0) total = g.add(total, vq_aux);
  return total;
}

// Shannon entropy of a distribution row (natural log).
template <class T>
double row_entropy(const Eigen::Ref<const Mat<T>>& p) {
  double h = 0.0;
  for (Index c = 0; c < p.cols(); ++c) {
    const double v = static_cast<double>(p(0, c));
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace symseq
