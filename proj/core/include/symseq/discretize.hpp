#pragma once

#include "symseq/graph.hpp"
#include "symseq/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace symseq {

enum class DiscretizeKind { kSoftmaxTemp, kGumbel, kVq };
enum class TauSchedule { kConstant, kLinear, kCosine };

struct DiscretizeSpec {
  DiscretizeKind kind = DiscretizeKind::kGumbel;
  double tau_start = 1.0;
  double tau_end = 0.12;
  TauSchedule schedule = TauSchedule::kCosine;
  bool st_hard = false;   // straight-through hard forward for softmax/gumbel
  double vq_beta = 0.25;  // commitment weight

  void validate() const {
    check(tau_end > 0.0 && tau_start >= tau_end,
          "tau schedule requires tau_start >= tau_end > 0");
    check(vq_beta >= 0.0, "vq_beta must be >= 0");
  }
};

// Monotone non-increasing temperature over [0, total_steps].
inline double schedule_tau(const DiscretizeSpec& spec, long step,
                           long total_steps) {
  check(total_steps > 0, "schedule_tau: total_steps must be > 0");
  check(step >= 0 && step <= total_steps, "schedule_tau: step out of range");
  const double f = static_cast<double>(step) / static_cast<double>(total_steps);
  switch (spec.schedule) {
    case TauSchedule::kConstant:
      return spec.tau_start;
    case TauSchedule::kLinear:
      return spec.tau_start + (spec.tau_end - spec.tau_start) * f;
    case TauSchedule::kCosine:
      return spec.tau_end +
             (spec.tau_start - spec.tau_end) * (1.0 + std::cos(M_PI * f)) / 2.0;
  }
  fail("schedule_tau: bad schedule");
}

// First maximal element (lowest index wins ties).
template <class Row>
Index argmax_row(const Row& r) {
  Index best = 0;
  for (Index j = 1; j < r.size(); ++j)
    if (r(j) > r(best)) best = j;
  return best;
}

// Nearest codebook row by Euclidean distance, lowest index on ties.
template <class T>
Index nearest_code(const Eigen::Ref<const Mat<T>>& z_row,
                   const Eigen::Ref<const Mat<T>>& codebook) {
  check(z_row.cols() == codebook.cols(), "vq: dimension mismatch");
  check(codebook.rows() >= 1, "vq: empty codebook");
  Index best = 0;
  T best_d = (z_row.row(0) - codebook.row(0)).squaredNorm();
  for (Index i = 1; i < codebook.rows(); ++i) {
    const T d = (z_row.row(0) - codebook.row(i)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// ---- tape-level ops (training path) ----

// soft = softmax(logits / tau), rows on the simplex, fully differentiable.
template <class T>
typename ad::Graph<T>::Id softmax_soft(ad::Graph<T>& g,
                                       typename ad::Graph<T>::Id logits,
                                       double tau) {
  check(tau > 0.0, "softmax discretization requires tau > 0");
  return g.softmax_rows(g.scale(logits, static_cast<T>(1.0 / tau)));
}

// soft = softmax((logits + gumbel_noise) / tau); the reparameterized path,
// gradient flows through logits only (noise enters as a constant).
template <class T>
typename ad::Graph<T>::Id gumbel_soft(ad::Graph<T>& g,
                                      typename ad::Graph<T>::Id logits,
                                      double tau, const Mat<T>& noise) {
  check(tau > 0.0, "gumbel discretization requires tau > 0");
  check(noise.rows() == g.val(logits).rows() &&
            noise.cols() == g.val(logits).cols(),
        "gumbel noise shape mismatch");
  auto shifted = g.add(logits, g.constant(noise));
  return g.softmax_rows(g.scale(shifted, static_cast<T>(1.0 / tau)));
}

template <class T>
Mat<T> gumbel_noise(Index rows, Index cols, RngStream& rs) {
  Mat<T> n(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      n(i, j) = static_cast<T>(rs.gumbel());
  return n;
}

template <class T>
Mat<T> one_hot_rows(const Mat<T>& soft) {
  Mat<T> h = Mat<T>::Zero(soft.rows(), soft.cols());
  for (Index r = 0; r < soft.rows(); ++r) h(r, argmax_row(soft.row(r))) = T(1);
  return h;
}

// Straight-through: forward value is exactly one-hot(argmax(soft)),
// backward is the identity onto soft.
template <class T>
typename ad::Graph<T>::Id straight_through_hard(ad::Graph<T>& g,
                                                typename ad::Graph<T>::Id soft) {
  auto hard = g.constant(one_hot_rows(g.val(soft)));
  return g.straight_through(hard, soft);
}

template <class T>
struct VqOut {
  using Id = typename ad::Graph<T>::Id;
  std::vector<Index> ids;  // per row
  Id quantized;   // [m x d], selected codes; gradient reaches the codebook
  Id st_out;      // [m x d], forward = codes, backward = identity onto z
  Id aux_loss;    // [1 x 1]: ||sg(z)-e||^2 + beta*||z-sg(e)||^2, row-mean
};

// Vector quantization against a codebook node (the shared token embedding
// table). z is [m x d].
template <class T>
VqOut<T> vq_quantize(ad::Graph<T>& g, typename ad::Graph<T>::Id z,
                     typename ad::Graph<T>::Id codebook, double beta) {
  const Mat<T>& zv = g.val(z);
  const Mat<T>& cb = g.val(codebook);
  check(zv.cols() == cb.cols(), "vq: dimension mismatch");

  VqOut<T> out;
  Mat<T> onehot = Mat<T>::Zero(zv.rows(), cb.rows());
  out.ids.resize(static_cast<std::size_t>(zv.rows()));
  for (Index r = 0; r < zv.rows(); ++r) {
    const Index id = nearest_code<T>(zv.row(r), cb);
    out.ids[static_cast<std::size_t>(r)] = id;
    onehot(r, id) = T(1);
  }
  auto sel = g.constant(std::move(onehot));
  out.quantized = g.matmul(sel, codebook);
  out.st_out = g.straight_through(out.quantized, z);

  auto d_code = g.sub(g.constant(zv), out.quantized);       // grads codebook
  auto d_commit = g.sub(z, g.constant(g.val(out.quantized)));  // grads z
  auto t1 = g.sum_all(g.hadamard(d_code, d_code));
  auto t2 = g.sum_all(g.hadamard(d_commit, d_commit));
  out.aux_loss = g.scale(g.add(t1, g.scale(t2, static_cast<T>(beta))),
                         T(1) / static_cast<T>(zv.rows()));
  return out;
}

// ---- plain single-vector forms (contracts, probing, tests) ----

struct SoftResult {
  Eigen::RowVectorXd soft;
  Index id = 0;
};

inline SoftResult softmax_discretize(const Eigen::RowVectorXd& logits,
                                     double tau) {
  check(tau > 0.0, "softmax discretization requires tau > 0");
  for (Index i = 0; i < logits.size(); ++i)
    check(std::isfinite(logits(i)), "softmax_discretize: non-finite logit");
  MatD l(1, logits.size());
  l.row(0) = logits;
  ad::Graph<double> g;
  auto s = softmax_soft(g, g.constant(std::move(l)), tau);
  SoftResult r;
  r.soft = g.val(s).row(0);
  r.id = argmax_row(r.soft);
  return r;
}

inline SoftResult gumbel_discretize(const Eigen::RowVectorXd& logits,
                                    double tau, RngStream& rs) {
  check(tau > 0.0, "gumbel discretization requires tau > 0");
  MatD l(1, logits.size());
  l.row(0) = logits;
  MatD noise = gumbel_noise<double>(1, logits.size(), rs);
  ad::Graph<double> g;
  auto s = gumbel_soft(g, g.constant(std::move(l)), tau, noise);
  SoftResult r;
  r.soft = g.val(s).row(0);
  r.id = argmax_row(r.soft);
  return r;
}

struct VqResult {
  Index id = 0;
  Eigen::RowVectorXd quantized;
  double aux_loss = 0.0;
};

inline VqResult vq_discretize(const Eigen::RowVectorXd& z, const MatD& codebook,
                              double beta = 0.25) {
  VqResult r;
  MatD zrow(1, z.size());
  zrow.row(0) = z;
  r.id = nearest_code<double>(zrow, codebook);
  r.quantized = codebook.row(r.id);
  const double code_term = (z - r.quantized).squaredNorm();
  r.aux_loss = code_term + beta * code_term;
  return r;
}

}  // namespace symseq
