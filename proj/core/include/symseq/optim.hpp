#pragma once

#include "symseq/model.hpp"

#include <cmath>

namespace symseq {

// Pre-clip global norm; gradients scaled in place when above max_norm.
template <class T>
double clip_global_norm(ParamMap<T>& grads, double max_norm) {
  check(max_norm > 0.0, "clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& [k, g] : grads)
    sq += static_cast<double>(g.template cast<double>().squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [k, g] : grads) g *= s;
  }
  return norm;
}

// AdamW with decoupled weight decay. Decay is applied to weight matrices
// only (biases, norm parameters and single learned tokens are rows of one
// and skipped, matching common transformer practice).
template <class T>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.04)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void init(const ParamMap<T>& params) {
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : params) {
      if (!is_student_param(name)) continue;
      m_[name] = Mat<T>::Zero(p.rows(), p.cols());
      v_[name] = Mat<T>::Zero(p.rows(), p.cols());
    }
    t_ = 0;
  }

  // grads must cover exactly the student parameters.
  void step(ParamMap<T>& params, const ParamMap<T>& grads, double lr) {
    ++t_;
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1_, t_));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2_, t_));
    for (auto& [name, m] : m_) {
      auto git = grads.find(name);
      check(git != grads.end(), "AdamW: missing gradient for " + name);
      const Mat<T>& g = git->second;
      Mat<T>& v = v_[name];
      Mat<T>& p = params[name];
      m = static_cast<T>(beta1_) * m + static_cast<T>(1.0 - beta1_) * g;
      v = static_cast<T>(beta2_) * v +
          static_cast<T>(1.0 - beta2_) * g.cwiseProduct(g);
      Mat<T> mhat = m / bc1;
      Mat<T> vhat = v / bc2;
      Mat<T> update = mhat.array() /
                      (vhat.array().sqrt() + static_cast<T>(eps_));
      if (wd_ > 0.0 && decayable(name, p.rows()))
        update += static_cast<T>(wd_) * p;
      p -= static_cast<T>(lr) * update;
    }
  }

  long steps_taken() const { return t_; }

  // Serialization hooks (opt.* checkpoint entries).
  const ParamMap<T>& first_moments() const { return m_; }
  const ParamMap<T>& second_moments() const { return v_; }
  void restore(ParamMap<T> m, ParamMap<T> v, long t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  double beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  ParamMap<T> m_, v_;
};

}  // namespace symseq
