#pragma once

#include "symseq/common.hpp"
#include "symseq/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace symseq {

// Architecture hyperparameters. d_t must match the feature file; it also
// has to equal d_model because the teacher projector consumes the global
// teacher token (width d_t) while the student projector consumes the
// sequence encoder's pooled output (width d_model), and the EMA update
// requires both projectors to share every tensor shape.
struct ModelConfig {
  int vocab_size = 128;     // A
  int seq_len = 8;          // L, power of two
  int d_model = 256;
  int n_heads = 4;
  int dec_depth = 4;
  int enc_depth = 2;
  int proj_hidden = 1024;
  int proj_bottleneck = 128;
  int n_prototypes = 1024;  // K
  int d_t = 256;

  void validate() const {
    check(vocab_size >= 2, "vocab_size must be >= 2");
    check(n_prototypes >= 2, "n_prototypes must be >= 2");
    check(is_power_of_two(seq_len), "seq_len: power of two required");
    check(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0,
          "d_model must be divisible by n_heads");
    check(dec_depth >= 1, "dec_depth must be >= 1");
    check(enc_depth >= 0, "enc_depth must be >= 0");
    check(proj_hidden >= 1 && proj_bottleneck >= 1, "projector dims must be >= 1");
    check(d_t >= 1, "d_t must be >= 1");
    check(d_t == d_model,
          "d_t must equal d_model (shared projector shapes for the EMA "
          "teacher update)");
  }
};

template <class T>
using ParamMap = std::map<std::string, Mat<T>>;  // sorted: stable i/o order

inline bool is_student_param(const std::string& name) {
  return name.rfind("dec.", 0) == 0 || name.rfind("enc.", 0) == 0 ||
         name.rfind("proj_s.", 0) == 0 || name == "tokemb";
}

// Parameters excluded from weight decay: rows-of-one tensors (biases, norm
// gains/shifts, single learned tokens).
inline bool decayable(const std::string& name, Index rows) {
  (void)name;
  return rows > 1;
}

namespace detail {

template <class T>
Mat<T> trunc_normal_mat(Index r, Index c, T sigma, RngStream& rs) {
  Mat<T> m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j)
      m(i, j) = static_cast<T>(rs.trunc_normal(static_cast<double>(sigma)));
  return m;
}

template <class T>
void init_linear(ParamMap<T>& p, const std::string& prefix, Index in, Index out,
                 RngStream& rs) {
  p[prefix + ".w"] = trunc_normal_mat<T>(in, out, T(0.02), rs);
  p[prefix + ".b"] = Mat<T>::Zero(1, out);
}

template <class T>
void init_norm(ParamMap<T>& p, const std::string& prefix, Index d) {
  p[prefix + ".g"] = Mat<T>::Ones(1, d);
  p[prefix + ".b"] = Mat<T>::Zero(1, d);
}

template <class T>
void init_attn(ParamMap<T>& p, const std::string& prefix, Index d_in, Index d,
               RngStream& rs) {
  init_linear(p, prefix + ".q", d, d, rs);
  init_linear(p, prefix + ".k", d_in, d, rs);
  init_linear(p, prefix + ".v", d_in, d, rs);
  init_linear(p, prefix + ".o", d, d, rs);
}

template <class T>
void init_projector(ParamMap<T>& p, const std::string& prefix,
                    const ModelConfig& cfg, RngStream& rs) {
  init_linear(p, prefix + ".l1", cfg.d_model, cfg.proj_hidden, rs);
  init_linear(p, prefix + ".l2", cfg.proj_hidden, cfg.proj_bottleneck, rs);
  init_linear(p, prefix + ".l3", cfg.proj_bottleneck, cfg.n_prototypes, rs);
}

}  // namespace detail

// Truncated-normal (sigma 0.02) weights, zero biases, unit norm gains. The
// teacher projector starts as an exact copy of the student projector.
template <class T>
ParamMap<T> init_params(const ModelConfig& cfg, RngStream rs) {
  using namespace detail;
  cfg.validate();
  ParamMap<T> p;
  const Index d = cfg.d_model;

  p["dec.start"] = trunc_normal_mat<T>(1, d, T(0.02), rs);
  p["dec.pos"] = trunc_normal_mat<T>(cfg.seq_len, d, T(0.02), rs);
  for (int l = 0; l < cfg.dec_depth; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l);
    init_norm(p, pre + ".ln1", d);
    init_attn(p, pre + ".attn", d, d, rs);
    init_norm(p, pre + ".ln2", d);
    init_attn(p, pre + ".cross", cfg.d_t, d, rs);
    init_norm(p, pre + ".ln3", d);
    init_linear(p, pre + ".mlp.fc1", d, 4 * d, rs);
    init_linear(p, pre + ".mlp.fc2", 4 * d, d, rs);
  }
  init_norm(p, "dec.lnf", d);
  init_linear(p, "dec.head", d, cfg.vocab_size, rs);

  p["tokemb"] = trunc_normal_mat<T>(cfg.vocab_size, d, T(0.02), rs);

  p["enc.summary"] = trunc_normal_mat<T>(1, d, T(0.02), rs);
  p["enc.pos"] = trunc_normal_mat<T>(cfg.seq_len + 1, d, T(0.02), rs);
  for (int l = 0; l < cfg.enc_depth; ++l) {
    const std::string pre = "enc.layer" + std::to_string(l);
    init_norm(p, pre + ".ln1", d);
    init_attn(p, pre + ".attn", d, d, rs);
    init_norm(p, pre + ".ln2", d);
    init_linear(p, pre + ".mlp.fc1", d, 4 * d, rs);
    init_linear(p, pre + ".mlp.fc2", 4 * d, d, rs);
  }

  init_projector(p, "proj_s", cfg, rs);
  for (const char* suf : {".l1.w", ".l1.b", ".l2.w", ".l2.b", ".l3.w", ".l3.b"})
    p[std::string("proj_t") + suf] = p[std::string("proj_s") + suf];

  p["center"] = Mat<T>::Zero(1, cfg.n_prototypes);
  return p;
}

// theta_t <- lambda*theta_t + (1-lambda)*theta_s, elementwise over matching
// key suffixes of the two prefixes.
template <class T>
void ema_update(ParamMap<T>& params, const std::string& teacher_prefix,
                const std::string& student_prefix, T lambda) {
  check(lambda >= T(0) && lambda <= T(1), "ema_update: lambda outside [0,1]");
  for (auto& [name, tensor] : params) {
    if (name.rfind(teacher_prefix, 0) != 0) continue;
    const std::string peer = student_prefix + name.substr(teacher_prefix.size());
    auto it = params.find(peer);
    check(it != params.end(), "ema_update: missing student tensor " + peer);
    check(it->second.rows() == tensor.rows() &&
              it->second.cols() == tensor.cols(),
          "ema_update: shape mismatch for " + name);
    tensor = lambda * tensor + (T(1) - lambda) * it->second;
  }
}

// Generic elementwise EMA over two aligned maps (tests exercise this form).
template <class T>
ParamMap<T> ema_update(const ParamMap<T>& theta_t, const ParamMap<T>& theta_s,
                       T lambda) {
  check(lambda >= T(0) && lambda <= T(1), "ema_update: lambda outside [0,1]");
  ParamMap<T> out;
  for (const auto& [name, tt] : theta_t) {
    auto it = theta_s.find(name);
    check(it != theta_s.end(), "ema_update: missing tensor " + name);
    check(it->second.rows() == tt.rows() && it->second.cols() == tt.cols(),
          "ema_update: shape mismatch for " + name);
    out[name] = lambda * tt + (T(1) - lambda) * it->second;
  }
  return out;
}

template <class T>
std::size_t param_count(const ParamMap<T>& p) {
  std::size_t n = 0;
  for (const auto& [k, v] : p) n += static_cast<std::size_t>(v.size());
  return n;
}

template <class A, class B>
ParamMap<B> cast_params(const ParamMap<A>& p) {
  ParamMap<B> out;
  for (const auto& [k, v] : p) out[k] = v.template cast<B>();
  return out;
}

}  // namespace symseq
