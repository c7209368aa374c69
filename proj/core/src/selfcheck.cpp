#include "symseq/selfcheck.hpp"

#include "symseq/checkpoint.hpp"
#include "symseq/config.hpp"
#include "symseq/featstore.hpp"
#include "symseq/gradcheck.hpp"
#include "symseq/loss.hpp"
#include "symseq/seqgen.hpp"
#include "symseq/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>

namespace symseq {

namespace {

using GD = ad::Graph<double>;
using IdMap = std::map<std::string, GD::Id>;

MatD random_mat(Index r, Index c, RngStream& rs, double scale = 1.0) {
  MatD m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rs.normal() * scale;
  return m;
}

ModelConfig tiny_config(RngStream& rs) {
  ModelConfig cfg;
  cfg.vocab_size = 5 + static_cast<int>(rs.next_u64() % 4);
  cfg.seq_len = (rs.next_u64() % 2) ? 2 : 4;
  cfg.n_heads = 2;
  cfg.d_model = (rs.next_u64() % 2) ? 8 : 12;
  cfg.d_t = cfg.d_model;
  cfg.dec_depth = 1 + static_cast<int>(rs.next_u64() % 2);
  cfg.enc_depth = 1 + static_cast<int>(rs.next_u64() % 2);
  cfg.proj_hidden = 10;
  cfg.proj_bottleneck = 6;
  cfg.n_prototypes = 7;
  return cfg;
}

// FD-vs-tape check for a scalar-valued builder over named tensors.
GradCheckReport check_op(
    const ParamMap<double>& params,
    const std::function<GD::Id(GD&, IdMap&)>& build, long samples_per_tensor,
    RngStream& rs) {
  GD g;
  IdMap ids;
  for (const auto& [k, v] : params) ids[k] = g.leaf(v, true);
  auto root = build(g, ids);
  g.backward(root);
  ParamMap<double> analytic;
  for (const auto& [k, id] : ids) analytic[k] = g.grad(id);

  auto eval = [&build](const ParamMap<double>& p) {
    GD g2;
    IdMap ids2;
    for (const auto& [k, v] : p) ids2[k] = g2.leaf(v, false);
    auto r = build(g2, ids2);
    return g2.val(r)(0, 0);
  };
  return finite_difference_check(params, eval, analytic, samples_per_tensor, rs);
}

CheckResult from_reports(const std::string& name,
                         const std::vector<GradCheckReport>& reps) {
  double worst = 0.0;
  std::string where;
  long coords = 0;
  for (const auto& r : reps) {
    coords += r.coords_checked;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      where = r.worst_tensor;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max rel err %.3g over %ld coords", worst,
                coords);
  std::string detail = buf;
  if (!where.empty()) detail += " (worst: " + where + ")";
  return CheckResult{name, worst < 1e-4, detail};
}

ParamMap<double> student_subset(const ParamMap<double>& all) {
  ParamMap<double> out;
  for (const auto& [k, v] : all)
    if (is_student_param(k)) out[k] = v;
  return out;
}

// Finite differences need activations away from the near-zero init scale,
// otherwise truncation error dominates the comparison.
void jitter(ParamMap<double>& params, RngStream& rs, double sigma = 0.25) {
  for (auto& [k, v] : params) v += random_mat(v.rows(), v.cols(), rs, sigma);
}

// Builds the fully unrolled student loss (teacher distribution as constant)
// with frozen gumbel noise; used for the end-to-end gradient check.
GD::Id build_full_loss(GD& g, IdMap& ids, const ParamMap<double>& frozen,
                       const ModelConfig& cfg, const DiscretizeSpec& dspec,
                       const LossSpec& lspec, const MatD& global,
                       const MatD& patch, Index n_views,
                       std::uint64_t noise_seed) {
  TapeParams<double> tp;
  tp.ids = ids;
  for (const auto& [k, v] : frozen)
    if (!tp.ids.count(k)) tp.ids[k] = g.constant(v);

  auto t_logits_id = projector_forward(g, tp, "proj_t", g.constant(global));
  MatD center = frozen.at("center");
  MatD p_t = teacher_distribution(g.val(t_logits_id), center, lspec.teacher_temp);

  RngStream noise(noise_seed);
  GenMode<double> mode{0.7, false, &noise};
  auto patch_id = g.constant(patch);
  auto gen = generate_batch(g, tp, cfg, dspec, patch_id, global.rows(), mode);
  auto pb = embed_prefixes_batch(g, tp, cfg, gen);

  std::vector<GD::Id> student = pb.proj;
  if (lspec.aggregate_loss_term) student.push_back(pb.aggregated);
  auto w = granularity_weights(lspec.granularity_lambda,
                               static_cast<int>(student.size()));
  auto ssl = ssl_loss_node(g, p_t, student, w, lspec.student_temp, n_views,
                           lspec.cross_view);
  auto ent = sequence_entropy_node(g, gen);
  auto info = sequence_info_node(g, gen);
  return total_loss_node(g, ssl.total, ent, info, gen.vq_aux, lspec, 0);
}

}  // namespace

std::vector<CheckResult> gradient_suite(int configs_per_op, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;

  {  // projector
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 1, c);
      auto cfg = tiny_config(rs);
      auto all = init_params<double>(cfg, rng.stream(Rng::kInit, 1, c));
      ParamMap<double> params;
      for (const auto& [k, v] : all)
        if (k.rfind("proj_s.", 0) == 0) params[k] = v;
      jitter(params, rs);
      params["x"] = random_mat(2, cfg.d_model, rs);
      MatD probe = random_mat(2, cfg.n_prototypes, rs);
      auto build = [probe](GD& g, IdMap& ids) {
        TapeParams<double> tp;
        tp.ids = ids;
        auto y = projector_forward(g, tp, "proj_s", ids.at("x"));
        return g.sum_all(g.hadamard(y, g.constant(probe)));
      };
      reps.push_back(check_op(params, build, 12, rs));
    }
    out.push_back(from_reports("grad projector", reps));
  }

  {  // decoder full-prefix forward
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 2, c);
      auto cfg = tiny_config(rs);
      auto all = init_params<double>(cfg, rng.stream(Rng::kInit, 2, c));
      ParamMap<double> params;
      for (const auto& [k, v] : all)
        if (k.rfind("dec.", 0) == 0) params[k] = v;
      const Index t = cfg.seq_len;
      params["prefix"] = random_mat(t, cfg.d_model, rs, 0.5);
      MatD patch = random_mat(3, cfg.d_t, rs);
      MatD probe = random_mat(t, cfg.vocab_size, rs);
      ModelConfig cc = cfg;
      auto build = [cc, patch, probe, t](GD& g, IdMap& ids) {
        TapeParams<double> tp;
        tp.ids = ids;
        auto dec = decoder_forward(g, tp, cc, ids.at("prefix"),
                                   g.constant(patch), 1, t);
        return g.sum_all(g.hadamard(dec.logits, g.constant(probe)));
      };
      reps.push_back(check_op(params, build, 8, rs));
    }
    out.push_back(from_reports("grad decoder", reps));
  }

  {  // encoder
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 3, c);
      auto cfg = tiny_config(rs);
      auto all = init_params<double>(cfg, rng.stream(Rng::kInit, 3, c));
      ParamMap<double> params;
      for (const auto& [k, v] : all)
        if (k.rfind("enc.", 0) == 0) params[k] = v;
      const Index n = cfg.seq_len;
      params["toks"] = random_mat(n, cfg.d_model, rs, 0.5);
      MatD probe = random_mat(1, cfg.d_model, rs);
      ModelConfig cc = cfg;
      auto build = [cc, probe](GD& g, IdMap& ids) {
        TapeParams<double> tp;
        tp.ids = ids;
        auto pooled = encoder_forward(g, tp, cc, ids.at("toks"));
        return g.sum_all(g.hadamard(pooled, g.constant(probe)));
      };
      reps.push_back(check_op(params, build, 8, rs));
    }
    out.push_back(from_reports("grad encoder", reps));
  }

  {  // softmax discretization
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 4, c);
      const Index A = 6 + static_cast<Index>(rs.next_u64() % 6);
      ParamMap<double> params{{"logits", random_mat(3, A, rs)}};
      MatD probe = random_mat(3, A, rs);
      const double tau = 0.2 + rs.uniform();
      auto build = [probe, tau](GD& g, IdMap& ids) {
        auto soft = softmax_soft(g, ids.at("logits"), tau);
        return g.sum_all(g.hadamard(soft, g.constant(probe)));
      };
      reps.push_back(check_op(params, build, 20, rs));
    }
    out.push_back(from_reports("grad softmax discretize", reps));
  }

  {  // gumbel discretization, frozen noise
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 5, c);
      const Index A = 6 + static_cast<Index>(rs.next_u64() % 6);
      ParamMap<double> params{{"logits", random_mat(3, A, rs)}};
      MatD noise = gumbel_noise<double>(3, A, rs);
      MatD probe = random_mat(3, A, rs);
      const double tau = 0.3 + rs.uniform();
      auto build = [probe, noise, tau](GD& g, IdMap& ids) {
        auto soft = gumbel_soft(g, ids.at("logits"), tau, noise);
        return g.sum_all(g.hadamard(soft, g.constant(probe)));
      };
      reps.push_back(check_op(params, build, 20, rs));
    }
    out.push_back(from_reports("grad gumbel discretize (frozen noise)", reps));
  }

  {  // VQ auxiliary loss against its closed-form gradients. Finite
     // differences cannot see stop-gradient boundaries, so the oracle here
     // is the formula: dz = 2*beta*(z - e)/m, de_i = -2*sum_{r: id_r=i}
     // (z_r - e_i)/m.
    double worst = 0.0;
    long coords = 0;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 6, c);
      const Index A = 8, d = 6, m = 3;
      const double beta = 0.25;
      MatD z = random_mat(m, d, rs);
      MatD cb = random_mat(A, d, rs);
      GD g;
      auto zid = g.leaf(z, true);
      auto cbid = g.leaf(cb, true);
      auto vq = vq_quantize(g, zid, cbid, beta);
      g.backward(vq.aux_loss);

      MatD want_z = MatD::Zero(m, d);
      MatD want_cb = MatD::Zero(A, d);
      for (Index r = 0; r < m; ++r) {
        const Index id = vq.ids[static_cast<std::size_t>(r)];
        want_z.row(r) = 2.0 * beta * (z.row(r) - cb.row(id)) / m;
        want_cb.row(id) -= 2.0 * (z.row(r) - cb.row(id)) / m;
      }
      worst = std::max(worst, (g.grad(zid) - want_z).cwiseAbs().maxCoeff());
      worst = std::max(worst, (g.grad(cbid) - want_cb).cwiseAbs().maxCoeff());
      coords += static_cast<long>(z.size() + cb.size());
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "max dev %.3g from closed form over %ld coords", worst,
                  coords);
    out.push_back(CheckResult{"grad vq auxiliary loss (closed form)",
                              worst < 1e-12, buf});
  }

  {  // fully unrolled student loss
    std::vector<GradCheckReport> reps;
    for (int c = 0; c < configs_per_op; ++c) {
      auto rs = rng.stream(Rng::kTest, 7, c);
      auto cfg = tiny_config(rs);
      auto all = init_params<double>(cfg, rng.stream(Rng::kInit, 7, c));
      ParamMap<double> params = student_subset(all);
      jitter(params, rs, 0.15);
      ParamMap<double> frozen;
      for (const auto& [k, v] : all)
        if (!is_student_param(k)) frozen[k] = v;

      const Index B = 2, V = 2, M = B * V, P1 = 3;
      MatD global = random_mat(M, cfg.d_t, rs);
      MatD patch = random_mat(M * P1, cfg.d_t, rs);
      DiscretizeSpec dspec;
      dspec.kind = (c % 2 == 0) ? DiscretizeKind::kGumbel
                                : DiscretizeKind::kSoftmaxTemp;
      LossSpec lspec;
      lspec.strategy = Strategy::kCombined;
      lspec.alpha = 0.3;
      lspec.beta = 0.3;
      lspec.aggregate_loss_term = (c % 2 == 1);
      const std::uint64_t noise_seed = rs.next_u64();
      ModelConfig cc = cfg;
      auto build = [=](GD& g, IdMap& ids) {
        return build_full_loss(g, ids, frozen, cc, dspec, lspec, global, patch,
                               V, noise_seed);
      };
      reps.push_back(check_op(params, build, 3, rs));
    }
    out.push_back(from_reports("grad full unrolled loss", reps));
  }

  return out;
}

namespace {

CheckResult check_gumbel_max(Rng& rng) {
  const Index A = 16;
  double worst_tv = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto rs = rng.stream(Rng::kTest, 10, trial);
    Eigen::RowVectorXd logits(A);
    for (Index j = 0; j < A; ++j) logits(j) = rs.normal();
    Eigen::RowVectorXd target(A);
    {
      Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
      target = (e / e.sum()).matrix();
    }
    Eigen::RowVectorXd freq = Eigen::RowVectorXd::Zero(A);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Index best = 0;
      double best_v = -1e300;
      for (Index j = 0; j < A; ++j) {
        const double v = logits(j) + rs.gumbel();
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      freq(best) += 1.0 / n;
    }
    const double tv = 0.5 * (freq - target).cwiseAbs().sum();
    worst_tv = std::max(worst_tv, tv);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "worst TV %.4f over 10 vectors x 100k draws",
                worst_tv);
  return CheckResult{"gumbel-max matches softmax", worst_tv < 0.01, buf};
}

CheckResult check_vq_oracle(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 11);
  const Index A = 32, d = 8;
  long mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    MatD cb = random_mat(A, d, rs);
    MatD z = random_mat(1, d, rs);
    const Index got = nearest_code<double>(z, cb);
    Index want = 0;
    double wd = (z.row(0) - cb.row(0)).squaredNorm();
    for (Index i = 1; i < A; ++i) {
      const double di = (z.row(0) - cb.row(i)).squaredNorm();
      if (di < wd) {
        wd = di;
        want = i;
      }
    }
    if (got != want) ++mismatches;
  }
  // engineered tie: equidistant point resolves to the lowest index
  MatD cb(2, 2);
  cb << 0, 0, 1, 1;
  MatD z(1, 2);
  z << 0.5, 0.5;
  const bool tie_ok = nearest_code<double>(z, cb) == 0;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%ld/1000 mismatches, tie->lowest %s",
                mismatches, tie_ok ? "ok" : "BROKEN");
  return CheckResult{"vq nearest-code equals exhaustive search",
                     mismatches == 0 && tie_ok, buf};
}

CheckResult check_st_identity(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 12);
  const Index A = 8, d = 5, m = 3;
  GD g;
  auto z = g.leaf(random_mat(m, d, rs), true);
  auto cb = g.leaf(random_mat(A, d, rs), true);
  auto vq = vq_quantize(g, z, cb, 0.25);
  MatD probe = random_mat(m, d, rs);
  auto loss = g.sum_all(g.hadamard(vq.st_out, g.constant(probe)));
  g.backward(loss);
  const double err_z = (g.grad(z) - probe).cwiseAbs().maxCoeff();
  const double err_cb = g.grad(cb).cwiseAbs().maxCoeff();
  // forward must be exactly the selected codes
  double fwd_err = 0.0;
  for (Index r = 0; r < m; ++r)
    fwd_err = std::max(fwd_err,
                       (g.val(vq.st_out).row(r) -
                        g.val(cb).row(vq.ids[static_cast<std::size_t>(r)]))
                           .cwiseAbs()
                           .maxCoeff());  // exact: value copied verbatim
  char buf[120];
  std::snprintf(buf, sizeof(buf),
                "jacobian dev %.3g, codebook leak %.3g, fwd dev %.3g", err_z,
                err_cb, fwd_err);
  return CheckResult{"vq straight-through jacobian is identity",
                     err_z == 0.0 && err_cb == 0.0 && fwd_err == 0.0, buf};
}

CheckResult check_loss_closed_forms(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 13);
  const Index K = 64, V = 2;
  bool ok = true;
  std::string detail;

  {  // uniform teacher + uniform student -> ln K
    GD g;
    MatD pt = MatD::Constant(V, K, 1.0 / K);
    std::vector<GD::Id> student;
    for (int j = 0; j < 4; ++j) student.push_back(g.constant(MatD::Zero(V, K)));
    auto w = granularity_weights(1.0, 4);
    auto ssl = ssl_loss_node(g, pt, student, w, 0.1, V, false);
    const double got = g.val(ssl.total)(0, 0);
    const double want = std::log(static_cast<double>(K));
    if (std::abs(got - want) > 1e-12) {
      ok = false;
      detail += "uniform case off by " + std::to_string(got - want) + "; ";
    }
  }

  {  // random case vs directly coded cross-entropy
    GD g;
    const Index B = 3;
    MatD t_logits = random_mat(B * V, K, rs);
    MatD center = random_mat(1, K, rs, 0.1);
    MatD pt = teacher_distribution(t_logits, center, 0.07);
    std::vector<MatD> qs;
    std::vector<GD::Id> student;
    for (int j = 0; j < 4; ++j) {
      qs.push_back(random_mat(B * V, K, rs));
      student.push_back(g.constant(qs.back()));
    }
    const double lambda = 0.7, ts = 0.13;
    auto w = granularity_weights(lambda, 4);
    auto ssl = ssl_loss_node(g, pt, student, w, ts, V, false);

    double want = 0.0;
    for (int j = 0; j < 4; ++j) {
      for (Index r = 0; r < B * V; ++r) {
        Eigen::ArrayXd z = qs[static_cast<std::size_t>(j)].row(r).array() / ts;
        const double mx = z.maxCoeff();
        const double lse = std::log((z - mx).exp().sum()) + mx;
        for (Index k = 0; k < K; ++k) want -= w[static_cast<std::size_t>(j)] *
                                              pt(r, k) * (z(k) - lse) /
                                              static_cast<double>(B * V);
      }
    }
    const double got = g.val(ssl.total)(0, 0);
    if (std::abs(got - want) > 1e-10) {
      ok = false;
      detail += "random case dev " + std::to_string(got - want) + "; ";
    }
  }
  if (detail.empty()) detail = "uniform = ln K exactly; random within 1e-10";
  return CheckResult{"granularity loss closed forms", ok, detail};
}

CheckResult check_ema_centering(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 14);
  bool ok = true;
  ParamMap<double> t{{"w", random_mat(3, 4, rs)}};
  ParamMap<double> s{{"w", random_mat(3, 4, rs)}};
  for (double lambda : {0.0, 0.5, 1.0}) {
    auto r = ema_update(t, s, lambda);
    MatD want = lambda * t["w"] + (1.0 - lambda) * s["w"];
    if (r["w"] != want) ok = false;
  }
  MatD center = random_mat(1, 5, rs);
  MatD batch = random_mat(7, 5, rs);
  for (double m : {0.0, 0.9, 1.0}) {
    MatD got = update_center(center, batch, m);
    MatD want = m * center + (1.0 - m) * MatD(batch.colwise().mean());
    if (got != want) ok = false;
  }
  return CheckResult{"ema and centering match closed forms bitwise", ok,
                     "lambda in {0,0.5,1}, m in {0,0.9,1}"};
}

CheckResult check_normalization(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 15);
  auto cfg = tiny_config(rs);
  auto params = init_params<double>(cfg, rng.stream(Rng::kInit, 15));
  GD g;
  auto tp = TapeParams<double>::bind(g, params, false);
  const Index t = cfg.seq_len;
  auto prefix = g.constant(random_mat(t, cfg.d_model, rs, 0.5));
  auto patch = g.constant(random_mat(4, cfg.d_t, rs));
  auto dec = decoder_forward(g, tp, cfg, prefix, patch, 1, t);

  double worst = 0.0;
  for (auto node : dec.cross_attn) {
    const MatD& probs = g.saved_probs(node);
    for (Index r = 0; r < probs.rows(); ++r)
      for (int h = 0; h < cfg.n_heads; ++h)
        worst = std::max(
            worst, std::abs(probs.row(r).segment(h * 4, 4).sum() - 1.0));
  }
  auto soft = softmax_soft(g, g.constant(random_mat(6, 9, rs, 3.0)), 0.3);
  double worst_soft = 0.0;
  for (Index r = 0; r < 6; ++r) {
    worst_soft = std::max(worst_soft, std::abs(g.val(soft).row(r).sum() - 1.0));
    if (g.val(soft).row(r).minCoeff() < 0.0) worst_soft = 1.0;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "attn dev %.2g, simplex dev %.2g", worst,
                worst_soft);
  return CheckResult{"attention rows and soft rows normalize to 1",
                     worst < 1e-5 && worst_soft < 1e-6, buf};
}

CheckResult check_causality(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 16);
  auto cfg = tiny_config(rs);
  auto params = init_params<double>(cfg, rng.stream(Rng::kInit, 16));
  const Index t = cfg.seq_len;
  MatD prefix = random_mat(t, cfg.d_model, rs, 0.5);
  MatD patch = random_mat(4, cfg.d_t, rs);

  GD g;
  auto tp = TapeParams<double>::bind(g, params, false);
  auto dec = decoder_forward(g, tp, cfg, g.constant(prefix), g.constant(patch),
                             1, t);
  MatD base = g.val(dec.logits);

  double worst = 0.0;
  for (Index j = 0; j + 1 < t; ++j) {
    MatD perturbed = prefix;
    for (Index r = j + 1; r < t; ++r) perturbed.row(r).array() += 10.0;
    GD g2;
    auto tp2 = TapeParams<double>::bind(g2, params, false);
    auto dec2 = decoder_forward(g2, tp2, cfg, g2.constant(perturbed),
                                g2.constant(patch), 1, t);
    worst = std::max(
        worst, (g2.val(dec2.logits).row(j) - base.row(j)).cwiseAbs().maxCoeff());
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max dev %.3g", worst);
  return CheckResult{"decoder causality: later rows cannot affect step t",
                     worst < 1e-12, buf};
}

CheckResult check_incremental_agreement(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 17);
  auto cfg = tiny_config(rs);
  auto params = init_params<double>(cfg, rng.stream(Rng::kInit, 17));
  MatD patch = random_mat(3, cfg.d_t, rs);
  DiscretizeSpec spec;
  spec.kind = DiscretizeKind::kSoftmaxTemp;

  GD g;
  auto tp = TapeParams<double>::bind(g, params, false);
  GenMode<double> mode{0.5, false, nullptr};
  auto gen = generate_batch(g, tp, cfg, spec, g.constant(patch), 1, mode);

  // replay with the public full-prefix step: prefix rows are the start token
  // followed by the refeed embeddings the generator produced
  double worst = 0.0;
  for (int j = 0; j < cfg.seq_len; ++j) {
    MatD prefix(j + 1, cfg.d_model);
    prefix.row(0) = params.at("dec.start").row(0);
    for (int i = 0; i < j; ++i) prefix.row(i + 1) = g.val(gen.sym_emb[i]).row(0);
    GD g2;
    auto tp2 = TapeParams<double>::bind(g2, params, false);
    auto step = decoder_step(g2, tp2, cfg, g2.constant(prefix),
                             g2.constant(patch));
    worst = std::max(worst, (g2.val(step.logits).row(0) -
                             g.val(gen.logits[j]).row(0))
                                .cwiseAbs()
                                .maxCoeff());
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max dev %.3g", worst);
  return CheckResult{"incremental generation equals full-prefix decoding",
                     worst < 1e-9, buf};
}

CheckResult check_prefix_locality(Rng& rng) {
  auto rs = rng.stream(Rng::kTest, 18);
  auto cfg = tiny_config(rs);
  auto params = init_params<double>(cfg, rng.stream(Rng::kInit, 18));
  MatD soft(cfg.seq_len, cfg.vocab_size);
  for (Index r = 0; r < soft.rows(); ++r) {
    Eigen::ArrayXd e =
        (random_mat(1, cfg.vocab_size, rs).row(0).array()).exp();
    soft.row(r) = (e / e.sum()).matrix();
  }
  auto base = embed_prefixes(params, cfg, MatD(soft));

  MatD perturbed = soft;
  perturbed.row(soft.rows() - 1).setConstant(1.0 / cfg.vocab_size);
  auto mod = embed_prefixes(params, cfg, perturbed);
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < base.proj.size(); ++i)
    worst = std::max(worst,
                     (base.proj[i] - mod.proj[i]).cwiseAbs().maxCoeff());
  MatD agg_sum = MatD::Zero(1, cfg.n_prototypes);
  for (const auto& p : base.proj) agg_sum += p;
  const double agg_dev = (base.aggregated - agg_sum).cwiseAbs().maxCoeff();
  char buf[96];
  std::snprintf(buf, sizeof(buf), "locality dev %.3g, aggregate dev %.3g",
                worst, agg_dev);
  return CheckResult{"prefix locality and aggregated sum", worst == 0.0 &&
                     agg_dev < 1e-6, buf};
}

CheckResult check_schedules() {
  bool ok = true;
  DiscretizeSpec spec;
  spec.tau_start = 2.0;
  spec.tau_end = 0.5;
  spec.schedule = TauSchedule::kCosine;
  ok = ok && std::abs(schedule_tau(spec, 0, 100) - 2.0) < 1e-12;
  ok = ok && std::abs(schedule_tau(spec, 100, 100) - 0.5) < 1e-12;
  ok = ok && std::abs(schedule_tau(spec, 50, 100) - 1.25) < 1e-12;
  ok = ok && std::abs(lr_at(0, 1000, 100, 3e-4)) < 1e-18;
  ok = ok && std::abs(lr_at(100, 1000, 100, 3e-4) - 3e-4) < 1e-18;
  ok = ok && std::abs(lr_at(1000, 1000, 100, 3e-4) - 3e-6) < 1e-18;
  ok = ok && std::abs(ema_lambda_at(0, 100, 0.996, 1.0) - 0.996) < 1e-15;
  ok = ok && std::abs(ema_lambda_at(100, 100, 0.996, 1.0) - 1.0) < 1e-15;
  ok = ok && std::abs(ema_lambda_at(50, 100, 0.996, 1.0) - 0.998) < 1e-15;
  return CheckResult{"schedule endpoints and midpoints", ok, "tau, lr, ema"};
}

CheckResult check_roundtrips(Rng& rng, const std::string& tmp_dir) {
  std::filesystem::create_directories(tmp_dir);
  auto rs = rng.stream(Rng::kTest, 19);
  bool ok = true;
  std::string detail;

  {  // SYMF
    FeatureSet fs;
    fs.n_samples = 3;
    fs.n_views = 2;
    fs.grid_h = 2;
    fs.grid_w = 2;
    fs.d_t = 5;
    fs.tokens.resize(3 * 2 * 5 * 5);
    for (auto& v : fs.tokens) v = static_cast<float>(rs.normal());
    fs.labels = std::vector<std::uint32_t>{0, 1, 0};
    fs.n_classes = 2;
    const std::string path = tmp_dir + "/selfcheck.symf";
    write_features(fs, path);
    FeatureSet back = read_features(path);
    if (back.tokens != fs.tokens || back.labels != fs.labels) {
      ok = false;
      detail += "SYMF mismatch; ";
    }
  }
  {  // SYMC
    Checkpoint ckpt;
    ckpt.entries["a.w"] = MatF::Random(3, 4);
    ckpt.entries["b"] = MatF::Random(1, 7);
    ckpt.set_scalar("opt.t", 17);
    ckpt.config_text = "seed = 1\n";
    const std::string path = tmp_dir + "/selfcheck.symc";
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);
    if (back.entries["a.w"] != ckpt.entries["a.w"] ||
        back.config_text != ckpt.config_text ||
        back.scalar_entry("opt.t") != 17.0f) {
      ok = false;
      detail += "SYMC mismatch; ";
    }
  }
  if (detail.empty()) detail = "bitwise round-trips under " + tmp_dir;
  return CheckResult{"SYMF/SYMC round-trips", ok, detail};
}

}  // namespace

std::vector<CheckResult> invariant_suite(std::uint64_t seed,
                                         const std::string& tmp_dir) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  out.push_back(check_gumbel_max(rng));
  out.push_back(check_vq_oracle(rng));
  out.push_back(check_st_identity(rng));
  out.push_back(check_loss_closed_forms(rng));
  out.push_back(check_ema_centering(rng));
  out.push_back(check_normalization(rng));
  out.push_back(check_causality(rng));
  out.push_back(check_incremental_agreement(rng));
  out.push_back(check_prefix_locality(rng));
  out.push_back(check_schedules());
  out.push_back(check_roundtrips(rng, tmp_dir));
  return out;
}

int run_selfcheck(std::ostream& os, const std::string& tmp_dir) {
  bool all = true;
  auto print = [&](const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
      os << (r.pass ? "[ok]   " : "[FAIL] ") << r.name;
      if (!r.detail.empty()) os << ": " << r.detail;
      os << "\n";
      all = all && r.pass;
    }
  };
  print(gradient_suite(5, 20260801));
  print(invariant_suite(20260802, tmp_dir));
  os << (all ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES\n");
  return all ? 0 : 1;
}

}  // namespace symseq
