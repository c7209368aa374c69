#pragma once

#include "symseq/checkpoint.hpp"
#include "symseq/featstore.hpp"
#include "symseq/loss.hpp"
#include "symseq/optim.hpp"
#include "symseq/seqgen.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace symseq {

struct TrainConfig {
  int epochs = 140;
  int batch_size = 64;
  double lr_base = 5e-4;
  int warmup_epochs = 10;
  double weight_decay = 0.04;
  double clip_norm = 2.0;
  double ema_start = 0.996;
  double ema_end = 1.0;
  std::uint64_t seed = 42;
  int eval_every_epochs = 10;

  void validate() const {
    check(epochs >= 0, "epochs must be >= 0");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(lr_base > 0.0, "lr_base must be > 0");
    check(warmup_epochs >= 0, "warmup_epochs must be >= 0");
    check(weight_decay >= 0.0, "weight_decay must be >= 0");
    check(clip_norm > 0.0, "clip_norm must be > 0");
    check(ema_start >= 0.0 && ema_start <= 1.0 && ema_end >= 0.0 &&
              ema_end <= 1.0,
          "ema decay factors must lie in [0,1]");
    check(eval_every_epochs >= 1, "eval_every_epochs must be >= 1");
  }
};

// Linear warmup from 0 to lr_base over the warmup steps, then cosine decay
// to lr_base/100 at the final step.
inline double lr_at(long step, long total_steps, long warmup_steps,
                    double lr_base) {
  check(step >= 0 && step <= total_steps, "lr_at: step out of range");
  warmup_steps = std::min(warmup_steps, total_steps);
  if (step < warmup_steps)
    return lr_base * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  const double lr_end = lr_base * 1e-2;
  if (total_steps == warmup_steps) return lr_base;
  const double f = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return lr_end + (lr_base - lr_end) * (1.0 + std::cos(M_PI * f)) / 2.0;
}

// Cosine from ema_start at step 0 to ema_end at the final step.
inline double ema_lambda_at(long step, long total_steps, double ema_start,
                            double ema_end) {
  check(step >= 0 && step <= total_steps, "ema_lambda_at: step out of range");
  if (total_steps == 0) return ema_end;
  const double f =
      static_cast<double>(step) / static_cast<double>(total_steps);
  return ema_end + (ema_start - ema_end) * (1.0 + std::cos(M_PI * f)) / 2.0;
}

struct StepMetrics {
  long step = 0;
  double loss = 0, ssl = 0, teacher_entropy = 0, kl = 0;
  double seq_entropy = 0, seq_info = 0;
  double tau = 0, lr = 0, ema_lambda = 0;

  std::string csv_row() const {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step,
                  loss, ssl, teacher_entropy, kl, seq_entropy, seq_info, tau,
                  lr, ema_lambda);
    return buf;
  }
  static const char* csv_header() {
    return "step,loss,ssl,teacher_entropy,kl_teacher_student,seq_entropy,"
           "seq_info,tau,lr,ema_lambda";
  }
};

// Optional per-eval hook: receives a parameter snapshot after the given
// epoch finished. Used for periodic kNN probing.
using EvalHook = std::function<void(int epoch, const ParamMap<float>& params)>;

template <class T>
class Trainer {
 public:
  Trainer(ModelConfig model_cfg, LossSpec loss_spec, DiscretizeSpec disc_spec,
          TrainConfig train_cfg, std::string config_snapshot)
      : mcfg_(model_cfg),
        lspec_(loss_spec),
        dspec_(disc_spec),
        tcfg_(train_cfg),
        snapshot_(std::move(config_snapshot)),
        opt_(0.9, 0.999, 1e-8, train_cfg.weight_decay) {
    mcfg_.validate();
    lspec_.validate();
    dspec_.validate();
    tcfg_.validate();
  }

  void init_fresh() {
    Rng rng(tcfg_.seed);
    params_ = init_params<T>(mcfg_, rng.stream(Rng::kInit));
    opt_.init(params_);
    epochs_done_ = 0;
  }

  // Restores parameters, optimizer moments and position in the run.
  // Training continues bit-compatibly with an uninterrupted run because all
  // randomness is derived from (seed, epoch, step), never from live state.
  void resume_from(const Checkpoint& ckpt) {
    check(ckpt.config_text == snapshot_,
          "resume: config mismatch between checkpoint and current config");
    params_.clear();
    for (const auto& [name, tensor] : ckpt.entries) {
      if (name.rfind("opt.", 0) == 0 || name.rfind("train.", 0) == 0 ||
          name.rfind("rng.", 0) == 0)
        continue;
      params_[name] = tensor.template cast<T>();
    }
    check(params_.count("tokemb") == 1 && params_.count("center") == 1,
          "resume: checkpoint missing model tensors");
    const Index expected_dt = params_.at("dec.layer0.cross.k.w").rows();
    check(expected_dt == mcfg_.d_t, "resume: checkpoint d_t mismatch");
    auto m = ckpt.params_with_prefix<T>("opt.m.");
    auto v = ckpt.params_with_prefix<T>("opt.v.");
    check(!m.empty() && !v.empty(), "resume: missing opt.* entries");
    opt_.restore(std::move(m), std::move(v),
                 static_cast<long>(ckpt.scalar_entry("opt.t")));
    epochs_done_ = static_cast<int>(ckpt.scalar_entry("train.epochs_done"));
    check(static_cast<std::uint64_t>(ckpt.scalar_entry("rng.seed")) ==
              tcfg_.seed,
          "resume: seed mismatch");
  }

  const ParamMap<T>& params() const { return params_; }
  int epochs_done() const { return epochs_done_; }

  // Runs epochs [epochs_done, cfg.epochs). Returns the final checkpoint
  // path. Metrics are appended to <out_dir>/metrics.csv, one row per step.
  std::string train(const FeatureSet& train_set, const std::string& out_dir,
                    const EvalHook& eval_hook = {}) {
    train_set.validate();
    check(static_cast<int>(train_set.d_t) == mcfg_.d_t,
          "feature d_t " + std::to_string(train_set.d_t) +
              " does not match configured d_model/d_t " +
              std::to_string(mcfg_.d_t));
    check(!params_.empty(), "trainer not initialized");
    const std::uint64_t feat_hash0 = feature_hash(train_set);

    std::filesystem::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::app);
    check(static_cast<bool>(metrics), "cannot open " + metrics_path);
    if (std::filesystem::file_size(metrics_path) == 0)
      metrics << StepMetrics::csv_header() << "\n";

    const long N = train_set.n_samples;
    const long B = tcfg_.batch_size;
    const long steps_per_epoch = (N + B - 1) / B;
    const long total_steps = static_cast<long>(tcfg_.epochs) * steps_per_epoch;
    const long warmup_steps =
        static_cast<long>(tcfg_.warmup_epochs) * steps_per_epoch;
    Rng rng(tcfg_.seed);

    for (int epoch = epochs_done_; epoch < tcfg_.epochs; ++epoch) {
      std::vector<std::uint32_t> order(static_cast<std::size_t>(N));
      std::iota(order.begin(), order.end(), 0u);
      auto shuffle_rs = rng.stream(Rng::kShuffle, epoch);
      for (long i = N - 1; i > 0; --i) {
        const long j =
            static_cast<long>(shuffle_rs.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }

      for (long s = 0; s < steps_per_epoch; ++s) {
        const long gstep = static_cast<long>(epoch) * steps_per_epoch + s;
        const long lo = s * B;
        const long hi = std::min<long>(lo + B, N);
        std::vector<std::uint32_t> batch(order.begin() + lo, order.begin() + hi);
        auto noise = rng.stream(Rng::kGumbel, epoch, s);
        StepMetrics m = run_step(train_set, batch, gstep, total_steps,
                                 warmup_steps, epoch, noise);
        metrics << m.csv_row() << "\n";
      }
      metrics.flush();
      ++epochs_done_;

      if ((epoch + 1) % tcfg_.eval_every_epochs == 0 ||
          epoch + 1 == tcfg_.epochs) {
        if (eval_hook) eval_hook(epoch, cast_params<T, float>(params_));
        char name[64];
        std::snprintf(name, sizeof(name), "/ckpt_epoch%04d.symc", epoch + 1);
        save_state(out_dir + name);
      }
    }

    check(feature_hash(train_set) == feat_hash0,
          "teacher features were mutated during training");
    const std::string final_path = out_dir + "/ckpt_final.symc";
    save_state(final_path);
    return final_path;
  }

  void save_state(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.put_params(params_);
    ckpt.put_params(opt_.first_moments(), "opt.m.");
    ckpt.put_params(opt_.second_moments(), "opt.v.");
    ckpt.set_scalar("opt.t", static_cast<float>(opt_.steps_taken()));
    ckpt.set_scalar("train.epochs_done", static_cast<float>(epochs_done_));
    ckpt.set_scalar("rng.seed", static_cast<float>(tcfg_.seed));
    ckpt.config_text = snapshot_;
    save_checkpoint(ckpt, path);
  }

 private:
  StepMetrics run_step(const FeatureSet& fs, const std::vector<std::uint32_t>& batch,
                       long gstep, long total_steps, long warmup_steps,
                       int epoch, RngStream& noise) {
    const Index V = fs.n_views;
    const Index M = static_cast<Index>(batch.size()) * V;
    const Index P1 = fs.tokens_per_view() - 1;

    Mat<T> global(M, fs.d_t);
    Mat<T> patch(M * P1, fs.d_t);
    for (Index b = 0; b < static_cast<Index>(batch.size()); ++b) {
      for (Index v = 0; v < V; ++v) {
        const auto slice = view(fs, batch[static_cast<std::size_t>(b)],
                                static_cast<std::uint32_t>(v));
        const Index r = b * V + v;
        global.row(r) = slice.global_token.template cast<T>();
        patch.middleRows(r * P1, P1) = slice.patch_tokens.template cast<T>();
      }
    }

    const double tau = schedule_tau(dspec_, gstep, total_steps);
    const double lr = lr_at(gstep, total_steps, warmup_steps, tcfg_.lr_base);
    const double lambda =
        ema_lambda_at(gstep, total_steps, tcfg_.ema_start, tcfg_.ema_end);

    ad::Graph<T> g;
    auto tp = TapeParams<T>::bind(g, params_, /*with_grads=*/true);

    // Teacher path: projector on the global token, then the centered,
    // sharpened distribution. Values only; no gradient by construction.
    auto t_logits_id = projector_forward(g, tp, "proj_t", g.constant(global));
    const Mat<T>& t_logits = g.val(t_logits_id);
    Mat<T> p_t = teacher_distribution(t_logits, params_.at("center"),
                                      lspec_.teacher_temp);

    // Student path: generate, embed prefixes, project.
    auto patch_id = g.constant(patch);
    GenMode<T> mode{tau, /*eval=*/false, &noise};
    auto gen = generate_batch(g, tp, mcfg_, dspec_, patch_id, M, mode);
    auto pb = embed_prefixes_batch(g, tp, mcfg_, gen);

    std::vector<typename ad::Graph<T>::Id> student = pb.proj;
    if (lspec_.aggregate_loss_term) student.push_back(pb.aggregated);
    const auto weights = granularity_weights(lspec_.granularity_lambda,
                                             static_cast<int>(student.size()));
    auto ssl = ssl_loss_node(g, p_t, student, weights, lspec_.student_temp, V,
                             lspec_.cross_view);
    auto ent_node = sequence_entropy_node(g, gen);
    auto info_node = sequence_info_node(g, gen);
    auto total = total_loss_node(g, ssl.total, ent_node, info_node, gen.vq_aux,
                                 lspec_, epoch);

    StepMetrics m;
    m.step = gstep;
    m.loss = static_cast<double>(g.val(total)(0, 0));
    m.ssl = static_cast<double>(g.val(ssl.total)(0, 0));
    double th = 0.0;
    for (Index r = 0; r < M; ++r) th += row_entropy<T>(p_t.row(r));
    m.teacher_entropy = th / static_cast<double>(M);
    m.kl = m.ssl - m.teacher_entropy;
    m.seq_entropy = static_cast<double>(g.val(ent_node)(0, 0));
    m.seq_info = static_cast<double>(g.val(info_node)(0, 0));
    m.tau = tau;
    m.lr = lr;
    m.ema_lambda = lambda;

    if (!std::isfinite(m.loss)) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "NaN loss at step %ld (epoch %d): teacher logits "
                    "[%.3g, %.3g], tau=%.3g, lr=%.3g; aborting",
                    gstep, epoch, static_cast<double>(t_logits.minCoeff()),
                    static_cast<double>(t_logits.maxCoeff()), tau, lr);
      fail(buf);
    }

    g.backward(total);
    ParamMap<T> grads;
    for (const auto& [name, id] : tp.ids)
      if (is_student_param(name)) grads[name] = g.grad(id);
    clip_global_norm(grads, tcfg_.clip_norm);
    opt_.step(params_, grads, lr);

    ema_update(params_, "proj_t.", "proj_s.", static_cast<T>(lambda));
    params_["center"] =
        update_center(params_.at("center"), t_logits, lspec_.center_momentum);
    return m;
  }

  ModelConfig mcfg_;
  LossSpec lspec_;
  DiscretizeSpec dspec_;
  TrainConfig tcfg_;
  std::string snapshot_;
  AdamW<T> opt_;
  ParamMap<T> params_;
  int epochs_done_ = 0;
};

}  // namespace symseq
