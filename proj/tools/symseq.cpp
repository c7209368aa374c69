// Command-line surface: train / probe / generate / attend / symbol-scan /
// selfcheck / features info. Exit codes: 0 success, 1 usage error, 2 runtime
// error.

#include "symseq/checkpoint.hpp"
#include "symseq/config.hpp"
#include "symseq/featstore.hpp"
#include "symseq/interpret.hpp"
#include "symseq/probe.hpp"
#include "symseq/selfcheck.hpp"
#include "symseq/seqgen.hpp"
#include "symseq/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace symseq;

struct CkptBundle {
  Checkpoint ckpt;
  RunConfig cfg;
  ParamMap<float> params;
};

CkptBundle load_bundle(const std::string& path) {
  CkptBundle b;
  b.ckpt = load_checkpoint(path);
  b.cfg = parse_config_text(b.ckpt.config_text, path + " (embedded config)");
  b.params = b.ckpt.model_params<float>();
  return b;
}

void print_probe_report(const ProbeReport& rep) {
  if (rep.k_values.empty()) {
    std::printf("%-22s %8s %8s\n", "representation", "Top1", "Top5");
    std::printf("%-22s %8.2f %8.2f\n", rep.representation.c_str(), rep.top1[0],
                rep.top5[0]);
    return;
  }
  std::printf("%-22s %6s %8s %8s\n", "representation", "k", "Top1", "Top5");
  for (std::size_t i = 0; i < rep.k_values.size(); ++i)
    std::printf("%-22s %6d %8.2f %8.2f\n", rep.representation.c_str(),
                rep.k_values[i], rep.top1[i], rep.top5[i]);
}

void write_probe_csv(const ProbeReport& rep, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), "cannot open " + path);
  os << "representation,prefix_n,k,top1,top5\n";
  if (rep.k_values.empty()) {
    os << rep.representation << "," << rep.prefix_n << ",," << rep.top1[0]
       << "," << rep.top5[0] << "\n";
  } else {
    for (std::size_t i = 0; i < rep.k_values.size(); ++i)
      os << rep.representation << "," << rep.prefix_n << "," << rep.k_values[i]
         << "," << rep.top1[i] << "," << rep.top5[i] << "\n";
  }
}

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> out;
  std::size_t at = 0;
  while (at < s.size()) {
    const auto comma = s.find(',', at);
    const std::string tok =
        s.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    out.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  check(!out.empty(), "empty k list");
  return out;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  RunConfig cfg = parse_config(config_path);
  require_paths(cfg, {"train_features", "out_dir"});
  const std::string snapshot = resolved_text(cfg);
  std::cout << "# resolved config\n" << snapshot << std::flush;
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream os(cfg.out_dir + "/config_resolved.txt");
    os << snapshot;
  }

  FeatureSet train_set = read_features(cfg.train_features);
  FeatureSet eval_set;
  const bool have_eval = !cfg.eval_features.empty();
  if (have_eval) eval_set = read_features(cfg.eval_features);

  Trainer<float> trainer(cfg.model, cfg.loss, cfg.disc, cfg.train, snapshot);
  if (resume_path.empty()) {
    trainer.init_fresh();
  } else {
    trainer.resume_from(load_checkpoint(resume_path));
    std::cout << "resumed at epoch " << trainer.epochs_done() << "\n";
  }

  EvalHook hook;
  if (have_eval && train_set.labels && eval_set.labels) {
    const std::string probe_csv = cfg.out_dir + "/probe_log.csv";
    if (!std::filesystem::exists(probe_csv)) {
      std::ofstream os(probe_csv);
      os << "epoch,knn_top1,knn_top5\n";
    }
    hook = [&, probe_csv](int epoch, const ParamMap<float>& params) {
      MatF tr = extract_embeddings(params, cfg.model, cfg.disc, train_set,
                                   Representation::kStudentPooled, -1,
                                   cfg.disc.tau_end);
      MatF ev = extract_embeddings(params, cfg.model, cfg.disc, eval_set,
                                   Representation::kStudentPooled, -1,
                                   cfg.disc.tau_end);
      auto rep = knn_classify(tr, *train_set.labels, ev, *eval_set.labels,
                              {20}, cfg.knn_temp);
      std::printf("epoch %4d  knn top1 %6.2f  top5 %6.2f\n", epoch + 1,
                  rep.top1[0], rep.top5[0]);
      std::ofstream os(probe_csv, std::ios::app);
      os << (epoch + 1) << "," << rep.top1[0] << "," << rep.top5[0] << "\n";
    };
  }

  const std::string final_path = trainer.train(train_set, cfg.out_dir, hook);
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int cmd_probe(const std::string& mode, const std::string& ckpt_path,
              const std::string& train_override,
              const std::string& eval_override, const std::string& rep_name,
              int prefix_n, const std::string& k_list, int lin_epochs,
              double lin_lr) {
  CkptBundle b = load_bundle(ckpt_path);
  const std::string train_path =
      train_override.empty() ? b.cfg.train_features : train_override;
  const std::string eval_path =
      eval_override.empty() ? b.cfg.eval_features : eval_override;
  check(!train_path.empty() && !eval_path.empty(),
        "probe needs train and eval feature paths (config or flags)");
  FeatureSet train_set = read_features(train_path);
  FeatureSet eval_set = read_features(eval_path);
  check(train_set.labels && eval_set.labels, "probe requires labeled sets");
  std::filesystem::create_directories(b.cfg.out_dir);

  if (mode == "subseq") {
    const int k = parse_k_list(k_list).front();
    auto rows = subsequence_report(b.params, b.cfg.model, b.cfg.disc,
                                   train_set, eval_set, k,
                                   b.cfg.knn_temp, b.cfg.disc.tau_end);
    std::printf("%10s %8s %8s\n", "prefix", "Top1", "Top5");
    std::ofstream os(b.cfg.out_dir + "/probe_subseq.csv");
    os << "prefix_n,top1,top5\n";
    for (const auto& r : rows) {
      std::printf("%10d %8.2f %8.2f\n", r.prefix_n, r.top1, r.top5);
      os << r.prefix_n << "," << r.top1 << "," << r.top5 << "\n";
    }
    return 0;
  }

  const Representation rep = representation_from_string(rep_name);
  MatF tr = extract_embeddings(b.params, b.cfg.model, b.cfg.disc, train_set,
                               rep, prefix_n, b.cfg.disc.tau_end);
  MatF ev = extract_embeddings(b.params, b.cfg.model, b.cfg.disc, eval_set,
                               rep, prefix_n, b.cfg.disc.tau_end);
  ProbeReport report;
  if (mode == "knn") {
    report = knn_classify(tr, *train_set.labels, ev, *eval_set.labels,
                          parse_k_list(k_list), b.cfg.knn_temp);
  } else {
    report = linear_probe(tr, *train_set.labels, ev, *eval_set.labels,
                          lin_epochs, lin_lr);
  }
  report.representation = to_string(rep);
  report.prefix_n = prefix_n;
  print_probe_report(report);
  write_probe_csv(report, b.cfg.out_dir + "/probe_" + mode + ".csv");
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& features_path,
                 const std::string& out_path) {
  CkptBundle b = load_bundle(ckpt_path);
  FeatureSet fs = read_features(features_path.empty() ? b.cfg.train_features
                                                      : features_path);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty() && out_path != "-") {
    file.open(out_path);
    check(static_cast<bool>(file), "cannot open " + out_path);
    os = &file;
  }
  Rng rng(b.cfg.train.seed);
  for (std::uint32_t i = 0; i < fs.n_samples; ++i) {
    for (std::uint32_t v = 0; v < fs.n_views; ++v) {
      const auto slice = view(fs, i, v);
      auto seq = generate<float>(b.params, b.cfg.model, b.cfg.disc,
                                 slice.patch_tokens, b.cfg.disc.tau_end,
                                 rng.stream(Rng::kEval, i, v), /*eval=*/true);
      (*os) << i << "\t" << v << "\t";
      for (std::size_t l = 0; l < seq.ids.size(); ++l) {
        if (l) (*os) << ",";
        (*os) << seq.ids[l];
      }
      (*os) << "\n";
    }
  }
  return 0;
}

int cmd_attend(const std::string& ckpt_path, const std::string& features_path,
               std::uint32_t sample, std::uint32_t view_index, int scale,
               const std::string& out_dir, bool per_head, bool raw_csv) {
  CkptBundle b = load_bundle(ckpt_path);
  FeatureSet fs = read_features(features_path.empty() ? b.cfg.train_features
                                                      : features_path);
  std::filesystem::create_directories(out_dir);
  const int heads = per_head ? b.cfg.model.n_heads : 0;
  for (int h = per_head ? 0 : -1; h < heads; ++h) {
    auto maps = attention_maps(b.params, b.cfg.model, b.cfg.disc, fs, sample,
                               view_index, b.cfg.disc.tau_end, h);
    for (const auto& m : maps) {
      char name[96];
      if (h < 0)
        std::snprintf(name, sizeof(name), "/pos%02d_tok%ld.pgm", m.position,
                      static_cast<long>(m.token_id));
      else
        std::snprintf(name, sizeof(name), "/pos%02d_tok%ld_head%d.pgm",
                      m.position, static_cast<long>(m.token_id), h);
      const std::string path = out_dir + name;
      export_pgm(m, scale, path);
      if (raw_csv) export_raw_csv(m, path.substr(0, path.size() - 4) + ".csv");
      std::cout << "pos " << m.position << " token " << m.token_id << " -> "
                << path << "\n";
    }
    if (!per_head) break;
  }
  return 0;
}

int cmd_symbol_scan(const std::string& ckpt_path,
                    const std::string& features_path, long symbol,
                    std::uint32_t class_id, int scale,
                    const std::string& out_dir) {
  CkptBundle b = load_bundle(ckpt_path);
  FeatureSet fs = read_features(features_path.empty() ? b.cfg.train_features
                                                      : features_path);
  auto result = symbol_scan(b.params, b.cfg.model, b.cfg.disc, fs, symbol,
                            class_id, out_dir, scale, b.cfg.disc.tau_end);
  std::cout << "class " << class_id << ": " << result.class_samples
            << " samples, symbol " << symbol << " occurred "
            << result.occurrences << " times";
  if (result.class_samples > 0)
    std::cout << " (rate "
              << static_cast<double>(result.occurrences) /
                     (static_cast<double>(result.class_samples) *
                      b.cfg.model.seq_len)
              << " per position)";
  std::cout << "\nmanifest: " << result.manifest_path << "\n";
  return 0;
}

int cmd_features_info(const std::string& path) {
  FeatureSet fs = read_features(path);
  std::cout << "samples:  " << fs.n_samples << "\n"
            << "views:    " << fs.n_views << "\n"
            << "grid:     " << fs.grid_h << "x" << fs.grid_w << "\n"
            << "d_t:      " << fs.d_t << "\n"
            << "tokens:   " << fs.tokens_per_view() << " per view\n";
  if (fs.labels)
    std::cout << "labels:   " << fs.n_classes << " classes\n";
  else
    std::cout << "labels:   none\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symseq: self-supervised symbolic sequence distillation"};
  app.require_subcommand(1);

  std::string config_path, resume_path;
  auto* train = app.add_subcommand("train", "train a student model");
  train->add_option("-c,--config", config_path, "run config file")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  std::string p_ckpt, p_train, p_eval, p_rep = "pooled", p_k = "10,20,100,200";
  int p_prefix = -1, lin_epochs = 200;
  double lin_lr = 1e-2;
  auto* probe = app.add_subcommand("probe", "evaluate representations");
  probe->require_subcommand(1);
  std::string probe_mode;
  for (const char* mode : {"knn", "linear", "subseq"}) {
    auto* sub = probe->add_subcommand(mode);
    sub->add_option("--ckpt", p_ckpt, "checkpoint path")->required();
    sub->add_option("--train-features", p_train, "override train SYMF");
    sub->add_option("--eval-features", p_eval, "override eval SYMF");
    sub->add_option("--representation", p_rep, "pooled|aggregated|teacher");
    sub->add_option("--prefix", p_prefix, "prefix length (-1 = full)");
    sub->add_option("-k", p_k, "comma-separated neighbor counts");
    sub->add_option("--epochs", lin_epochs, "linear probe epochs");
    sub->add_option("--lr", lin_lr, "linear probe learning rate");
    sub->callback([&probe_mode, mode]() { probe_mode = mode; });
  }

  std::string g_ckpt, g_features, g_out;
  auto* gen = app.add_subcommand("generate", "dump symbol sequences as TSV");
  gen->add_option("--ckpt", g_ckpt)->required();
  gen->add_option("--features", g_features, "SYMF path (default: config)");
  gen->add_option("--out", g_out, "output file ('-' = stdout)");

  std::string a_ckpt, a_features, a_out = "attn";
  std::uint32_t a_sample = 0, a_view = 0;
  int a_scale = 16;
  bool a_per_head = false, a_raw = false;
  auto* attend = app.add_subcommand("attend", "export attention maps as PGM");
  attend->add_option("--ckpt", a_ckpt)->required();
  attend->add_option("--features", a_features);
  attend->add_option("--sample", a_sample)->required();
  attend->add_option("--view", a_view);
  attend->add_option("--scale", a_scale, "nearest-neighbor upsample factor");
  attend->add_option("--out", a_out, "output directory");
  attend->add_flag("--per-head", a_per_head, "one map per attention head");
  attend->add_flag("--raw-csv", a_raw, "write raw weights sidecar CSV");

  std::string s_ckpt, s_features, s_out = "scan";
  long s_symbol = 0;
  std::uint32_t s_class = 0;
  int s_scale = 16;
  auto* scan = app.add_subcommand("symbol-scan",
                                  "attention maps for one symbol in a class");
  scan->add_option("--ckpt", s_ckpt)->required();
  scan->add_option("--features", s_features);
  scan->add_option("--symbol", s_symbol)->required();
  scan->add_option("--class", s_class)->required();
  scan->add_option("--scale", s_scale);
  scan->add_option("--out", s_out);

  auto* selfcheck =
      app.add_subcommand("selfcheck", "run the invariant and gradient suites");

  auto* features = app.add_subcommand("features", "feature file utilities");
  features->require_subcommand(1);
  std::string f_path;
  auto* finfo = features->add_subcommand("info", "print SYMF header fields");
  finfo->add_option("path", f_path, "SYMF file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train) return cmd_train(config_path, resume_path);
    if (*probe)
      return cmd_probe(probe_mode, p_ckpt, p_train, p_eval, p_rep, p_prefix,
                       p_k, lin_epochs, lin_lr);
    if (*gen) return cmd_generate(g_ckpt, g_features, g_out);
    if (*attend)
      return cmd_attend(a_ckpt, a_features, a_sample, a_view, a_scale, a_out,
                        a_per_head, a_raw);
    if (*scan)
      return cmd_symbol_scan(s_ckpt, s_features, s_symbol, s_class, s_scale,
                             s_out);
    if (*selfcheck) {
      const auto tmp =
          std::filesystem::temp_directory_path() / "symseq_selfcheck";
      return symseq::run_selfcheck(std::cout, tmp.string()) == 0 ? 0 : 2;
    }
    if (*features) return cmd_features_info(f_path);
  } catch (const symseq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
