#include "symseq/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace symseq {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

long parse_long(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long out = std::stol(v, &pos);
    check(pos == v.size(), "");
    return out;
  } catch (...) {
    fail(where + ": expected an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    check(pos == v.size(), "");
    return out;
  } catch (...) {
    fail(where + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(where + ": expected true/false, got '" + v + "'");
}

const char* to_string(DiscretizeKind k) {
  switch (k) {
    case DiscretizeKind::kSoftmaxTemp: return "softmax_temp";
    case DiscretizeKind::kGumbel: return "gumbel";
    case DiscretizeKind::kVq: return "vq";
  }
  return "?";
}

const char* to_string(TauSchedule s) {
  switch (s) {
    case TauSchedule::kConstant: return "constant";
    case TauSchedule::kLinear: return "linear";
    case TauSchedule::kCosine: return "cosine";
  }
  return "?";
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kBase: return "base";
    case Strategy::kEntropy: return "entropy";
    case Strategy::kInfo: return "info";
    case Strategy::kCombined: return "combined";
  }
  return "?";
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  disc.validate();
  loss.validate();
  train.validate();
  check(knn_temp > 0.0, "knn_temp must be > 0");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.model.d_t = cfg.model.d_model;  // pinned equal; see ModelConfig

  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"vocab_size", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.vocab_size = static_cast<int>(parse_long(v, w)); }},
      {"seq_len", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.seq_len = static_cast<int>(parse_long(v, w)); }},
      {"d_model", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.d_model = static_cast<int>(parse_long(v, w));
         c.model.d_t = c.model.d_model; }},
      {"n_heads", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.n_heads = static_cast<int>(parse_long(v, w)); }},
      {"dec_depth", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.dec_depth = static_cast<int>(parse_long(v, w)); }},
      {"enc_depth", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.enc_depth = static_cast<int>(parse_long(v, w)); }},
      {"proj_hidden", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.proj_hidden = static_cast<int>(parse_long(v, w)); }},
      {"proj_bottleneck", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.proj_bottleneck = static_cast<int>(parse_long(v, w)); }},
      {"n_prototypes", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.model.n_prototypes = static_cast<int>(parse_long(v, w)); }},
      {"discretize", [](RunConfig& c, const std::string& v, const std::string& w) {
         if (v == "softmax_temp") c.disc.kind = DiscretizeKind::kSoftmaxTemp;
         else if (v == "gumbel") c.disc.kind = DiscretizeKind::kGumbel;
         else if (v == "vq") c.disc.kind = DiscretizeKind::kVq;
         else fail(w + ": unknown discretize kind '" + v + "'"); }},
      {"tau_start", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.disc.tau_start = parse_double(v, w); }},
      {"tau_end", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.disc.tau_end = parse_double(v, w); }},
      {"tau_schedule", [](RunConfig& c, const std::string& v, const std::string& w) {
         if (v == "constant") c.disc.schedule = TauSchedule::kConstant;
         else if (v == "linear") c.disc.schedule = TauSchedule::kLinear;
         else if (v == "cosine") c.disc.schedule = TauSchedule::kCosine;
         else fail(w + ": unknown tau_schedule '" + v + "'"); }},
      {"st_hard", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.disc.st_hard = parse_bool(v, w); }},
      {"vq_beta", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.disc.vq_beta = parse_double(v, w); }},
      {"strategy", [](RunConfig& c, const std::string& v, const std::string& w) {
         if (v == "base") c.loss.strategy = Strategy::kBase;
         else if (v == "entropy") c.loss.strategy = Strategy::kEntropy;
         else if (v == "info") c.loss.strategy = Strategy::kInfo;
         else if (v == "combined") c.loss.strategy = Strategy::kCombined;
         else fail(w + ": unknown strategy '" + v + "'"); }},
      {"alpha", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.alpha = parse_double(v, w); }},
      {"beta", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.beta = parse_double(v, w); }},
      {"strategy_switch_epoch", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.strategy_switch_epoch = static_cast<int>(parse_long(v, w)); }},
      {"teacher_temp", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.teacher_temp = parse_double(v, w); }},
      {"student_temp", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.student_temp = parse_double(v, w); }},
      {"center_momentum", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.center_momentum = parse_double(v, w); }},
      {"granularity_lambda", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.granularity_lambda = parse_double(v, w); }},
      {"cross_view", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.cross_view = parse_bool(v, w); }},
      {"aggregate_loss_term", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.loss.aggregate_loss_term = parse_bool(v, w); }},
      {"epochs", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.epochs = static_cast<int>(parse_long(v, w)); }},
      {"batch_size", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.batch_size = static_cast<int>(parse_long(v, w)); }},
      {"lr_base", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.lr_base = parse_double(v, w); }},
      {"warmup_epochs", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.warmup_epochs = static_cast<int>(parse_long(v, w)); }},
      {"weight_decay", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.weight_decay = parse_double(v, w); }},
      {"clip_norm", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.clip_norm = parse_double(v, w); }},
      {"ema_start", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.ema_start = parse_double(v, w); }},
      {"ema_end", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.ema_end = parse_double(v, w); }},
      {"seed", [](RunConfig& c, const std::string& v, const std::string& w) {
         try {
           c.train.seed = std::stoull(v);
         } catch (...) {
           fail(w + ": expected an unsigned integer, got '" + v + "'");
         } }},
      {"eval_every_epochs", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.train.eval_every_epochs = static_cast<int>(parse_long(v, w)); }},
      {"knn_temp", [](RunConfig& c, const std::string& v, const std::string& w) {
         c.knn_temp = parse_double(v, w); }},
      {"train_features", [](RunConfig& c, const std::string& v, const std::string&) {
         c.train_features = v; }},
      {"eval_features", [](RunConfig& c, const std::string& v, const std::string&) {
         c.eval_features = v; }},
      {"out_dir", [](RunConfig& c, const std::string& v, const std::string&) {
         c.out_dir = v; }},
  };

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    check(eq != std::string::npos, where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    check(it != setters.end(), where + ": unknown key '" + key + "'");
    it->second(cfg, value, where);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  check(static_cast<bool>(is), "cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string resolved_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "vocab_size = " << cfg.model.vocab_size << "\n";
  os << "seq_len = " << cfg.model.seq_len << "\n";
  os << "d_model = " << cfg.model.d_model << "\n";
  os << "n_heads = " << cfg.model.n_heads << "\n";
  os << "dec_depth = " << cfg.model.dec_depth << "\n";
  os << "enc_depth = " << cfg.model.enc_depth << "\n";
  os << "proj_hidden = " << cfg.model.proj_hidden << "\n";
  os << "proj_bottleneck = " << cfg.model.proj_bottleneck << "\n";
  os << "n_prototypes = " << cfg.model.n_prototypes << "\n";
  os << "discretize = " << to_string(cfg.disc.kind) << "\n";
  os << "tau_start = " << fmt_double(cfg.disc.tau_start) << "\n";
  os << "tau_end = " << fmt_double(cfg.disc.tau_end) << "\n";
  os << "tau_schedule = " << to_string(cfg.disc.schedule) << "\n";
  os << "st_hard = " << (cfg.disc.st_hard ? "true" : "false") << "\n";
  os << "vq_beta = " << fmt_double(cfg.disc.vq_beta) << "\n";
  os << "strategy = " << to_string(cfg.loss.strategy) << "\n";
  os << "alpha = " << fmt_double(cfg.loss.alpha) << "\n";
  os << "beta = " << fmt_double(cfg.loss.beta) << "\n";
  os << "strategy_switch_epoch = " << cfg.loss.strategy_switch_epoch << "\n";
  os << "teacher_temp = " << fmt_double(cfg.loss.teacher_temp) << "\n";
  os << "student_temp = " << fmt_double(cfg.loss.student_temp) << "\n";
  os << "center_momentum = " << fmt_double(cfg.loss.center_momentum) << "\n";
  os << "granularity_lambda = " << fmt_double(cfg.loss.granularity_lambda) << "\n";
  os << "cross_view = " << (cfg.loss.cross_view ? "true" : "false") << "\n";
  os << "aggregate_loss_term = "
     << (cfg.loss.aggregate_loss_term ? "true" : "false") << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "lr_base = " << fmt_double(cfg.train.lr_base) << "\n";
  os << "warmup_epochs = " << cfg.train.warmup_epochs << "\n";
  os << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
  os << "clip_norm = " << fmt_double(cfg.train.clip_norm) << "\n";
  os << "ema_start = " << fmt_double(cfg.train.ema_start) << "\n";
  os << "ema_end = " << fmt_double(cfg.train.ema_end) << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "eval_every_epochs = " << cfg.train.eval_every_epochs << "\n";
  os << "knn_temp = " << fmt_double(cfg.knn_temp) << "\n";
  os << "train_features = " << cfg.train_features << "\n";
  os << "eval_features = " << cfg.eval_features << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  return os.str();
}

void require_paths(const RunConfig& cfg, const std::vector<std::string>& keys) {
  std::string missing;
  for (const auto& key : keys) {
    const std::string* v = nullptr;
    if (key == "train_features") v = &cfg.train_features;
    else if (key == "eval_features") v = &cfg.eval_features;
    else if (key == "out_dir") v = &cfg.out_dir;
    else fail("require_paths: unknown key " + key);
    if (v->empty()) missing += missing.empty() ? key : ", " + key;
  }
  check(missing.empty(), "missing required config keys: " + missing);
}

}  // namespace symseq
