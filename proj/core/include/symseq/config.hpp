#pragma once

#include "symseq/discretize.hpp"
#include "symseq/loss.hpp"
#include "symseq/model.hpp"
#include "symseq/trainer.hpp"

#include <string>
#include <vector>

namespace symseq {

// Union of all module configurations plus paths, parsed from a line-based
// `key = value` file with `#` comments. Unknown keys are rejected. Every key
// has a default except the feature paths.
struct RunConfig {
  ModelConfig model;
  DiscretizeSpec disc;
  LossSpec loss;
  TrainConfig train;
  double knn_temp = 0.07;
  std::string train_features;
  std::string eval_features;
  std::string out_dir = "out";

  void validate() const;
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

// Canonical key = value rendering of the fully-resolved config. Reparsing it
// yields an identical RunConfig; it is also the checkpoint snapshot.
std::string resolved_text(const RunConfig& cfg);

// Errors if any of the named path fields is empty; message lists all
// missing keys at once.
void require_paths(const RunConfig& cfg, const std::vector<std::string>& keys);

}  // namespace symseq
