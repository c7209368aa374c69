#pragma once

#include "symseq/discretize.hpp"
#include "symseq/featstore.hpp"
#include "symseq/model.hpp"

#include <string>
#include <vector>

namespace symseq {

// Cross-attention of one generated symbol over the teacher patch grid,
// deepest decoder layer, head-averaged unless a head index is given.
struct AttentionMap {
  int position = 0;        // symbol position l
  Index token_id = 0;
  MatF weights;            // [grid_h x grid_w], rows of the softmax: sums to 1
  MatF normalized;         // min-max scaled to [0,1]; constant maps go to 0
};

// Deterministic generation (argmax path) for one sample/view; returns one
// map per sequence position. head == -1 averages over heads.
std::vector<AttentionMap> attention_maps(const ParamMap<float>& params,
                                         const ModelConfig& cfg,
                                         const DiscretizeSpec& spec,
                                         const FeatureSet& fs,
                                         std::uint32_t sample,
                                         std::uint32_t view_index,
                                         double eval_tau, int head = -1);

// Binary PGM (P5), nearest-neighbor upsampled, values round(normalized*255).
void export_pgm(const AttentionMap& map, int scale, const std::string& path);

// Raw weights as CSV (quantitative sidecar to the display PGM).
void export_raw_csv(const AttentionMap& map, const std::string& path);

struct ScanRow {
  std::uint32_t sample = 0;
  std::uint32_t view_index = 0;
  int position = 0;
  Index symbol = 0;
  std::string path;
};

struct ScanResult {
  std::vector<ScanRow> rows;
  long occurrences = 0;     // == rows.size()
  long class_samples = 0;
  std::string manifest_path;
};

// Generates sequences for every sample of class_id (view 0), exports a PGM
// per occurrence of symbol_id and writes a manifest TSV
// (sample<TAB>view<TAB>position<TAB>symbol<TAB>path).
ScanResult symbol_scan(const ParamMap<float>& params, const ModelConfig& cfg,
                       const DiscretizeSpec& spec, const FeatureSet& fs,
                       Index symbol_id, std::uint32_t class_id,
                       const std::string& out_dir, int scale, double eval_tau);

}  // namespace symseq
