#pragma once

#include "symseq/discretize.hpp"
#include "symseq/featstore.hpp"
#include "symseq/model.hpp"

#include <string>
#include <vector>

namespace symseq {

enum class Representation {
  kStudentPooled,      // encoder summary output, pre-projector (d_model)
  kStudentAggregated,  // summed per-prefix prototype logits (K)
  kTeacherFeature,     // stored global token (d_t)
};

Representation representation_from_string(const std::string& s);
std::string to_string(Representation r);

struct ProbeReport {
  std::string representation;
  int prefix_n = -1;          // -1: full sequence
  std::vector<int> k_values;  // empty for the linear probe
  std::vector<double> top1;   // percent, aligned with k_values (or size 1)
  std::vector<double> top5;
};

// One embedding row per sample (view 0), deterministic: generation runs the
// noise-free argmax path.
MatF extract_embeddings(const ParamMap<float>& params, const ModelConfig& cfg,
                        const DiscretizeSpec& spec, const FeatureSet& fs,
                        Representation rep, int prefix_n, double eval_tau);

// Temperature-weighted cosine-similarity voting among the k nearest
// training embeddings, for each k in k_values.
ProbeReport knn_classify(const MatF& train_emb,
                         const std::vector<std::uint32_t>& train_labels,
                         const MatF& eval_emb,
                         const std::vector<std::uint32_t>& eval_labels,
                         const std::vector<int>& k_values, double knn_temp);

// Multinomial logistic regression (single linear layer, softmax
// cross-entropy, AdamW) on frozen embeddings.
ProbeReport linear_probe(const MatF& train_emb,
                         const std::vector<std::uint32_t>& train_labels,
                         const MatF& eval_emb,
                         const std::vector<std::uint32_t>& eval_labels,
                         int epochs = 200, double lr = 1e-2);

struct SubseqRow {
  int prefix_n = 0;
  double top1 = 0.0;
  double top5 = 0.0;
};

// kNN accuracy of the pooled representation per prefix length {1,2,4,...,L}.
std::vector<SubseqRow> subsequence_report(
    const ParamMap<float>& params, const ModelConfig& cfg,
    const DiscretizeSpec& spec, const FeatureSet& train_set,
    const FeatureSet& eval_set, int k, double knn_temp, double eval_tau);

}  // namespace symseq
