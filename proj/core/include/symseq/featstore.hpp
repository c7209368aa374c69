#pragma once

#include "symseq/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace symseq {

// Precomputed teacher features: N samples x V augmented views x P tokens of
// width d_t, where token 0 is the global (pooled) token and tokens 1..P-1 are
// the patch tokens of a grid_h x grid_w grid. Frozen input to training; the
// only bridge to the external pretrained encoder.
struct FeatureSet {
  std::uint32_t n_samples = 0;
  std::uint32_t n_views = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t d_t = 0;
  std::vector<float> tokens;  // row-major [N][V][P][d_t], P = 1 + grid_h*grid_w
  std::optional<std::vector<std::uint32_t>> labels;  // [N], in [0, n_classes)
  std::uint32_t n_classes = 0;
  std::vector<std::string> class_names;  // optional, in-memory only

  std::uint32_t tokens_per_view() const { return 1 + grid_h * grid_w; }

  std::size_t flat_index(std::uint32_t i, std::uint32_t v, std::uint32_t p,
                         std::uint32_t c) const {
    const std::size_t P = tokens_per_view();
    return ((static_cast<std::size_t>(i) * n_views + v) * P + p) * d_t + c;
  }

  // Throws Error if any structural invariant is violated.
  void validate() const;
};

struct ViewSlice {
  Eigen::Map<const Eigen::RowVectorXf> global_token;
  Eigen::Map<const MatF> patch_tokens;  // [P-1 x d_t]
};

// Zero-copy slice of sample i, view v. Range-checked.
ViewSlice view(const FeatureSet& set, std::uint32_t i, std::uint32_t v);

// SYMF v1, little-endian. Round-trips bitwise; rejects non-finite payloads
// in both directions.
void write_features(const FeatureSet& set, const std::string& path);
FeatureSet read_features(const std::string& path);

std::uint64_t feature_hash(const FeatureSet& set);

}  // namespace symseq
