#pragma once

#include "symseq/featstore.hpp"
#include "symseq/rng.hpp"

namespace symseq::testsupport {

// Ten Gaussian clusters in d_t dimensions. Global token: cluster center plus
// per-sample noise plus small per-view noise. Patch tokens: cluster center
// plus independent noise. Labels are cluster ids.
inline FeatureSet make_synthetic_features(int n_samples, int n_views,
                                          int n_classes, int d_t,
                                          std::uint64_t seed,
                                          double sample_noise = 0.3,
                                          double view_noise = 0.1,
                                          double patch_noise = 0.3) {
  Rng rng(seed);
  auto rs = rng.stream(Rng::kData);

  FeatureSet fs;
  fs.n_samples = static_cast<std::uint32_t>(n_samples);
  fs.n_views = static_cast<std::uint32_t>(n_views);
  fs.grid_h = 2;
  fs.grid_w = 2;
  fs.d_t = static_cast<std::uint32_t>(d_t);
  fs.n_classes = static_cast<std::uint32_t>(n_classes);
  fs.labels = std::vector<std::uint32_t>(static_cast<std::size_t>(n_samples));
  fs.tokens.resize(static_cast<std::size_t>(n_samples) * n_views *
                   fs.tokens_per_view() * d_t);

  std::vector<std::vector<double>> centers(static_cast<std::size_t>(n_classes));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(d_t));
    for (auto& v : c) v = rs.normal();
  }

  for (int i = 0; i < n_samples; ++i) {
    const int cls = i % n_classes;
    (*fs.labels)[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(cls);
    std::vector<double> sample(static_cast<std::size_t>(d_t));
    for (int c = 0; c < d_t; ++c)
      sample[static_cast<std::size_t>(c)] =
          centers[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] +
          sample_noise * rs.normal();
    for (int v = 0; v < n_views; ++v) {
      for (int c = 0; c < d_t; ++c)
        fs.tokens[fs.flat_index(static_cast<std::uint32_t>(i),
                                static_cast<std::uint32_t>(v), 0,
                                static_cast<std::uint32_t>(c))] =
            static_cast<float>(sample[static_cast<std::size_t>(c)] +
                               view_noise * rs.normal());
      for (std::uint32_t p = 1; p < fs.tokens_per_view(); ++p)
        for (int c = 0; c < d_t; ++c)
          fs.tokens[fs.flat_index(static_cast<std::uint32_t>(i),
                                  static_cast<std::uint32_t>(v), p,
                                  static_cast<std::uint32_t>(c))] =
              static_cast<float>(
                  centers[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] +
                  patch_noise * rs.normal());
    }
  }
  fs.validate();
  return fs;
}

}  // namespace symseq::testsupport
