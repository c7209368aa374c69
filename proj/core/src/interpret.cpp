#include "symseq/interpret.hpp"

#include "symseq/seqgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace symseq {

namespace {

AttentionMap map_from_rows(const MatF& head_rows, int position, Index token_id,
                           int grid_h, int grid_w, int head) {
  AttentionMap m;
  m.position = position;
  m.token_id = token_id;
  Eigen::RowVectorXf row;
  if (head < 0) {
    row = head_rows.colwise().mean();
  } else {
    check(head < head_rows.rows(), "head index out of range");
    row = head_rows.row(head);
  }
  m.weights.resize(grid_h, grid_w);
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) m.weights(r, c) = row(r * grid_w + c);

  const float lo = m.weights.minCoeff();
  const float hi = m.weights.maxCoeff();
  if (hi - lo < 1e-12f) {
    m.normalized = MatF::Zero(grid_h, grid_w);  // constant field guard
  } else {
    m.normalized = (m.weights.array() - lo) / (hi - lo);
  }
  return m;
}

}  // namespace

std::vector<AttentionMap> attention_maps(const ParamMap<float>& params,
                                         const ModelConfig& cfg,
                                         const DiscretizeSpec& spec,
                                         const FeatureSet& fs,
                                         std::uint32_t sample,
                                         std::uint32_t view_index,
                                         double eval_tau, int head) {
  const auto slice = view(fs, sample, view_index);
  check(static_cast<int>(fs.d_t) == cfg.d_t, "feature d_t mismatch");
  Rng rng(0);
  auto seq = generate<float>(params, cfg, spec, slice.patch_tokens, eval_tau,
                             rng.stream(Rng::kEval), /*eval=*/true);
  std::vector<AttentionMap> maps;
  for (int l = 0; l < cfg.seq_len; ++l)
    maps.push_back(map_from_rows(seq.attn[0][static_cast<std::size_t>(l)], l,
                                 seq.ids[static_cast<std::size_t>(l)],
                                 static_cast<int>(fs.grid_h),
                                 static_cast<int>(fs.grid_w), head));
  return maps;
}

void export_pgm(const AttentionMap& map, int scale, const std::string& path) {
  check(scale >= 1, "export_pgm: scale must be >= 1");
  const Index h = map.normalized.rows() * scale;
  const Index w = map.normalized.cols() * scale;
  std::ofstream os(path, std::ios::binary);
  check(static_cast<bool>(os), "cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const float v = map.normalized(y / scale, x / scale);
      row[static_cast<std::size_t>(x)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  check(static_cast<bool>(os), "i/o failure writing " + path);
}

void export_raw_csv(const AttentionMap& map, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), "cannot open for writing: " + path);
  for (Index r = 0; r < map.weights.rows(); ++r) {
    for (Index c = 0; c < map.weights.cols(); ++c) {
      if (c) os << ",";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", map.weights(r, c));
      os << buf;
    }
    os << "\n";
  }
}

ScanResult symbol_scan(const ParamMap<float>& params, const ModelConfig& cfg,
                       const DiscretizeSpec& spec, const FeatureSet& fs,
                       Index symbol_id, std::uint32_t class_id,
                       const std::string& out_dir, int scale, double eval_tau) {
  check(fs.labels.has_value(), "symbol_scan: labels required");
  check(class_id < fs.n_classes, "symbol_scan: class absent");
  check(symbol_id >= 0 && symbol_id < cfg.vocab_size,
        "symbol_scan: symbol out of vocabulary");
  std::filesystem::create_directories(out_dir);

  ScanResult result;
  result.manifest_path = out_dir + "/manifest.tsv";
  std::ofstream manifest(result.manifest_path);
  check(static_cast<bool>(manifest), "cannot open " + result.manifest_path);
  manifest << "sample\tview\tposition\tsymbol\tpath\n";

  bool class_seen = false;
  Rng rng(0);
  for (std::uint32_t i = 0; i < fs.n_samples; ++i) {
    if ((*fs.labels)[i] != class_id) continue;
    class_seen = true;
    ++result.class_samples;
    const auto slice = view(fs, i, 0);
    auto seq = generate<float>(params, cfg, spec, slice.patch_tokens, eval_tau,
                               rng.stream(Rng::kEval, i), /*eval=*/true);
    for (int l = 0; l < cfg.seq_len; ++l) {
      if (seq.ids[static_cast<std::size_t>(l)] != symbol_id) continue;
      auto map = map_from_rows(seq.attn[0][static_cast<std::size_t>(l)], l,
                               symbol_id, static_cast<int>(fs.grid_h),
                               static_cast<int>(fs.grid_w), -1);
      char name[96];
      std::snprintf(name, sizeof(name), "/sym%ld_s%u_p%d.pgm",
                    static_cast<long>(symbol_id), i, l);
      const std::string path = out_dir + name;
      export_pgm(map, scale, path);
      manifest << i << "\t0\t" << l << "\t" << symbol_id << "\t" << path
               << "\n";
      result.rows.push_back(ScanRow{i, 0, l, symbol_id, path});
    }
  }
  check(class_seen, "symbol_scan: class absent");
  result.occurrences = static_cast<long>(result.rows.size());
  return result;
}

}  // namespace symseq
