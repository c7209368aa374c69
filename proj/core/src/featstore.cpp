#include "symseq/featstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "SYMF i/o assumes a little-endian host");

namespace symseq {

namespace {

constexpr char kMagic[4] = {'S', 'Y', 'M', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T get(std::ifstream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) fail(std::string("truncated file while reading ") + what);
  return v;
}

}  // namespace

void FeatureSet::validate() const {
  check(n_samples > 0, "empty set");
  check(n_views > 0, "feature set has no views");
  check(grid_h > 0 && grid_w > 0, "feature set has empty patch grid");
  check(d_t > 0, "feature set has zero feature width");
  const std::size_t expect = static_cast<std::size_t>(n_samples) * n_views *
                             tokens_per_view() * d_t;
  check(tokens.size() == expect, "token buffer size mismatch");
  for (float f : tokens)
    check(std::isfinite(f), "non-finite value in feature tensor");
  if (labels) {
    check(labels->size() == n_samples, "label count != n_samples");
    check(n_classes > 0, "labels present but n_classes == 0");
    for (std::uint32_t l : *labels)
      check(l < n_classes, "label out of range [0, n_classes)");
  }
}

ViewSlice view(const FeatureSet& set, std::uint32_t i, std::uint32_t v) {
  check(i < set.n_samples, "sample index out of range");
  check(v < set.n_views, "view index out of range");
  const std::uint32_t P = set.tokens_per_view();
  const float* base = set.tokens.data() + set.flat_index(i, v, 0, 0);
  return ViewSlice{
      Eigen::Map<const Eigen::RowVectorXf>(base, set.d_t),
      Eigen::Map<const MatF>(base + set.d_t, P - 1, set.d_t),
  };
}

void write_features(const FeatureSet& set, const std::string& path) {
  set.validate();
  std::ofstream os(path, std::ios::binary);
  check(static_cast<bool>(os), "cannot open for writing: " + path);

  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, set.n_samples);
  put<std::uint32_t>(os, set.n_views);
  put<std::uint32_t>(os, set.grid_h);
  put<std::uint32_t>(os, set.grid_w);
  put<std::uint32_t>(os, set.d_t);
  put<std::uint8_t>(os, 0);  // dtype 0 = f32le
  put<std::uint8_t>(os, set.labels.has_value() ? 1 : 0);
  put<std::uint16_t>(os, 0);  // reserved
  if (set.labels) {
    put<std::uint32_t>(os, set.n_classes);
    os.write(reinterpret_cast<const char*>(set.labels->data()),
             static_cast<std::streamsize>(set.labels->size() * 4));
  }
  os.write(reinterpret_cast<const char*>(set.tokens.data()),
           static_cast<std::streamsize>(set.tokens.size() * 4));
  check(static_cast<bool>(os), "i/o failure writing " + path);
}

FeatureSet read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), "cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
        "bad magic: not a SYMF file");
  const auto version = get<std::uint32_t>(is, "version");
  check(version == kVersion,
        "unsupported SYMF version " + std::to_string(version));

  FeatureSet set;
  set.n_samples = get<std::uint32_t>(is, "n_samples");
  set.n_views = get<std::uint32_t>(is, "n_views");
  set.grid_h = get<std::uint32_t>(is, "grid_h");
  set.grid_w = get<std::uint32_t>(is, "grid_w");
  set.d_t = get<std::uint32_t>(is, "d_t");
  const auto dtype = get<std::uint8_t>(is, "dtype");
  check(dtype == 0, "unsupported dtype (only f32le)");
  const auto has_labels = get<std::uint8_t>(is, "has_labels");
  const auto reserved = get<std::uint16_t>(is, "reserved");
  check(reserved == 0, "nonzero reserved header field");
  check(set.n_samples > 0, "empty set");
  check(set.n_views > 0 && set.grid_h > 0 && set.grid_w > 0 && set.d_t > 0,
        "degenerate header dimensions");

  if (has_labels) {
    set.n_classes = get<std::uint32_t>(is, "n_classes");
    std::vector<std::uint32_t> labels(set.n_samples);
    is.read(reinterpret_cast<char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * 4));
    check(static_cast<bool>(is), "truncated label block");
    set.labels = std::move(labels);
  }

  const std::size_t count = static_cast<std::size_t>(set.n_samples) *
                            set.n_views * set.tokens_per_view() * set.d_t;
  set.tokens.resize(count);
  is.read(reinterpret_cast<char*>(set.tokens.data()),
          static_cast<std::streamsize>(count * 4));
  check(static_cast<bool>(is) &&
            is.gcount() == static_cast<std::streamsize>(count * 4),
        "truncated payload: shorter than header promises");
  is.peek();
  check(is.eof(), "trailing bytes after payload");

  set.validate();
  return set;
}

std::uint64_t feature_hash(const FeatureSet& set) {
  return hash_bytes(set.tokens.data(), set.tokens.size() * 4);
}

}  // namespace symseq
