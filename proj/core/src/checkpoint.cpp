#include "symseq/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "SYMC i/o assumes a little-endian host");

namespace symseq {

namespace {

constexpr char kMagic[4] = {'S', 'Y', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T get(std::ifstream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) fail(std::string("truncated checkpoint while reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check(static_cast<bool>(os), "cannot open for writing: " + path);

  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, tensor] : ckpt.entries) {
    check(name.size() <= 0xffff, "entry name too long: " + name);
    for (Index i = 0; i < tensor.size(); ++i)
      check(std::isfinite(tensor.data()[i]),
            "refusing to write non-finite tensor: " + name);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, 2);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.cols()));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(tensor.size() * 4));
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.config_text.size()));
  os.write(ckpt.config_text.data(),
           static_cast<std::streamsize>(ckpt.config_text.size()));
  check(static_cast<bool>(os), "i/o failure writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), "cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
        "bad magic: not a SYMC checkpoint");
  const auto version = get<std::uint32_t>(is, "version");
  check(version == kVersion,
        "unsupported SYMC version " + std::to_string(version));

  Checkpoint ckpt;
  const auto n_entries = get<std::uint32_t>(is, "entry count");
  for (std::uint32_t e = 0; e < n_entries; ++e) {
    const auto name_len = get<std::uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    check(static_cast<bool>(is), "truncated entry name");
    const auto rank = get<std::uint8_t>(is, "rank");
    check(rank == 1 || rank == 2, "unsupported tensor rank");
    std::uint32_t rows = 1, cols = 1;
    if (rank == 1) {
      cols = get<std::uint32_t>(is, "dim");
    } else {
      rows = get<std::uint32_t>(is, "rows");
      cols = get<std::uint32_t>(is, "cols");
    }
    MatF tensor(rows, cols);
    is.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * 4));
    check(static_cast<bool>(is), "truncated payload for entry " + name);
    for (Index i = 0; i < tensor.size(); ++i)
      check(std::isfinite(tensor.data()[i]),
            "non-finite value in checkpoint entry " + name);
    ckpt.entries[name] = std::move(tensor);
  }
  const auto cfg_len = get<std::uint32_t>(is, "config length");
  ckpt.config_text.resize(cfg_len);
  is.read(ckpt.config_text.data(), cfg_len);
  check(static_cast<bool>(is), "truncated config snapshot");
  is.peek();
  check(is.eof(), "trailing bytes after config snapshot");
  return ckpt;
}

}  // namespace symseq
