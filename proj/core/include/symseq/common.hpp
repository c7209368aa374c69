#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace symseq {

using Index = Eigen::Index;

// Row-major throughout: file payloads and per-row ops index as [row][col].
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

inline bool is_power_of_two(long v) { return v > 0 && (v & (v - 1)) == 0; }

// FNV-1a over raw bytes, used to assert buffers were not mutated.
inline std::uint64_t hash_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace symseq
