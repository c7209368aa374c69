#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace symseq {

// Deterministic, implementation-pinned random numbers. Standard-library
// distributions are not bit-stable across toolchains, so sampling is done
// from raw 64-bit words here. Streams are derived functionally from a root
// seed plus tags, which makes every draw in a run addressable: the trainer
// can resume mid-run and reproduce the exact noise it would have drawn.

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = splitmix64(x);
  }

  // xoshiro256**
  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller; one uniform pair per sample keeps the stream layout simple.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Gumbel(0,1) = -log(-log(U)); U clamped away from {0,1} to stay finite.
  double gumbel() {
    double u = uniform();
    if (u < 1e-12) u = 1e-12;
    if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
    return -std::log(-std::log(u));
  }

  // Truncated normal, resampled until |x| <= 2*sigma.
  double trunc_normal(double sigma) {
    for (;;) {
      const double v = normal() * sigma;
      if (std::abs(v) <= 2.0 * sigma) return v;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_;
};

class Rng {
 public:
  explicit Rng(std::uint64_t root) : root_(root) {}

  std::uint64_t root() const { return root_; }

  RngStream stream(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                   std::uint64_t d = 0) const {
    std::uint64_t x = root_;
    for (std::uint64_t tag : {a, b, c, d}) {
      x ^= splitmix64(x) + tag * 0x9e3779b97f4a7c15ull;
      (void)splitmix64(x);
    }
    return RngStream(x);
  }

  // Stream tag namespaces.
  enum Tag : std::uint64_t {
    kInit = 1,
    kShuffle = 2,
    kGumbel = 3,
    kData = 4,
    kEval = 5,
    kTest = 6,
  };

 private:
  std::uint64_t root_;
};

}  // namespace symseq
