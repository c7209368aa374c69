#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace symseq {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central finite-difference verification of every differentiable operation
// (projector, decoder, encoder, softmax/gumbel discretization with frozen
// noise, VQ auxiliary loss, and the fully unrolled student loss), at f64,
// over `configs_per_op` random configurations each. Pass threshold: max
// relative error < 1e-4.
std::vector<CheckResult> gradient_suite(int configs_per_op, std::uint64_t seed);

// Distribution, oracle and structural invariants: Gumbel-max exactness,
// VQ nearest-code agreement with exhaustive search, loss closed forms,
// EMA/centering exactness, simplex and attention-row normalization, decoder
// causality, incremental/full decoding agreement, prefix locality, schedule
// endpoints, and SYMF/SYMC round-trips (written under tmp_dir).
std::vector<CheckResult> invariant_suite(std::uint64_t seed,
                                         const std::string& tmp_dir);

// Runs both suites, prints one line per check, returns 0 iff all pass.
int run_selfcheck(std::ostream& os, const std::string& tmp_dir);

}  // namespace symseq
