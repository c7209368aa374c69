#pragma once

#include "symseq/model.hpp"
#include "symseq/rng.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace symseq {

// Central finite-difference verification of analytic gradients, always at
// f64. The evaluation callback rebuilds the forward pass from scratch for
// each perturbed parameter set, so it is independent of the tape's backward
// path by construction.
struct GradCheckReport {
  double max_rel_err = 0.0;
  long coords_checked = 0;
  std::string worst_tensor;

  bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

inline GradCheckReport finite_difference_check(
    const ParamMap<double>& params,
    const std::function<double(const ParamMap<double>&)>& eval,
    const ParamMap<double>& analytic, long samples_per_tensor, RngStream& rs,
    double h0 = 1e-5) {
  GradCheckReport rep;
  ParamMap<double> work = params;
  for (const auto& [name, grad] : analytic) {
    auto pit = work.find(name);
    check(pit != work.end(), "gradcheck: unknown tensor " + name);
    Mat<double>& tensor = pit->second;
    const Index total = tensor.size();
    const long n = std::min<long>(samples_per_tensor, total);
    for (long s = 0; s < n; ++s) {
      const Index flat =
          (total <= samples_per_tensor)
              ? static_cast<Index>(s)
              : static_cast<Index>(rs.next_u64() % static_cast<std::uint64_t>(total));
      double* slot = tensor.data() + flat;
      const double x0 = *slot;
      const double h = h0 * std::max(1.0, std::abs(x0));
      *slot = x0 + h;
      const double fp = eval(work);
      *slot = x0 - h;
      const double fm = eval(work);
      *slot = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grad.data()[flat];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-4});
      const double rel = std::abs(an - fd) / denom;
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = name + "[" + std::to_string(flat) + "]";
      }
    }
  }
  return rep;
}

}  // namespace symseq
