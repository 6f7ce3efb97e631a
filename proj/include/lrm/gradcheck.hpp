#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lrm/rng.hpp"
#include "lrm/tensor.hpp"

namespace lrm {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass(double rel_tol) const { return max_rel_err < rel_tol; }
  std::string table() const;  // aligned per-tensor text table
};

// Central-difference check in 64-bit: f() must rebuild the scalar loss from the
// current leaf values on every call. Perturbation step is 1e-4*(1+|theta|).
// Relative error per coordinate: |a - n| / max(1, |a|, |n|).
// max_coords <= 0 checks every coordinate; otherwise up to max_coords per
// tensor, sampled with rng. Throws if two baseline evaluations disagree
// (non-deterministic f).
GradCheckReport finite_difference_check(
    const std::function<Tensor<double>()>& f,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    int64_t max_coords = 0, Rng* rng = nullptr);

}  // namespace lrm
