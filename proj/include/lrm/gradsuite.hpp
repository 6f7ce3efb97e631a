#pragma once

#include <string>
#include <vector>

#include "lrm/gradcheck.hpp"

namespace lrm {

// Finite-difference verification suites behind `lrm gradcheck`, all in f64.
// Scopes: "primitive" (every tensor op), "module" (encoder/decoder/field/
// renderer/loss building blocks), "endtoend" (image -> triplane -> render ->
// Eq. 6 loss at a reduced desk config, sampled coordinates).

struct SuiteCase {
  std::string name;
  double tol = 1e-4;
  GradCheckReport report;
  bool pass() const { return report.max_rel_err < tol; }
};

struct SuiteResult {
  std::vector<SuiteCase> cases;
  bool pass() const {
    for (const auto& c : cases)
      if (!c.pass()) return false;
    return !cases.empty();
  }
  std::string table() const;
};

// inject_fault adds a negative-control case whose backward pass carries a
// deliberate sign flip; the suite must then fail. Used to prove the harness
// can detect wrong gradients.
SuiteResult run_gradcheck_suite(const std::string& scope, bool inject_fault = false);

}  // namespace lrm
