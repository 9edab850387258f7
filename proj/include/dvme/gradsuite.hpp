#pragma once

// Finite-difference suite over every layer primitive, the probe, and both
// fusion variants, in 64-bit with dropout disabled.

#include <cstdint>
#include <string>
#include <vector>

#include "dvme/gradcheck.hpp"

namespace dvme {

struct GradSuiteCase {
  std::string name;
  GradcheckResult result;
};

struct GradSuiteReport {
  std::vector<GradSuiteCase> cases;

  double max_rel_error() const;
  // "case:tensor" of the worst element over all cases.
  std::string worst() const;
  bool passed(double tol) const { return max_rel_error() < tol; }
};

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  // Negates the analytic gradient of every tensor with this name before
  // comparison; mutation hook for exercising the failure path.
  std::string sign_flip;
};

GradSuiteReport run_grad_suite(const GradSuiteOptions& options);

}  // namespace dvme
