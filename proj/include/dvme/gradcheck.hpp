#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dvme/errors.hpp"
#include "dvme/tensor.hpp"

namespace dvme {

// One parameter tensor under test: the live tensor the objective reads and
// the analytic gradient computed for it.
struct GradcheckEntry {
  std::string name;
  TensorD* param;
  const TensorD* analytic;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

// Central differences (f(t+h) - f(t-h)) / 2h against the analytic gradient,
// scored as |a - n| / max(1, |a| + |n|). `stride` > 1 checks every stride-th
// element of each tensor (always including index 0).
inline GradcheckResult gradcheck(const std::function<double()>& objective,
                                 const std::vector<GradcheckEntry>& entries, double h = 1e-5,
                                 std::size_t stride = 1) {
  if (!(h > 0.0)) throw ParameterError("gradcheck step must be positive");
  if (stride == 0) stride = 1;
  GradcheckResult result;
  for (const auto& e : entries) {
    if (!e.param->same_shape(*e.analytic)) {
      throw DimensionError("gradcheck: gradient for " + e.name + " has shape " +
                           shape_string(e.analytic->shape()) + ", parameter has " +
                           shape_string(e.param->shape()));
    }
    for (std::size_t i = 0; i < e.param->size(); i += stride) {
      double& theta = (*e.param)[i];
      const double saved = theta;
      theta = saved + h;
      const double fp = objective();
      theta = saved - h;
      const double fm = objective();
      theta = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("gradcheck: objective is non-finite when perturbing " + e.name +
                           "[" + std::to_string(i) + "]");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = (*e.analytic)[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
      ++result.checked;
      if (result.worst_tensor.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = e.name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace dvme
