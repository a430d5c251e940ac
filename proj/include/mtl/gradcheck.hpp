#pragma once

#include <functional>
#include <string>

#include "mtl/params.hpp"

namespace mtl::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares analytic gradients against central finite differences, element by
// element over every parameter in the set. `loss_fn` must run one complete
// forward/backward round on a fresh tape — accumulating gradients into the
// set — and return the loss. Gradients are zeroed before the analytic pass
// and left zeroed on return; parameter values are restored exactly.
// Relative error uses the guarded denominator max(|analytic|, |numeric|, 1e-12).
GradCheckResult gradient_check(ParameterSet& params,
                               const std::function<double(ParameterSet&)>& loss_fn,
                               double h = 1e-5);

}  // namespace mtl::ad
