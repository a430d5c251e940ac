#include "mtl/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace mtl::ad {

GradCheckResult gradient_check(ParameterSet& params,
                               const std::function<double(ParameterSet&)>& loss_fn,
                               double h) {
  params.zero_grads();
  loss_fn(params);
  std::vector<std::vector<double>> analytic(params.size());
  for (size_t i = 0; i < params.size(); ++i) analytic[i] = params[i].grad.v;

  GradCheckResult res;
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    for (size_t j = 0; j < p.value.v.size(); ++j) {
      const double saved = p.value.v[j];
      p.value.v[j] = saved + h;
      params.zero_grads();
      const double fp = loss_fn(params);
      p.value.v[j] = saved - h;
      params.zero_grads();
      const double fm = loss_fn(params);
      p.value.v[j] = saved;

      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p.name;
        res.worst_index = j;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  params.zero_grads();
  return res;
}

}  // namespace mtl::ad
