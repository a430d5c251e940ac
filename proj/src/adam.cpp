#include "mtl/adam.hpp"

#include <cmath>

#include "mtl/errors.hpp"

namespace mtl::opt {

void AdamState::step(ParameterSet& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value.v.size(), 0.0);
      v_[i].assign(params[i].value.v.size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw UsageError("adam state was built for a different parameter set");

  ++t_;
  const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.value.v.size() != m_[i].size())
      throw UsageError("parameter '" + p.name + "' changed size since the first adam step");
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < m.size(); ++j) {
      const double g = p.grad.v[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / b1t;
      const double vhat = v[j] / b2t;
      p.value.v[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace mtl::opt
