#pragma once

#include <cstdint>
#include <vector>

#include "mtl/params.hpp"

namespace mtl::opt {

using ad::Parameter;
using ad::ParameterSet;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. One state instance per ParameterSet; the first
// and second moment buffers are laid out to mirror the set's parameters, so
// reordering or resizing the set between steps is an error.
class AdamState {
 public:
  explicit AdamState(const AdamConfig& cfg) : cfg_(cfg) {}

  // Applies one update in place from the accumulated gradients. Does not
  // reset the gradients; callers own that via ParameterSet::zero_grads().
  void step(ParameterSet& params);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_;  // first moment, per parameter
  std::vector<std::vector<double>> v_;  // second moment, per parameter
};

}  // namespace mtl::opt
