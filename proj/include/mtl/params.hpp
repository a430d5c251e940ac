#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::ad {

// A named weight tensor with its gradient slot. Gradients accumulate across
// backward passes until zero_grads() is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);

  Parameter& operator[](size_t i) { return items_[i]; }
  const Parameter& operator[](size_t i) const { return items_[i]; }
  size_t size() const { return items_.size(); }

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  void zero_grads();
  int64_t scalar_count() const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Parameter> items_;
};

// 64-bit FNV-1a over the raw value bytes; identifies a concrete trained net.
uint64_t fingerprint(const ParameterSet& params);

}  // namespace mtl::ad
