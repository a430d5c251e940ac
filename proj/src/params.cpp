#include "mtl/params.hpp"

#include <cstring>

#include "mtl/errors.hpp"

namespace mtl::ad {

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor::zeros(value.shape);
  p.value = std::move(value);
  items_.push_back(std::move(p));
  return items_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grads() {
  for (auto& p : items_) p.grad.fill(0.0);
}

int64_t ParameterSet::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

uint64_t fingerprint(const ParameterSet& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    for (double x : p.value.v) {
      uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      mix(&bits, sizeof bits);
    }
  }
  return h;
}

}  // namespace mtl::ad
