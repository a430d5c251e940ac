#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtl {

// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor scalar(double x);
  // rows x cols matrix from a flat row-major list.
  static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> values);

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int64_t rows() const;
  int64_t cols() const;

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  void fill(double x);

  std::string shape_str() const;
};

}  // namespace mtl
