#include "mtl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl {

static int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("tensor shape has negative extent");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  int64_t n = shape_product(shape);
  t.shape = std::move(shape);
  t.v.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::scalar(double x) {
  Tensor t;
  t.shape = {1};
  t.v = {x};
  return t;
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> values) {
  if (static_cast<int64_t>(values.size()) != rows * cols)
    throw DimensionError("matrix: " + std::to_string(values.size()) + " values for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  Tensor t;
  t.shape = {rows, cols};
  t.v = std::move(values);
  return t;
}

int64_t Tensor::rows() const {
  if (shape.size() != 2) throw DimensionError("rows(): tensor is not 2-d, shape " + shape_str());
  return shape[0];
}

int64_t Tensor::cols() const {
  if (shape.size() != 2) throw DimensionError("cols(): tensor is not 2-d, shape " + shape_str());
  return shape[1];
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::fill(double x) {
  for (double& e : v) e = x;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace mtl
