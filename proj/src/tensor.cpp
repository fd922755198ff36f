#include "guidefree/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace guidefree {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t trailing_count(const std::vector<std::size_t>& shape) {
  if (shape.size() < 2) return shape.empty() ? 0 : 1;
  return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill), cols_(trailing_count(shape_)) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)), cols_(trailing_count(shape_)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor data length does not match shape");
  }
}


bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.shape() != b.shape()) throw ShapeError(what + ": shape mismatch");
}

}  // namespace guidefree
