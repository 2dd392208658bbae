#include "langtyp/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "langtyp/error.hpp"

namespace langtyp {

namespace {
std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_product(shape_))
    throw ValidationError("tensor: " + std::to_string(data_.size()) + " values do not fit shape " +
                          langtyp::shape_string(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? shape_[0] : data_.size() / shape_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::item() const {
  if (data_.size() != 1) throw ValidationError("item() on tensor of shape " + shape_string());
  return data_[0];
}

std::string Tensor::shape_string() const { return langtyp::shape_string(shape_); }

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace langtyp
