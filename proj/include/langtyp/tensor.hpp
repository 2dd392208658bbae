#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace langtyp {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles. The graph operations work on 2-D tensors;
// a scalar is a 1x1 tensor and a vector is a 1xn row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;
  bool is_matrix() const { return shape_.size() == 2; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v);
  double item() const;  // value of a one-element tensor

  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Shape& shape);

}  // namespace langtyp
