#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lbn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Every dimension is positive and the
/// element count always equals the product of the shape.
class Tensor {
 public:
  Tensor();  // shape {1}, value 0
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  // Row/column counts of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  // Value of a single-element tensor.
  double item() const;

  std::span<const double> row(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (untracked) kernels. The tape-aware versions in autodiff.hpp reuse
// these for their forward values.

Tensor matmul(const Tensor& a, const Tensor& b);

struct BatchStats {
  Tensor mean;
  Tensor var;  // population variance, divide by n
};

/// Per-column mean and biased variance of an n x c matrix.
BatchStats batch_stats(const Tensor& x);

/// Row-wise softmax with max subtraction. Throws NumericError on non-finite
/// input.
Tensor softmax(const Tensor& logits);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lbn
