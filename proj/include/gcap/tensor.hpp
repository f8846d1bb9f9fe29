#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gcap/errors.hpp"

namespace gcap {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with a same-shape gradient accumulator.
///
/// Model parameters live in Tensors; a Tape borrows them by reference and
/// accumulates into `grad` during backward. `grad` is always allocated and
/// starts at zero.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<double>(gcap::numel(shape), 0.0), requires_grad) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
    for (std::size_t extent : shape_) {
      if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
    }
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
    if (gcap::numel(shape_) != values_.size()) {
      throw ShapeError("shape " + to_string(shape_) + " does not match " +
                       std::to_string(values_.size()) + " values");
    }
    grad_.assign(values_.size(), 0.0);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return values_.size(); }
  std::size_t rows() const { return shape_.size() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.back(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  /// Adds `delta` into the gradient accumulator. Allowed on const tensors:
  /// accumulation never touches the values.
  void accumulate_grad(std::span<const double> delta) const {
    if (delta.size() != grad_.size()) throw ShapeError("gradient size does not match " + to_string(shape_));
    for (std::size_t i = 0; i < delta.size(); ++i) grad_[i] += delta[i];
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  mutable std::vector<double> grad_;
  bool requires_grad_ = false;
};

}  // namespace gcap
