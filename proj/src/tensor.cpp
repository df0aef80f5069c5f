#include "cafe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace cafe {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

static void check_extents(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw ShapeError("rows() needs rank <= 2, got " + shape_str(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw ShapeError("cols() needs rank <= 2, got " + shape_str(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace cafe
