#include "apricot/ndgrad/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace apricot::ndgrad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("array: " + std::to_string(data_.size()) + " values do not fill shape " +
                                shape_string(shape_));
  }
}

Array Array::scalar(double value) { return Array(Shape{1}, std::vector<double>{value}); }

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array(Shape{n}, std::move(values));
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("array: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(shape_));
  }
  return shape_[axis];
}

double Array::item() const {
  if (data_.size() != 1) throw std::invalid_argument("array: item() on shape " + shape_string(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("array: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Array(std::move(shape), data_);
}

}  // namespace apricot::ndgrad
