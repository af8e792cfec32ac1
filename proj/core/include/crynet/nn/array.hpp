#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crynet/errors.hpp"

namespace crynet::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major array. T is float in training and double when gradients
/// are checked against finite differences.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    check_shape();
  }
  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("array data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
    }
  }

  static Array zeros(Shape shape) { return Array(std::move(shape)); }
  static Array zeros_like(const Array& other) { return Array(other.shape_); }
  static Array scalar(T v) { return Array(Shape{1}, std::vector<T>{v}); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] std::vector<T>& storage() { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Reinterprets the data with a new shape of the same element count.
  void reshape(Shape shape) {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Frees the storage; used to drop activations once backward no longer needs them.
  void release() {
    std::vector<T>().swap(data_);
    shape_.clear();
  }

  template <typename U>
  [[nodiscard]] Array<U> cast() const {
    return Array<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  [[nodiscard]] bool all_finite() const;

  bool operator==(const Array&) const = default;

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("array dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

extern template class Array<float>;
extern template class Array<double>;

}  // namespace crynet::nn
