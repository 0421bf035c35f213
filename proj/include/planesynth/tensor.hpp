#pragma once

#include <algorithm>
#include <cmath>
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "planesynth/errors.hpp"

namespace planesynth {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major N-d array. Images are {H, W, C}, plane stacks {N, H, W, C},
// scalar maps {H, W}. Rank is small (<= 4) everywhere in the library.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw DimensionMismatch("tensor data size " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t k) const { return shape_.at(k); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& raw() noexcept { return data_; }
  const std::vector<T>& raw() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) noexcept {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const noexcept {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  T item() const {
    if (data_.size() != 1) throw DimensionMismatch("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Contiguous slab i along the leading axis, e.g. one plane of a stack.
  std::span<T> slab(std::size_t i) noexcept {
    const std::size_t n = data_.size() / shape_[0];
    return std::span<T>(data_).subspan(i * n, n);
  }
  std::span<const T> slab(std::size_t i) const noexcept {
    const std::size_t n = data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(i * n, n);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
      throw DimensionMismatch("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return BasicTensor(std::move(shape), data_);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw DimensionMismatch(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m{};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max<T>(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace planesynth
