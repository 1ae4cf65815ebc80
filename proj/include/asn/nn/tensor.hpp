#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asn/error.hpp"

namespace asn::nn {

// (batch, channels, height, width)
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Rank-4 array with an optional same-shape gradient buffer. The network runs
// in float; the double instantiation only backs finite-difference checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape), data_(checked(shape).size(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(checked(shape)), data_(std::move(data)) {
    require(data_.size() == shape.size(),
            "Tensor: data length " + std::to_string(data_.size()) + " does not match shape " + shape.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::span<T> sample(int n) { return std::span<T>(data_).subspan(n * shape_.sample(), shape_.sample()); }
  std::span<const T> sample(int n) const {
    return std::span<const T>(data_).subspan(n * shape_.sample(), shape_.sample());
  }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zeroed gradient buffer if none exists.
  std::span<T> grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void drop_grad() { grad_ = {}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    auto finite = [](T v) { return std::isfinite(v); };
    return std::all_of(data_.begin(), data_.end(), finite) && std::all_of(grad_.begin(), grad_.end(), finite);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  static const Shape& checked(const Shape& s) {
    require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0, "Tensor: negative dimension");
    return s;
  }
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace asn::nn
