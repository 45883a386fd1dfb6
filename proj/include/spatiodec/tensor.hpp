#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spatiodec/error.hpp"

namespace spatiodec {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) {
      throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
    }
  }
}

// Row-major strides: the last axis is contiguous.
inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

enum class Precision { single, double_ };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::single : Precision::double_;
}

/// Dense row-major N-dimensional array. A rank-0 tensor (shape []) holds one
/// value and is used for scalar losses.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  static Tensor scalar(T value) {
    Tensor t;
    t.data_[0] = value;
    return t;
  }

  // Normal draws from a caller-owned stream.
  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.data_) v = static_cast<T>(dist(rng));
    return t;
  }

  static Tensor randn(Shape shape, std::uint64_t seed, double mean = 0.0,
                      double stddev = 1.0) {
    Rng rng(seed);
    return randn(std::move(shape), rng, mean, stddev);
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data_) v = static_cast<T>(dist(rng));
    return t;
  }

  static Tensor generate(Shape shape, const std::function<T(std::size_t)>& gen) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.data_.size(); ++i) t.data_[i] = gen(i);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  Shape strides() const { return row_major_strides(shape_); }
  bool is_scalar() const { return data_.size() == 1; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> coord) const {
    if (coord.size() != shape_.size()) {
      throw AxisError("coordinate rank " + std::to_string(coord.size()) +
                      " != tensor rank " + std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t k = 0; k < coord.size(); ++k) {
      if (coord[k] >= shape_[k]) throw AxisError("coordinate out of range");
      off = off * shape_[k] + coord[k];
    }
    return off;
  }

  Shape coords(std::size_t offset) const {
    Shape c(shape_.size());
    for (std::size_t k = shape_.size(); k-- > 0;) {
      c[k] = offset % shape_[k];
      offset /= shape_[k];
    }
    return c;
  }

  T& at(std::initializer_list<std::size_t> coord) {
    return data_[offset(std::span<const std::size_t>(coord.begin(), coord.size()))];
  }
  const T& at(std::initializer_list<std::size_t> coord) const {
    return data_[offset(std::span<const std::size_t>(coord.begin(), coord.size()))];
  }

  Tensor reshape(Shape new_shape) const& {
    Tensor out = *this;
    out.reshape_in_place(std::move(new_shape));
    return out;
  }
  Tensor reshape(Shape new_shape) && {
    reshape_in_place(std::move(new_shape));
    return std::move(*this);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void reshape_in_place(Shape new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(new_shape));
    }
    shape_ = std::move(new_shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](T x, T y) {
                      return std::memcmp(&x, &y, sizeof(T)) == 0;
                    });
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

}  // namespace spatiodec
