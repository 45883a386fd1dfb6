#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "spatiodec/tape.hpp"
#include "spatiodec/tensor.hpp"

namespace spatiodec {

/// Puts parameter tensors on a tape. Tensors registered with `route` get their
/// gradient added into the paired sink on backward; all others are constants.
template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(Tape<T>& tape) : tape_(&tape) {}

  void route(const Tensor<T>* value, Tensor<T>* sink) { sinks_[value] = sink; }

  Var<T> operator()(const Tensor<T>& value) const {
    auto it = sinks_.find(&value);
    return tape_->parameter(value, it == sinks_.end() ? nullptr : it->second);
  }

  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_;
  std::unordered_map<const Tensor<T>*, Tensor<T>*> sinks_;
};

enum class TensorRole { trainable, running_stat };

// He-normal weights: std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  return Tensor<T>::randn(shape, rng, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace spatiodec
