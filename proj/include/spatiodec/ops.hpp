#pragma once

#include <vector>

#include "spatiodec/tape.hpp"
#include "spatiodec/tensor.hpp"

namespace spatiodec {

enum class EwKind { add, sub, mul, scale };
enum class ReduceKind { sum, mean, max };

// Elementwise arithmetic. `scale` multiplies by a scalar; the tensor-tensor
// form of `scale` is the same as `mul`.
template <typename T>
Tensor<T> ew(EwKind kind, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> ew(EwKind kind, const Tensor<T>& a, T b);

template <typename T>
Var<T> ew(EwKind kind, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> ew(EwKind kind, const Var<T>& a, T b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return ew(EwKind::add, a, b); }
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return ew(EwKind::sub, a, b); }
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return ew(EwKind::mul, a, b); }
template <typename T>
Var<T> scale(const Var<T>& a, T s) { return ew(EwKind::scale, a, s); }
template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) { return ew(EwKind::add, a, s); }

template <typename T>
Var<T> reshape(const Var<T>& a, Shape new_shape);

// Removes the listed axes. Reducing every axis yields a rank-0 tensor.
// Max ties resolve to the lowest flat index.
template <typename T>
Tensor<T> reduce(const Tensor<T>& t, const std::vector<std::size_t>& axes,
                 ReduceKind kind);
template <typename T>
Var<T> reduce(const Var<T>& t, const std::vector<std::size_t>& axes, ReduceKind kind);

template <typename T>
Var<T> sum_all(const Var<T>& t);

// sum(t * weights) with constant weights; the usual projection for turning a
// tensor-valued function into a scalar one in gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& t, const Tensor<T>& weights);

}  // namespace spatiodec
