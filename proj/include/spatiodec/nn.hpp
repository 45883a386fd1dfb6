#pragma once

#include <span>
#include <utility>
#include <vector>

#include "spatiodec/geometry.hpp"
#include "spatiodec/tape.hpp"
#include "spatiodec/tensor.hpp"

namespace spatiodec {

/// Weights [c_out, c_in, k_h, k_w, k_d], bias [c_out]. Without `has_bias`
/// the bias stays a fixed zero vector (convolutions feeding a norm).
template <typename T>
struct Conv3DParams {
  Tensor<T> weights;
  Tensor<T> bias;
  std::size_t spatial_stride = 1;
  Padding padding = Padding::same_zero;
  bool has_bias = true;
};

/// Per-channel affine parameters plus running statistics for batch
/// normalization. Running statistics are updated in train mode only.
template <typename T>
struct NormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  static NormParams identity(std::size_t channels) {
    return {Tensor<T>::full({channels}, T{1}), Tensor<T>::zeros({channels}),
            Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T{1})};
  }
};

// Running statistics and hyperparameters of one normalization layer; the
// trainable gamma/beta travel separately as tape values.
template <typename T>
struct NormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
};

/// Flat input offsets of each pooled maximum, used to route gradients.
using ArgIndices = std::vector<std::size_t>;

// --- 3D convolution: x [n, c_in, H, W, D] -> [n, c_out, H', W', D'] ---------

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
              std::size_t stride, Padding padding);

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3DParams<T>& p);

// --- pooling / resampling --------------------------------------------------

template <typename T>
std::pair<Tensor<T>, ArgIndices> maxpool3d(const Tensor<T>& x, const Extents3& window,
                                           const Extents3& stride);
template <typename T>
Var<T> maxpool3d(const Var<T>& x, const Extents3& window, const Extents3& stride);

// Corner-aligned trilinear interpolation to `target` spatial extents.
template <typename T>
Tensor<T> trilinear_upsample(const Tensor<T>& x, const Extents3& target);
template <typename T>
Var<T> trilinear_upsample(const Var<T>& x, const Extents3& target);

// --- dense / activations ---------------------------------------------------

// y = x W^T + b with x [n, f_in], W [f_out, f_in], b [f_out].
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weights, const Var<T>& bias);
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);

enum class Activation { relu, sigmoid };

template <typename T>
Var<T> activate(Activation kind, const Var<T>& x);
template <typename T>
Tensor<T> activate(Activation kind, const Tensor<T>& x);

template <typename T>
Var<T> relu(const Var<T>& x) { return activate(Activation::relu, x); }
template <typename T>
Var<T> sigmoid(const Var<T>& x) { return activate(Activation::sigmoid, x); }

// --- normalization ---------------------------------------------------------

// Batch normalization over every axis except axis 1 (channels).
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  NormState<T> state, Mode mode);
template <typename T>
Tensor<T> norm(const Tensor<T>& x, NormParams<T>& p, Mode mode);

// --- losses ----------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var<T> softmax_ce(const Var<T>& logits, std::span<const int> labels);

template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

// Mean over the three trailing spatial axes: [n, c, H, W, D] -> [n, c].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

Extents3 spatial_extents(const Shape& shape);

}  // namespace spatiodec
