#pragma once

#include "spatiodec/geometry.hpp"
#include "spatiodec/tape.hpp"
#include "spatiodec/tensor.hpp"

namespace spatiodec {

/// Spatiotemporal kernel: weights [c_out, c_in, k_t, k_h, k_w, k_d], bias [c_out].
template <typename T>
struct Conv4DKernel {
  Tensor<T> weights;
  Tensor<T> bias;
};

struct Conv4DConfig {
  std::size_t temporal_stride = 2;
  std::size_t spatial_stride = 2;
  friend bool operator==(const Conv4DConfig&, const Conv4DConfig&) = default;
};

// Number of output frames: floor((frames - k_t) / s_t) + 1 (no temporal padding).
std::size_t conv4d_out_frames(std::size_t frames, std::size_t k_t, std::size_t s_t);

/// 4D convolution of x [n, c_in, l, H, W, D] realised as a double loop over
/// temporal taps and output frames, each step a 3D convolution of one input
/// frame with one temporal slice of the kernel. Spatial padding is same_zero,
/// temporal padding is valid. Output [n, c_out, T_out, H', W', D'].
template <typename T>
Var<T> conv4d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
              const Conv4DConfig& cfg);

template <typename T>
Tensor<T> conv4d(const Tensor<T>& x, const Conv4DKernel<T>& k, const Conv4DConfig& cfg);

/// Direct summation over (c_in, k_t, k_h, k_w, k_d) per output cell, with no
/// frame decomposition. Reference for conv4d.
template <typename T>
Tensor<T> conv4d_oracle(const Tensor<T>& x, const Conv4DKernel<T>& k, const Conv4DConfig& cfg);

/// [n, c, T, H, W, D] -> [n, c*T, H, W, D]; new channel = c_idx * T + t_idx.
template <typename T>
Var<T> temporal_flatten(const Var<T>& y);
template <typename T>
Tensor<T> temporal_flatten(const Tensor<T>& y);

}  // namespace spatiodec
