#pragma once

// im2col / GEMM building blocks shared by the 3D and 4D convolutions.

#include <cstddef>
#include <vector>

#include "spatiodec/geometry.hpp"

namespace spatiodec::detail {

struct ConvGeometry {
  Extents3 in;
  Extents3 out;
  Extents3 kernel;
  std::size_t stride = 1;
  Extents3 pad_lo{0, 0, 0};

  std::size_t patch() const { return kernel.volume(); }
  std::size_t out_voxels() const { return out.volume(); }
  // A 1x1x1 stride-1 kernel reads the input directly as its column matrix.
  bool is_pointwise() const { return kernel.volume() == 1 && stride == 1; }
};

ConvGeometry make_geometry(const Extents3& in, const Extents3& kernel, std::size_t stride,
                           Padding padding);

// Channel c of the input starts at x + c * channel_stride; each channel is a
// contiguous H*W*D block. col is [channels * patch, out_voxels].
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t channel_stride,
            const ConvGeometry& g, T* col);

// Adjoint of im2col: accumulates col back into dx.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t channel_stride,
                const ConvGeometry& g, T* dx);

// out[co, :] (+)= W[co, :] * col, with output rows spaced out_row_stride apart.
template <typename T>
void gemm_forward(const T* w, std::size_t cout, std::size_t k, const T* col, std::size_t p,
                  T* out, std::size_t out_row_stride, bool accumulate);

// dW[cout, k] += dout[cout, p] * col[k, p]^T.
template <typename T>
void gemm_weight_grad(const T* dout, std::size_t cout, std::size_t p,
                      std::size_t dout_row_stride, const T* col, std::size_t k, T* dw);

// dcol[k, p] = W[cout, k]^T * dout[cout, p].
template <typename T>
void gemm_input_grad(const T* w, std::size_t cout, std::size_t k, const T* dout,
                     std::size_t p, std::size_t dout_row_stride, T* dcol);

}  // namespace spatiodec::detail
