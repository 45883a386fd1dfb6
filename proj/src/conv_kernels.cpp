#include "conv_kernels.hpp"

#include <Eigen/Core>

namespace spatiodec::detail {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace

ConvGeometry make_geometry(const Extents3& in, const Extents3& kernel, std::size_t stride,
                           Padding padding) {
  ConvGeometry g;
  g.in = in;
  g.kernel = kernel;
  g.stride = stride;
  g.out = conv_out_extents(in, kernel, stride, padding);
  g.pad_lo = {conv_pad_lo(in.h, kernel.h, stride, padding),
              conv_pad_lo(in.w, kernel.w, stride, padding),
              conv_pad_lo(in.d, kernel.d, stride, padding)};
  return g;
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t channel_stride,
            const ConvGeometry& g, T* col) {
  const std::size_t P = g.out_voxels();
  const auto H = static_cast<std::ptrdiff_t>(g.in.h);
  const auto W = static_cast<std::ptrdiff_t>(g.in.w);
  const auto D = static_cast<std::ptrdiff_t>(g.in.d);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  T* row = col;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * channel_stride;
    for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
        for (std::size_t kd = 0; kd < g.kernel.d; ++kd, row += P) {
          T* dst = row;
          for (std::size_t oh = 0; oh < g.out.h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s +
                                      static_cast<std::ptrdiff_t>(kh) -
                                      static_cast<std::ptrdiff_t>(g.pad_lo.h);
            for (std::size_t ow = 0; ow < g.out.w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * s +
                                        static_cast<std::ptrdiff_t>(kw) -
                                        static_cast<std::ptrdiff_t>(g.pad_lo.w);
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
                for (std::size_t od = 0; od < g.out.d; ++od) *dst++ = T{0};
                continue;
              }
              const T* src = xc + (ih * W + iw) * D;
              for (std::size_t od = 0; od < g.out.d; ++od) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * s +
                                          static_cast<std::ptrdiff_t>(kd) -
                                          static_cast<std::ptrdiff_t>(g.pad_lo.d);
                *dst++ = (id >= 0 && id < D) ? src[id] : T{0};
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t channel_stride,
                const ConvGeometry& g, T* dx) {
  const std::size_t P = g.out_voxels();
  const auto H = static_cast<std::ptrdiff_t>(g.in.h);
  const auto W = static_cast<std::ptrdiff_t>(g.in.w);
  const auto D = static_cast<std::ptrdiff_t>(g.in.d);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const T* row = col;
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = dx + c * channel_stride;
    for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
        for (std::size_t kd = 0; kd < g.kernel.d; ++kd, row += P) {
          const T* src = row;
          for (std::size_t oh = 0; oh < g.out.h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s +
                                      static_cast<std::ptrdiff_t>(kh) -
                                      static_cast<std::ptrdiff_t>(g.pad_lo.h);
            for (std::size_t ow = 0; ow < g.out.w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * s +
                                        static_cast<std::ptrdiff_t>(kw) -
                                        static_cast<std::ptrdiff_t>(g.pad_lo.w);
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
                src += g.out.d;
                continue;
              }
              T* dst = xc + (ih * W + iw) * D;
              for (std::size_t od = 0; od < g.out.d; ++od, ++src) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * s +
                                          static_cast<std::ptrdiff_t>(kd) -
                                          static_cast<std::ptrdiff_t>(g.pad_lo.d);
                if (id >= 0 && id < D) dst[id] += *src;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void gemm_forward(const T* w, std::size_t cout, std::size_t k, const T* col, std::size_t p,
                  T* out, std::size_t out_row_stride, bool accumulate) {
  ConstMap<T> wm(w, cout, k, Eigen::OuterStride<>(k));
  ConstMap<T> cm(col, k, p, Eigen::OuterStride<>(p));
  MutMap<T> om(out, cout, p, Eigen::OuterStride<>(out_row_stride));
  if (accumulate) {
    om.noalias() += wm * cm;
  } else {
    om.noalias() = wm * cm;
  }
}

template <typename T>
void gemm_weight_grad(const T* dout, std::size_t cout, std::size_t p,
                      std::size_t dout_row_stride, const T* col, std::size_t k, T* dw) {
  ConstMap<T> gm(dout, cout, p, Eigen::OuterStride<>(dout_row_stride));
  ConstMap<T> cm(col, k, p, Eigen::OuterStride<>(p));
  MutMap<T> dm(dw, cout, k, Eigen::OuterStride<>(k));
  dm.noalias() += gm * cm.transpose();
}

template <typename T>
void gemm_input_grad(const T* w, std::size_t cout, std::size_t k, const T* dout,
                     std::size_t p, std::size_t dout_row_stride, T* dcol) {
  ConstMap<T> wm(w, cout, k, Eigen::OuterStride<>(k));
  ConstMap<T> gm(dout, cout, p, Eigen::OuterStride<>(dout_row_stride));
  MutMap<T> dm(dcol, k, p, Eigen::OuterStride<>(p));
  dm.noalias() = wm.transpose() * gm;
}

#define SPATIODEC_INSTANTIATE(T)                                                         \
  template void im2col<T>(const T*, std::size_t, std::size_t, const ConvGeometry&, T*);  \
  template void col2im_add<T>(const T*, std::size_t, std::size_t, const ConvGeometry&,   \
                              T*);                                                       \
  template void gemm_forward<T>(const T*, std::size_t, std::size_t, const T*,            \
                                std::size_t, T*, std::size_t, bool);                     \
  template void gemm_weight_grad<T>(const T*, std::size_t, std::size_t, std::size_t,     \
                                    const T*, std::size_t, T*);                          \
  template void gemm_input_grad<T>(const T*, std::size_t, std::size_t, const T*,         \
                                   std::size_t, std::size_t, T*);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec::detail
