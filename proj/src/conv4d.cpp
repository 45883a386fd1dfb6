#include "spatiodec/conv4d.hpp"

#include <memory>
#include <vector>

#include "conv_kernels.hpp"
#include "spatiodec/ops.hpp"
#include "spatiodec/parallel.hpp"

namespace spatiodec {

std::size_t conv4d_out_frames(std::size_t frames, std::size_t k_t, std::size_t s_t) {
  if (k_t == 0 || s_t == 0) throw ShapeError("conv4d: k_t and s_t must be >= 1");
  if (frames < k_t) {
    throw ShapeError("conv4d: temporal undersize, " + std::to_string(frames) +
                     " frames < k_t = " + std::to_string(k_t));
  }
  return (frames - k_t) / s_t + 1;
}

namespace {

struct Conv4DShape {
  std::size_t n, cin, frames, cout, kt, t_out;
  detail::ConvGeometry geom;
  std::size_t vol() const { return geom.in.volume(); }
  std::size_t P() const { return geom.out_voxels(); }
  std::size_t K() const { return cin * geom.patch(); }
  // Frames actually touched by some (tap, output frame) pair.
  std::size_t frames_used(std::size_t s_t) const { return (t_out - 1) * s_t + kt; }
};

Conv4DShape check_conv4d(const Shape& xs, const Shape& ws, const Shape& bs,
                         const Conv4DConfig& cfg) {
  if (xs.size() != 6) throw ShapeError("conv4d: input must be rank 6, got " + shape_str(xs));
  if (ws.size() != 6) throw ShapeError("conv4d: weights must be rank 6, got " + shape_str(ws));
  if (ws[1] != xs[1]) {
    throw ShapeError("conv4d: weights expect " + std::to_string(ws[1]) +
                     " input channels, input has " + std::to_string(xs[1]));
  }
  if (bs != Shape{ws[0]}) throw ShapeError("conv4d: bias shape mismatch");
  if (cfg.spatial_stride == 0) throw ShapeError("conv4d: spatial stride must be >= 1");
  const Extents3 kernel{ws[3], ws[4], ws[5]};
  if (kernel.h % 2 == 0 || kernel.w % 2 == 0 || kernel.d % 2 == 0) {
    throw ShapeError("conv4d: spatial kernel extents must be odd");
  }
  Conv4DShape s{xs[0], xs[1], xs[2], ws[0], ws[2],
                conv4d_out_frames(xs[2], ws[2], cfg.temporal_stride), {}};
  s.geom = detail::make_geometry({xs[3], xs[4], xs[5]}, kernel, cfg.spatial_stride,
                                 Padding::same_zero);
  return s;
}

// Rearranges weights into one [c_out, c_in * patch] matrix per temporal tap.
template <typename T>
std::vector<T> split_taps(const Tensor<T>& w, const Conv4DShape& s) {
  const std::size_t patch = s.geom.patch();
  const std::size_t K = s.K();
  std::vector<T> taps(s.kt * s.cout * K);
  for (std::size_t co = 0; co < s.cout; ++co)
    for (std::size_t ci = 0; ci < s.cin; ++ci)
      for (std::size_t i = 0; i < s.kt; ++i)
        for (std::size_t q = 0; q < patch; ++q)
          taps[(i * s.cout + co) * K + ci * patch + q] =
              w[((co * s.cin + ci) * s.kt + i) * patch + q];
  return taps;
}

}  // namespace

template <typename T>
Var<T> conv4d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
              const Conv4DConfig& cfg) {
  auto s = std::make_shared<Conv4DShape>(
      check_conv4d(x.shape(), weights.shape(), bias.shape(), cfg));
  const std::size_t st = cfg.temporal_stride;
  const std::size_t P = s->P();
  const std::size_t K = s->K();
  const std::size_t vol = s->vol();
  const std::size_t used = s->frames_used(st);
  const std::vector<T> taps = split_taps(weights.value(), *s);

  Tensor<T> out({s->n, s->cout, s->t_out, s->geom.out.h, s->geom.out.w, s->geom.out.d});
  const T* xp = x.value().ptr();
  const T* bp = bias.value().ptr();
  T* op = out.ptr();
  parallel_for(s->n, [&](std::size_t b) {
    const T* xb = xp + b * s->cin * s->frames * vol;
    // Channel ci of frame f lives at xb + ci * frames * vol + f * vol.
    std::vector<T> cols(used * K * P);
    for (std::size_t f = 0; f < used; ++f) {
      detail::im2col(xb + f * vol, s->cin, s->frames * vol, s->geom, cols.data() + f * K * P);
    }
    T* ob = op + b * s->cout * s->t_out * P;
    for (std::size_t j = 0; j < s->t_out; ++j) {
      T* oj = ob + j * P;
      for (std::size_t i = 0; i < s->kt; ++i) {
        const std::size_t f = j * st + i;
        detail::gemm_forward(taps.data() + i * s->cout * K, s->cout, K,
                             cols.data() + f * K * P, P, oj, s->t_out * P, i > 0);
      }
      for (std::size_t co = 0; co < s->cout; ++co) {
        T* row = oj + co * s->t_out * P;
        for (std::size_t q = 0; q < P; ++q) row[q] += bp[co];
      }
    }
  });

  return x.tape().record(
      std::move(out), {x, weights, bias},
      [x, weights, bias, s, st](Tape<T>& tp, const Tensor<T>& g) {
        const std::size_t P = s->P();
        const std::size_t K = s->K();
        const std::size_t vol = s->vol();
        const std::size_t used = s->frames_used(st);
        const std::size_t row_stride = s->t_out * P;
        const T* gp = g.ptr();
        if (tp.wants_grad(bias)) {
          Tensor<T>& db = tp.grad_buffer(bias.id());
          for (std::size_t b = 0; b < s->n; ++b)
            for (std::size_t co = 0; co < s->cout; ++co) {
              const T* row = gp + (b * s->cout + co) * row_stride;
              T acc{0};
              for (std::size_t q = 0; q < row_stride; ++q) acc += row[q];
              db[co] += acc;
            }
        }
        const bool need_w = tp.wants_grad(weights);
        const bool need_x = tp.wants_grad(x);
        if (!need_w && !need_x) return;
        const std::vector<T> taps = split_taps(weights.value(), *s);
        const std::size_t tap_size = s->cout * K;
        std::vector<T> partial(need_w ? s->n * s->kt * tap_size : 0, T{0});
        T* dxp = need_x ? tp.grad_buffer(x.id()).ptr() : nullptr;
        const T* xp = x.value().ptr();
        parallel_for(s->n, [&](std::size_t b) {
          const T* xb = xp + b * s->cin * s->frames * vol;
          const T* gb = gp + b * s->cout * row_stride;
          if (need_w) {
            std::vector<T> cols(used * K * P);
            for (std::size_t f = 0; f < used; ++f) {
              detail::im2col(xb + f * vol, s->cin, s->frames * vol, s->geom,
                             cols.data() + f * K * P);
            }
            T* pb = partial.data() + b * s->kt * tap_size;
            for (std::size_t j = 0; j < s->t_out; ++j)
              for (std::size_t i = 0; i < s->kt; ++i)
                detail::gemm_weight_grad(gb + j * P, s->cout, P, row_stride,
                                         cols.data() + (j * st + i) * K * P, K,
                                         pb + i * tap_size);
          }
          if (need_x) {
            std::vector<T> dcols(used * K * P, T{0});
            std::vector<T> tmp(K * P);
            for (std::size_t j = 0; j < s->t_out; ++j)
              for (std::size_t i = 0; i < s->kt; ++i) {
                detail::gemm_input_grad(taps.data() + i * tap_size, s->cout, K, gb + j * P, P,
                                        row_stride, tmp.data());
                T* dst = dcols.data() + (j * st + i) * K * P;
                for (std::size_t q = 0; q < K * P; ++q) dst[q] += tmp[q];
              }
            T* dxb = dxp + b * s->cin * s->frames * vol;
            for (std::size_t f = 0; f < used; ++f) {
              detail::col2im_add(dcols.data() + f * K * P, s->cin, s->frames * vol, s->geom,
                                 dxb + f * vol);
            }
          }
        });
        if (need_w) {
          Tensor<T>& dw = tp.grad_buffer(weights.id());
          const std::size_t patch = s->geom.patch();
          for (std::size_t b = 0; b < s->n; ++b) {
            const T* pb = partial.data() + b * s->kt * tap_size;
            for (std::size_t i = 0; i < s->kt; ++i)
              for (std::size_t co = 0; co < s->cout; ++co)
                for (std::size_t ci = 0; ci < s->cin; ++ci)
                  for (std::size_t q = 0; q < patch; ++q)
                    dw[((co * s->cin + ci) * s->kt + i) * patch + q] +=
                        pb[i * tap_size + co * K + ci * patch + q];
          }
        }
      });
}

template <typename T>
Tensor<T> conv4d(const Tensor<T>& x, const Conv4DKernel<T>& k, const Conv4DConfig& cfg) {
  Tape<T> tape(false);
  return conv4d(tape.constant(x), tape.constant(k.weights), tape.constant(k.bias), cfg).value();
}

template <typename T>
Tensor<T> conv4d_oracle(const Tensor<T>& x, const Conv4DKernel<T>& k, const Conv4DConfig& cfg) {
  const Conv4DShape s = check_conv4d(x.shape(), k.weights.shape(), k.bias.shape(), cfg);
  const auto& g = s.geom;
  Tensor<T> out({s.n, s.cout, s.t_out, g.out.h, g.out.w, g.out.d});
  const auto ss = static_cast<std::ptrdiff_t>(cfg.spatial_stride);
  const auto H = static_cast<std::ptrdiff_t>(g.in.h);
  const auto W = static_cast<std::ptrdiff_t>(g.in.w);
  const auto D = static_cast<std::ptrdiff_t>(g.in.d);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t co = 0; co < s.cout; ++co)
      for (std::size_t j = 0; j < s.t_out; ++j)
        for (std::size_t oh = 0; oh < g.out.h; ++oh)
          for (std::size_t ow = 0; ow < g.out.w; ++ow)
            for (std::size_t od = 0; od < g.out.d; ++od) {
              T acc = k.bias[co];
              for (std::size_t ci = 0; ci < s.cin; ++ci)
                for (std::size_t i = 0; i < s.kt; ++i) {
                  const std::size_t t = j * cfg.temporal_stride + i;
                  for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * ss +
                                              static_cast<std::ptrdiff_t>(kh) -
                                              static_cast<std::ptrdiff_t>(g.pad_lo.h);
                    if (ih < 0 || ih >= H) continue;
                    for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
                      const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * ss +
                                                static_cast<std::ptrdiff_t>(kw) -
                                                static_cast<std::ptrdiff_t>(g.pad_lo.w);
                      if (iw < 0 || iw >= W) continue;
                      for (std::size_t kd = 0; kd < g.kernel.d; ++kd) {
                        const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * ss +
                                                  static_cast<std::ptrdiff_t>(kd) -
                                                  static_cast<std::ptrdiff_t>(g.pad_lo.d);
                        if (id < 0 || id >= D) continue;
                        acc += k.weights.at({co, ci, i, kh, kw, kd}) *
                               x.at({b, ci, t, static_cast<std::size_t>(ih),
                                     static_cast<std::size_t>(iw),
                                     static_cast<std::size_t>(id)});
                      }
                    }
                  }
                }
              out.at({b, co, j, oh, ow, od}) = acc;
            }
  return out;
}

template <typename T>
Var<T> temporal_flatten(const Var<T>& y) {
  const Shape& s = y.shape();
  if (s.size() != 6) throw ShapeError("temporal_flatten: expected rank 6, got " + shape_str(s));
  return reshape(y, {s[0], s[1] * s[2], s[3], s[4], s[5]});
}

template <typename T>
Tensor<T> temporal_flatten(const Tensor<T>& y) {
  const Shape& s = y.shape();
  if (s.size() != 6) throw ShapeError("temporal_flatten: expected rank 6, got " + shape_str(s));
  return y.reshape({s[0], s[1] * s[2], s[3], s[4], s[5]});
}

#define SPATIODEC_INSTANTIATE(T)                                                       \
  template Var<T> conv4d(const Var<T>&, const Var<T>&, const Var<T>&,                  \
                         const Conv4DConfig&);                                         \
  template Tensor<T> conv4d(const Tensor<T>&, const Conv4DKernel<T>&,                  \
                            const Conv4DConfig&);                                      \
  template Tensor<T> conv4d_oracle(const Tensor<T>&, const Conv4DKernel<T>&,           \
                                   const Conv4DConfig&);                               \
  template Var<T> temporal_flatten(const Var<T>&);                                     \
  template Tensor<T> temporal_flatten(const Tensor<T>&);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
