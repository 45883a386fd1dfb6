#include "spatiodec/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "conv_kernels.hpp"
#include "spatiodec/ops.hpp"
#include "spatiodec/parallel.hpp"

namespace spatiodec {

Extents3 spatial_extents(const Shape& shape) {
  if (shape.size() < 3) throw ShapeError("expected at least 3 spatial axes");
  const std::size_t r = shape.size();
  return {shape[r - 3], shape[r - 2], shape[r - 1]};
}

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(s));
  }
}

struct AxisInterp {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

AxisInterp corner_aligned(std::size_t in, std::size_t out) {
  AxisInterp a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    // Integer numerator keeps the aligned corners exact.
    const double src = out > 1 ? static_cast<double>(o * (in - 1)) / static_cast<double>(out - 1)
                               : static_cast<double>(in - 1) / 2.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    a.lo[o] = lo;
    a.hi[o] = std::min(lo + 1, in - 1);
    a.frac[o] = src - static_cast<double>(lo);
  }
  return a;
}

template <typename T>
T stable_sigmoid(T v) {
  T s;
  if (v >= 0) {
    s = T{1} / (T{1} + std::exp(-v));
  } else {
    const T e = std::exp(v);
    s = e / (T{1} + e);
  }
  // Keep the result strictly inside (0, 1) even where exp saturates.
  return std::clamp(s, std::numeric_limits<T>::min(), std::nextafter(T{1}, T{0}));
}

template <typename T>
Var<T> to_var(Tape<T>& tape, const Tensor<T>& t) {
  return tape.constant(t);
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
              std::size_t stride, Padding padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  require_rank(xs, 5, "conv3d input");
  require_rank(ws, 5, "conv3d weights");
  if (ws[1] != xs[1]) {
    throw ShapeError("conv3d: weights expect " + std::to_string(ws[1]) +
                     " input channels, input has " + std::to_string(xs[1]));
  }
  if (bias.shape() != Shape{ws[0]}) {
    throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) + " != [" +
                     std::to_string(ws[0]) + "]");
  }
  const Extents3 kernel{ws[2], ws[3], ws[4]};
  if (padding == Padding::same_zero &&
      (kernel.h % 2 == 0 || kernel.w % 2 == 0 || kernel.d % 2 == 0)) {
    throw ShapeError("conv3d: same_zero padding requires odd kernel extents");
  }
  const std::size_t n = xs[0];
  const std::size_t cin = xs[1];
  const std::size_t cout = ws[0];
  const auto geom = std::make_shared<detail::ConvGeometry>(
      detail::make_geometry({xs[2], xs[3], xs[4]}, kernel, stride, padding));
  const std::size_t P = geom->out_voxels();
  const std::size_t K = cin * geom->patch();
  const std::size_t in_vol = geom->in.volume();

  Tensor<T> out({n, cout, geom->out.h, geom->out.w, geom->out.d});
  const T* xp = x.value().ptr();
  const T* wp = weights.value().ptr();
  const T* bp = bias.value().ptr();
  T* op = out.ptr();
  parallel_for(n, [&](std::size_t i) {
    const T* xi = xp + i * cin * in_vol;
    std::vector<T> col;
    const T* colp = xi;
    if (!geom->is_pointwise()) {
      col.resize(K * P);
      detail::im2col(xi, cin, in_vol, *geom, col.data());
      colp = col.data();
    }
    T* oi = op + i * cout * P;
    detail::gemm_forward(wp, cout, K, colp, P, oi, P, false);
    for (std::size_t c = 0; c < cout; ++c) {
      T* row = oi + c * P;
      for (std::size_t q = 0; q < P; ++q) row[q] += bp[c];
    }
  });

  return x.tape().record(
      std::move(out), {x, weights, bias},
      [x, weights, bias, geom, n, cin, cout, P, K, in_vol](Tape<T>& tp, const Tensor<T>& g) {
        const T* gp = g.ptr();
        if (tp.wants_grad(bias)) {
          Tensor<T>& db = tp.grad_buffer(bias.id());
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < cout; ++c) {
              const T* row = gp + (i * cout + c) * P;
              T acc{0};
              for (std::size_t q = 0; q < P; ++q) acc += row[q];
              db[c] += acc;
            }
          }
        }
        const bool need_w = tp.wants_grad(weights);
        const bool need_x = tp.wants_grad(x);
        if (!need_w && !need_x) return;
        T* dxp = need_x ? tp.grad_buffer(x.id()).ptr() : nullptr;
        std::vector<T> partial(need_w ? n * cout * K : 0, T{0});
        const T* xp = x.value().ptr();
        const T* wp = weights.value().ptr();
        parallel_for(n, [&](std::size_t i) {
          const T* xi = xp + i * cin * in_vol;
          const T* gi = gp + i * cout * P;
          std::vector<T> col;
          if (need_w) {
            const T* colp = xi;
            if (!geom->is_pointwise()) {
              col.resize(K * P);
              detail::im2col(xi, cin, in_vol, *geom, col.data());
              colp = col.data();
            }
            detail::gemm_weight_grad(gi, cout, P, P, colp, K, partial.data() + i * cout * K);
          }
          if (need_x) {
            col.resize(K * P);
            detail::gemm_input_grad(wp, cout, K, gi, P, P, col.data());
            T* dxi = dxp + i * cin * in_vol;
            if (geom->is_pointwise()) {
              for (std::size_t q = 0; q < K * P; ++q) dxi[q] += col[q];
            } else {
              detail::col2im_add(col.data(), cin, in_vol, *geom, dxi);
            }
          }
        });
        if (need_w) {
          Tensor<T>& dw = tp.grad_buffer(weights.id());
          for (std::size_t i = 0; i < n; ++i) {
            const T* src = partial.data() + i * cout * K;
            for (std::size_t q = 0; q < cout * K; ++q) dw[q] += src[q];
          }
        }
      });
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3DParams<T>& p) {
  Tape<T> tape(false);
  return conv3d(tape.constant(x), tape.constant(p.weights), tape.constant(p.bias),
                p.spatial_stride, p.padding)
      .value();
}

// ---------------------------------------------------------------------------
// maxpool3d

template <typename T>
std::pair<Tensor<T>, ArgIndices> maxpool3d(const Tensor<T>& x, const Extents3& window,
                                           const Extents3& stride) {
  require_rank(x.shape(), 5, "maxpool3d input");
  const Extents3 in = spatial_extents(x.shape());
  if (window.h > in.h || window.w > in.w || window.d > in.d) {
    throw ShapeError("maxpool3d: window " + window.str() + " larger than input " + in.str());
  }
  if (stride.h == 0 || stride.w == 0 || stride.d == 0 || window.volume() == 0) {
    throw ShapeError("maxpool3d: window and stride must be >= 1");
  }
  const Extents3 out{(in.h - window.h) / stride.h + 1, (in.w - window.w) / stride.w + 1,
                     (in.d - window.d) / stride.d + 1};
  const std::size_t planes = x.extent(0) * x.extent(1);
  Tensor<T> y({x.extent(0), x.extent(1), out.h, out.w, out.d});
  ArgIndices arg(y.numel());
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * in.volume();
    for (std::size_t oh = 0; oh < out.h; ++oh) {
      for (std::size_t ow = 0; ow < out.w; ++ow) {
        for (std::size_t od = 0; od < out.d; ++od, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = base + ((oh * stride.h) * in.w + ow * stride.w) * in.d +
                                 od * stride.d;
          for (std::size_t kh = 0; kh < window.h; ++kh) {
            for (std::size_t kw = 0; kw < window.w; ++kw) {
              const std::size_t row =
                  base + ((oh * stride.h + kh) * in.w + ow * stride.w + kw) * in.d +
                  od * stride.d;
              for (std::size_t kd = 0; kd < window.d; ++kd) {
                // Strict comparison keeps the lowest flat index on ties.
                if (x[row + kd] > best) {
                  best = x[row + kd];
                  best_idx = row + kd;
                }
              }
            }
          }
          y[o] = best;
          arg[o] = best_idx;
        }
      }
    }
  }
  return {std::move(y), std::move(arg)};
}

template <typename T>
Var<T> maxpool3d(const Var<T>& x, const Extents3& window, const Extents3& stride) {
  auto [y, arg] = maxpool3d(x.value(), window, stride);
  auto routes = std::make_shared<ArgIndices>(std::move(arg));
  return x.tape().record(std::move(y), {x}, [x, routes](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& dx = tp.grad_buffer(x.id());
    for (std::size_t o = 0; o < g.numel(); ++o) dx[(*routes)[o]] += g[o];
  });
}

// ---------------------------------------------------------------------------
// trilinear upsample

namespace {

struct TrilinearPlan {
  Extents3 in;
  Extents3 out;
  AxisInterp ah, aw, ad;
};

std::shared_ptr<TrilinearPlan> plan_trilinear(const Shape& shape, const Extents3& target) {
  require_rank(shape, 5, "trilinear_upsample input");
  if (target.volume() == 0) throw ShapeError("trilinear_upsample: target extents must be >= 1");
  auto p = std::make_shared<TrilinearPlan>();
  p->in = spatial_extents(shape);
  p->out = target;
  p->ah = corner_aligned(p->in.h, target.h);
  p->aw = corner_aligned(p->in.w, target.w);
  p->ad = corner_aligned(p->in.d, target.d);
  return p;
}

template <typename T, typename Visit>
void for_each_tap(const TrilinearPlan& p, std::size_t oh, std::size_t ow, std::size_t od,
                  Visit&& visit) {
  const std::size_t hs[2] = {p.ah.lo[oh], p.ah.hi[oh]};
  const std::size_t wsx[2] = {p.aw.lo[ow], p.aw.hi[ow]};
  const std::size_t ds[2] = {p.ad.lo[od], p.ad.hi[od]};
  const T fh[2] = {static_cast<T>(1.0 - p.ah.frac[oh]), static_cast<T>(p.ah.frac[oh])};
  const T fw[2] = {static_cast<T>(1.0 - p.aw.frac[ow]), static_cast<T>(p.aw.frac[ow])};
  const T fd[2] = {static_cast<T>(1.0 - p.ad.frac[od]), static_cast<T>(p.ad.frac[od])};
  for (int a = 0; a < 2; ++a) {
    if (fh[a] == T{0}) continue;
    for (int b = 0; b < 2; ++b) {
      if (fw[b] == T{0}) continue;
      for (int c = 0; c < 2; ++c) {
        if (fd[c] == T{0}) continue;
        visit((hs[a] * p.in.w + wsx[b]) * p.in.d + ds[c], fh[a] * fw[b] * fd[c]);
      }
    }
  }
}

template <typename T>
Tensor<T> trilinear_forward(const Tensor<T>& x, const TrilinearPlan& p) {
  const std::size_t planes = x.extent(0) * x.extent(1);
  Tensor<T> y({x.extent(0), x.extent(1), p.out.h, p.out.w, p.out.d});
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.ptr() + pl * p.in.volume();
    for (std::size_t oh = 0; oh < p.out.h; ++oh) {
      for (std::size_t ow = 0; ow < p.out.w; ++ow) {
        for (std::size_t od = 0; od < p.out.d; ++od, ++o) {
          T acc{0};
          for_each_tap<T>(p, oh, ow, od, [&](std::size_t idx, T wgt) { acc += wgt * src[idx]; });
          y[o] = acc;
        }
      }
    }
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> trilinear_upsample(const Tensor<T>& x, const Extents3& target) {
  return trilinear_forward(x, *plan_trilinear(x.shape(), target));
}

template <typename T>
Var<T> trilinear_upsample(const Var<T>& x, const Extents3& target) {
  auto plan = plan_trilinear(x.shape(), target);
  Tensor<T> y = trilinear_forward(x.value(), *plan);
  return x.tape().record(std::move(y), {x}, [x, plan](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& dx = tp.grad_buffer(x.id());
    const std::size_t planes = dx.extent(0) * dx.extent(1);
    std::size_t o = 0;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      T* dst = dx.ptr() + pl * plan->in.volume();
      for (std::size_t oh = 0; oh < plan->out.h; ++oh) {
        for (std::size_t ow = 0; ow < plan->out.w; ++ow) {
          for (std::size_t od = 0; od < plan->out.d; ++od, ++o) {
            const T go = g[o];
            for_each_tap<T>(*plan, oh, ow, od,
                            [&](std::size_t idx, T wgt) { dst[idx] += wgt * go; });
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// dense

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weights, const Var<T>& bias) {
  require_rank(x.shape(), 2, "dense input");
  require_rank(weights.shape(), 2, "dense weights");
  const std::size_t n = x.shape()[0];
  const std::size_t fin = x.shape()[1];
  const std::size_t fout = weights.shape()[0];
  if (weights.shape()[1] != fin) {
    throw ShapeError("dense: weights " + shape_str(weights.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  if (bias.shape() != Shape{fout}) throw ShapeError("dense: bias shape mismatch");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weights.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> y({n, fout});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < fout; ++o) {
      T acc = bv[o];
      for (std::size_t f = 0; f < fin; ++f) acc += xv[i * fin + f] * wv[o * fin + f];
      y[i * fout + o] = acc;
    }
  }
  return x.tape().record(
      std::move(y), {x, weights, bias},
      [x, weights, bias, n, fin, fout](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = x.value();
        const Tensor<T>& wv = weights.value();
        if (tp.wants_grad(x)) {
          Tensor<T>& dx = tp.grad_buffer(x.id());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < fout; ++o)
              for (std::size_t f = 0; f < fin; ++f)
                dx[i * fin + f] += g[i * fout + o] * wv[o * fin + f];
        }
        if (tp.wants_grad(weights)) {
          Tensor<T>& dw = tp.grad_buffer(weights.id());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < fout; ++o)
              for (std::size_t f = 0; f < fin; ++f)
                dw[o * fin + f] += g[i * fout + o] * xv[i * fin + f];
        }
        if (tp.wants_grad(bias)) {
          Tensor<T>& db = tp.grad_buffer(bias.id());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < fout; ++o) db[o] += g[i * fout + o];
        }
      });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  Tape<T> tape(false);
  return dense(to_var(tape, x), to_var(tape, weights), to_var(tape, bias)).value();
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> activate(Activation kind, const Tensor<T>& x) {
  Tensor<T> y = x;
  if (kind == Activation::relu) {
    for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  } else {
    for (auto& v : y.data()) v = stable_sigmoid(v);
  }
  return y;
}

template <typename T>
Var<T> activate(Activation kind, const Var<T>& x) {
  Tensor<T> y = activate(kind, x.value());
  Tape<T>& tape = x.tape();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(y), {x}, [kind, x, out_id](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& dx = tp.grad_buffer(x.id());
    if (kind == Activation::relu) {
      const Tensor<T>& xv = x.value();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (xv[i] > T{0}) dx[i] += g[i];
      }
    } else {
      const Tensor<T>& s = tp.value(out_id);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * s[i] * (T{1} - s[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// batch normalization

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  NormState<T> state, Mode mode) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("norm: input needs a channel axis");
  const std::size_t n = xs[0];
  const std::size_t c = xs[1];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("norm: parameter shape does not match " + std::to_string(c) +
                     " channels");
  }
  if (!state.running_mean || !state.running_var ||
      state.running_mean->shape() != Shape{c} || state.running_var->shape() != Shape{c}) {
    throw ShapeError("norm: running statistics do not match channel count");
  }
  if (!(state.epsilon > T{0})) throw ContractError("norm: epsilon must be positive");
  std::size_t inner = 1;
  for (std::size_t k = 2; k < xs.size(); ++k) inner *= xs[k];
  const std::size_t count = n * inner;
  if (mode == Mode::train && count < 2) {
    throw ContractError("norm: degenerate batch (one value per channel) in train mode");
  }

  const Tensor<T>& xv = x.value();
  auto mean = std::make_shared<std::vector<T>>(c, T{0});
  auto inv_std = std::make_shared<std::vector<T>>(c, T{0});
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.ptr() + (i * c + ch) * inner;
        for (std::size_t q = 0; q < inner; ++q) s += p[q];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.ptr() + (i * c + ch) * inner;
        for (std::size_t q = 0; q < inner; ++q) {
          const double d = p[q] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      (*mean)[ch] = static_cast<T>(mu);
      (*inv_std)[ch] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      const double unbiased = ss / static_cast<double>(count - 1);
      T& rm = (*state.running_mean)[ch];
      T& rv = (*state.running_var)[ch];
      rm = static_cast<T>((1.0 - state.momentum) * rm + state.momentum * mu);
      rv = static_cast<T>((1.0 - state.momentum) * rv + state.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*mean)[ch] = (*state.running_mean)[ch];
      (*inv_std)[ch] = T{1} / std::sqrt((*state.running_var)[ch] + state.epsilon);
    }
  }

  auto xhat = std::make_shared<Tensor<T>>(xs);
  Tensor<T> y(xs);
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * inner;
      const T mu = (*mean)[ch];
      const T is = (*inv_std)[ch];
      for (std::size_t q = 0; q < inner; ++q) {
        const T h = (xv[off + q] - mu) * is;
        (*xhat)[off + q] = h;
        y[off + q] = gv[ch] * h + bv[ch];
      }
    }
  }

  return x.tape().record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, mode, n, c, inner, count](Tape<T>& tp,
                                                                const Tensor<T>& g) {
        std::vector<T> sum_g(c, T{0});
        std::vector<T> sum_gh(c, T{0});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * inner;
            T a{0};
            T b{0};
            for (std::size_t q = 0; q < inner; ++q) {
              a += g[off + q];
              b += g[off + q] * (*xhat)[off + q];
            }
            sum_g[ch] += a;
            sum_gh[ch] += b;
          }
        }
        if (tp.wants_grad(gamma)) {
          Tensor<T>& dg = tp.grad_buffer(gamma.id());
          for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_gh[ch];
        }
        if (tp.wants_grad(beta)) {
          Tensor<T>& db = tp.grad_buffer(beta.id());
          for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_g[ch];
        }
        if (!tp.wants_grad(x)) return;
        Tensor<T>& dx = tp.grad_buffer(x.id());
        const Tensor<T>& gv = gamma.value();
        const T inv_count = T{1} / static_cast<T>(count);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * inner;
            const T k = gv[ch] * (*inv_std)[ch];
            if (mode == Mode::train) {
              const T mg = sum_g[ch] * inv_count;
              const T mgh = sum_gh[ch] * inv_count;
              for (std::size_t q = 0; q < inner; ++q) {
                dx[off + q] += k * (g[off + q] - mg - (*xhat)[off + q] * mgh);
              }
            } else {
              for (std::size_t q = 0; q < inner; ++q) dx[off + q] += k * g[off + q];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, NormParams<T>& p, Mode mode) {
  Tape<T> tape(false);
  NormState<T> st{&p.running_mean, &p.running_var, p.momentum, p.epsilon};
  return batch_norm(tape.constant(x), tape.constant(p.gamma), tape.constant(p.beta), st, mode)
      .value();
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax input");
  const std::size_t n = logits.extent(0);
  const std::size_t C = logits.extent(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * C;
    const T mx = *std::max_element(row, row + C);
    T z{0};
    for (std::size_t k = 0; k < C; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < C; ++k) p[i * C + k] = std::exp(row[k] - mx) / z;
  }
  return p;
}

template <typename T>
Var<T> softmax_ce(const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_ce logits");
  const std::size_t n = logits.shape()[0];
  const std::size_t C = logits.shape()[1];
  if (labels.size() != n) throw ShapeError("softmax_ce: label count != batch size");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) {
      throw LabelError("label " + std::to_string(l) + " outside [0, " + std::to_string(C) +
                       ")");
    }
  }
  const Tensor<T>& z = logits.value();
  auto probs = std::make_shared<Tensor<T>>(softmax_rows(z));
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.ptr() + i * C;
    const T mx = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t k = 0; k < C; ++k) s += std::exp(static_cast<double>(row[k] - mx));
    loss += -(static_cast<double>(row[(*lab)[i]] - mx) - std::log(s));
  }
  loss /= static_cast<double>(n);
  return logits.tape().record(
      Tensor<T>::scalar(static_cast<T>(loss)), {logits},
      [logits, probs, lab, n, C](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& dz = tp.grad_buffer(logits.id());
        const T s = g[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < C; ++k) {
            const T onehot = static_cast<int>(k) == (*lab)[i] ? T{1} : T{0};
            dz[i * C + k] += s * ((*probs)[i * C + k] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const std::size_t n = pred.value().numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
    acc += d * d;
  }
  return pred.tape().record(
      Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {pred, target},
      [pred, target, n](Tape<T>& tp, const Tensor<T>& g) {
        const T s = T{2} * g[0] / static_cast<T>(n);
        const bool dp = tp.wants_grad(pred);
        const bool dt = tp.wants_grad(target);
        Tensor<T>* gp = dp ? &tp.grad_buffer(pred.id()) : nullptr;
        Tensor<T>* gt = dt ? &tp.grad_buffer(target.id()) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const T d = pred.value()[i] - target.value()[i];
          if (gp) (*gp)[i] += s * d;
          if (gt) (*gt)[i] -= s * d;
        }
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 5, "global_avg_pool input");
  return reduce(x, {2, 3, 4}, ReduceKind::mean);
}

#define SPATIODEC_INSTANTIATE(T)                                                          \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,        \
                         Padding);                                                        \
  template Tensor<T> conv3d(const Tensor<T>&, const Conv3DParams<T>&);                    \
  template std::pair<Tensor<T>, ArgIndices> maxpool3d(const Tensor<T>&, const Extents3&,  \
                                                      const Extents3&);                   \
  template Var<T> maxpool3d(const Var<T>&, const Extents3&, const Extents3&);             \
  template Tensor<T> trilinear_upsample(const Tensor<T>&, const Extents3&);               \
  template Var<T> trilinear_upsample(const Var<T>&, const Extents3&);                     \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Var<T> activate(Activation, const Var<T>&);                                    \
  template Tensor<T> activate(Activation, const Tensor<T>&);                              \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, NormState<T>,   \
                             Mode);                                                       \
  template Tensor<T> norm(const Tensor<T>&, NormParams<T>&, Mode);                        \
  template Var<T> softmax_ce(const Var<T>&, std::span<const int>);                        \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                      \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                      \
  template Var<T> global_avg_pool(const Var<T>&);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
