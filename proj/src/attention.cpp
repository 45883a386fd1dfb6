#include "spatiodec/attention.hpp"

#include <cmath>

#include "spatiodec/ops.hpp"

namespace spatiodec {

namespace {

template <typename T>
Conv3DParams<T> make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          Rng& rng) {
  Conv3DParams<T> c;
  c.weights = he_normal<T>({c_out, c_in, k, k, k}, c_in * k * k * k, rng);
  c.bias = Tensor<T>::zeros({c_out});
  c.spatial_stride = stride;
  c.padding = Padding::same_zero;
  return c;
}

template <typename T>
Var<T> apply_conv(const Var<T>& x, const Conv3DParams<T>& c, const ParamBinder<T>& bind) {
  Var<T> b = c.has_bias ? bind(c.bias) : bind.tape().constant(c.bias);
  return conv3d(x, bind(c.weights), b, c.spatial_stride, c.padding);
}

template <typename T>
Var<T> apply_norm(const Var<T>& x, NormParams<T>& n, const ParamBinder<T>& bind, Mode mode) {
  NormState<T> st{&n.running_mean, &n.running_var, n.momentum, n.epsilon};
  return batch_norm(x, bind(n.gamma), bind(n.beta), st, mode);
}

}  // namespace

void check_branch_depth(const Extents3& in, std::size_t depth, std::size_t stage) {
  if (depth == 0) throw DepthError("stage " + std::to_string(stage) + ": pooling depth must be >= 1");
  const std::size_t need = std::size_t{1} << depth;
  if (in.h < need || in.w < need || in.d < need) {
    throw DepthError("stage " + std::to_string(stage) + ": extents " + in.str() +
                     " too small for " + std::to_string(depth) + " pooling rounds");
  }
}

template <typename T>
ResUnitParams<T> make_res_unit(std::size_t c_in, std::size_t c_out, std::size_t entry_stride,
                               Rng& rng) {
  if (entry_stride != 1 && entry_stride != 2) throw ConfigError("entry stride must be 1 or 2");
  ResUnitParams<T> p;
  p.entry_stride = entry_stride;
  p.norm1 = NormParams<T>::identity(c_in);
  p.conv1 = make_conv<T>(c_in, c_out, 3, entry_stride, rng);
  p.conv1.has_bias = false;
  p.norm2 = NormParams<T>::identity(c_out);
  p.conv2 = make_conv<T>(c_out, c_out, 3, 1, rng);
  if (c_in != c_out || entry_stride != 1) p.projection = make_conv<T>(c_in, c_out, 1, entry_stride, rng);
  return p;
}

template <typename T>
AttentionModuleParams<T> make_attention_module(std::size_t stage, std::size_t c_in,
                                               std::size_t c_out, std::size_t stride,
                                               std::size_t depth, std::size_t units,
                                               Rng& rng) {
  if (units == 0) throw ConfigError("a main branch needs at least one residual unit");
  if (depth == 0) throw ConfigError("pooling depth must be >= 1");
  AttentionModuleParams<T> p;
  p.stage = stage;
  p.depth = depth;
  for (std::size_t i = 0; i < units; ++i) {
    p.main.push_back(make_res_unit<T>(i == 0 ? c_in : c_out, c_out, i == 0 ? stride : 1, rng));
  }
  for (std::size_t i = 0; i < depth; ++i) {
    p.att_down.push_back(make_res_unit<T>(i == 0 ? c_in : c_out, c_out, 1, rng));
  }
  for (std::size_t i = 0; i < depth; ++i) p.att_up.push_back(make_res_unit<T>(c_out, c_out, 1, rng));
  for (std::size_t i = 1; i < depth; ++i) {
    p.shortcuts.push_back(make_res_unit<T>(c_out, c_out, 1, rng));
  }
  p.gate = make_conv<T>(c_out, c_out, 1, 1, rng);
  return p;
}

template <typename T>
Var<T> res_unit(const Var<T>& x, ResUnitParams<T>& p, const ParamBinder<T>& bind, Mode mode) {
  if (x.shape().size() != 5 || x.shape()[1] != p.in_channels()) {
    throw ShapeError("res_unit expects [n, " + std::to_string(p.in_channels()) +
                     ", H, W, D], got " + shape_str(x.shape()));
  }
  Var<T> h = relu(apply_norm(x, p.norm1, bind, mode));
  h = apply_conv(h, p.conv1, bind);
  h = relu(apply_norm(h, p.norm2, bind, mode));
  h = apply_conv(h, p.conv2, bind);
  Var<T> skip = p.projection ? apply_conv(x, *p.projection, bind) : x;
  return add(h, skip);
}

template <typename T>
Tensor<T> res_unit(const Tensor<T>& x, ResUnitParams<T>& p, Mode mode) {
  Tape<T> tape(false);
  ParamBinder<T> bind(tape);
  return res_unit(tape.constant(x), p, bind, mode).value();
}

template <typename T>
BranchOutput<T> attention_branch(const Var<T>& x, AttentionModuleParams<T>& p,
                                 const Extents3& target, const ParamBinder<T>& bind,
                                 Mode mode) {
  const std::size_t depth = p.depth;
  if (p.att_down.size() != depth || p.att_up.size() != depth ||
      p.shortcuts.size() + 1 != depth) {
    throw ConfigError("attention branch: encoder/decoder depth mismatch");
  }
  check_branch_depth(spatial_extents(x.shape()), depth, p.stage);

  const Extents3 pool{2, 2, 2};
  std::vector<Var<T>> levels;  // encoder output per level
  std::vector<Extents3> extents{spatial_extents(x.shape())};
  Var<T> h = x;
  for (std::size_t i = 0; i < depth; ++i) {
    h = res_unit(maxpool3d(h, pool, pool), p.att_down[i], bind, mode);
    levels.push_back(h);
    extents.push_back(spatial_extents(h.shape()));
  }
  for (std::size_t j = depth; j-- > 0;) {
    const Extents3 to = j == 0 ? target : extents[j];
    h = trilinear_upsample(h, to);
    if (j > 0) h = add(h, res_unit(levels[j - 1], p.shortcuts[j - 1], bind, mode));
    h = res_unit(h, p.att_up[depth - 1 - j], bind, mode);
  }
  Var<T> logit = apply_conv(h, p.gate, bind);
  return {sigmoid(logit), logit};
}

template <typename T>
AttentionRecord<T> attention_branch(const Tensor<T>& x, AttentionModuleParams<T>& p, Mode mode) {
  Tape<T> tape(false);
  ParamBinder<T> bind(tape);
  Var<T> xv = tape.constant(x);
  Var<T> m = main_branch(xv, p, bind, mode);
  auto out = attention_branch(xv, p, spatial_extents(m.shape()), bind, mode);
  return {p.stage, out.A.value(), out.pre_gate.value()};
}

template <typename T>
Var<T> main_branch(const Var<T>& x, AttentionModuleParams<T>& p, const ParamBinder<T>& bind,
                   Mode mode) {
  Var<T> h = x;
  for (auto& u : p.main) h = res_unit(h, u, bind, mode);
  return h;
}

template <typename T>
Var<T> attention_module(const Var<T>& x, AttentionModuleParams<T>& p,
                        const ParamBinder<T>& bind, Mode mode,
                        std::type_identity_t<std::vector<AttentionRecord<T>>*> record_sink,
                        const std::type_identity_t<AttentionHooks<T>>& hooks, bool with_attention) {
  Var<T> m = main_branch(x, p, bind, mode);
  if (!with_attention) return m;
  if (hooks.constant_mask) {
    const T a = *hooks.constant_mask;
    if (record_sink) {
      record_sink->push_back({p.stage, Tensor<T>::full(m.shape(), a),
                              Tensor<T>::full(m.shape(), std::log(a) - std::log1p(-a))});
    }
    return scale(m, T{1} + a);
  }
  BranchOutput<T> br = attention_branch(x, p, spatial_extents(m.shape()), bind, mode);
  if (record_sink) record_sink->push_back({p.stage, br.A.value(), br.pre_gate.value()});
  return mul(m, add_scalar(br.A, T{1}));
}

template <typename T>
Tensor<T> attention_module(const Tensor<T>& x, AttentionModuleParams<T>& p, Mode mode,
                           std::type_identity_t<std::vector<AttentionRecord<T>>*> record_sink,
                           const std::type_identity_t<AttentionHooks<T>>& hooks) {
  Tape<T> tape(false);
  ParamBinder<T> bind(tape);
  return attention_module(tape.constant(x), p, bind, mode, record_sink, hooks).value();
}

#define SPATIODEC_INSTANTIATE(T)                                                          \
  template ResUnitParams<T> make_res_unit<T>(std::size_t, std::size_t, std::size_t, Rng&); \
  template AttentionModuleParams<T> make_attention_module<T>(                             \
      std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, Rng&); \
  template Var<T> res_unit(const Var<T>&, ResUnitParams<T>&, const ParamBinder<T>&, Mode);  \
  template Tensor<T> res_unit(const Tensor<T>&, ResUnitParams<T>&, Mode);                  \
  template BranchOutput<T> attention_branch(const Var<T>&, AttentionModuleParams<T>&,      \
                                            const Extents3&, const ParamBinder<T>&, Mode);  \
  template AttentionRecord<T> attention_branch(const Tensor<T>&, AttentionModuleParams<T>&, \
                                               Mode);                                      \
  template Var<T> main_branch(const Var<T>&, AttentionModuleParams<T>&,                    \
                              const ParamBinder<T>&, Mode);                                \
  template Var<T> attention_module(const Var<T>&, AttentionModuleParams<T>&,               \
                                   const ParamBinder<T>&, Mode,                            \
                                   std::vector<AttentionRecord<T>>*,                       \
                                   const AttentionHooks<T>&, bool);                        \
  template Tensor<T> attention_module(const Tensor<T>&, AttentionModuleParams<T>&, Mode,   \
                                      std::vector<AttentionRecord<T>>*,                    \
                                      const AttentionHooks<T>&);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
