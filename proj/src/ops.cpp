#include "spatiodec/ops.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <set>

namespace spatiodec {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

struct ReducePlan {
  Shape out_shape;
  // Maps every input flat index to its output flat index.
  std::vector<std::size_t> out_index;
  std::size_t group = 1;
};

ReducePlan plan_reduce(const Shape& shape, const std::vector<std::size_t>& axes) {
  std::set<std::size_t> reduced;
  for (auto a : axes) {
    if (a >= shape.size()) {
      throw AxisError("axis " + std::to_string(a) + " out of range for rank " +
                      std::to_string(shape.size()));
    }
    if (!reduced.insert(a).second) {
      throw AxisError("axis " + std::to_string(a) + " listed twice");
    }
  }
  ReducePlan plan;
  Shape out_strides_per_axis(shape.size(), 0);
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (reduced.count(k)) {
      plan.group *= shape[k];
    } else {
      plan.out_shape.push_back(shape[k]);
    }
  }
  const Shape out_strides = row_major_strides(plan.out_shape);
  for (std::size_t k = 0, o = 0; k < shape.size(); ++k) {
    if (!reduced.count(k)) out_strides_per_axis[k] = out_strides[o++];
  }
  const std::size_t n = shape_numel(shape);
  plan.out_index.resize(n);
  Shape coord(shape.size(), 0);
  std::size_t out = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.out_index[i] = out;
    for (std::size_t k = shape.size(); k-- > 0;) {
      ++coord[k];
      out += out_strides_per_axis[k];
      if (coord[k] < shape[k]) break;
      out -= out_strides_per_axis[k] * coord[k];
      coord[k] = 0;
    }
  }
  return plan;
}

// Sums in extended precision so long reductions (scalar losses in particular)
// do not drown small input changes in accumulation roundoff.
template <typename T>
void accumulate_sums(const Tensor<T>& t, const ReducePlan& plan, ReduceKind kind,
                     Tensor<T>& out) {
  std::vector<long double> acc(out.numel(), 0.0L);
  for (std::size_t i = 0; i < t.numel(); ++i) acc[plan.out_index[i]] += t[i];
  const long double s =
      kind == ReduceKind::mean ? 1.0L / static_cast<long double>(plan.group) : 1.0L;
  for (std::size_t o = 0; o < acc.size(); ++o) out[o] = static_cast<T>(acc[o] * s);
}

template <typename T>
Tensor<T> make_output(const Shape& shape) {
  return shape.empty() ? Tensor<T>() : Tensor<T>::zeros(shape);
}

}  // namespace

template <typename T>
Tensor<T> ew(EwKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ew");
  Tensor<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  switch (kind) {
    case EwKind::add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
      break;
    case EwKind::sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
      break;
    case EwKind::mul:
    case EwKind::scale:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
      break;
  }
  return out;
}

template <typename T>
Tensor<T> ew(EwKind kind, const Tensor<T>& a, T b) {
  Tensor<T> out = a;
  for (auto& v : out.data()) {
    switch (kind) {
      case EwKind::add: v += b; break;
      case EwKind::sub: v -= b; break;
      case EwKind::mul:
      case EwKind::scale: v *= b; break;
    }
  }
  return out;
}

template <typename T>
Var<T> ew(EwKind kind, const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = a.tape();
  Tensor<T> out = ew(kind, a.value(), b.value());
  return tape.record(std::move(out), {a, b},
                     [kind, a, b](Tape<T>& tp, const Tensor<T>& g) {
                       switch (kind) {
                         case EwKind::add:
                           tp.accumulate(a, g);
                           tp.accumulate(b, g);
                           break;
                         case EwKind::sub:
                           tp.accumulate(a, g);
                           if (tp.wants_grad(b)) tp.accumulate(b, ew(EwKind::scale, g, T{-1}));
                           break;
                         case EwKind::mul:
                         case EwKind::scale:
                           if (tp.wants_grad(a)) tp.accumulate(a, ew(EwKind::mul, g, b.value()));
                           if (tp.wants_grad(b)) tp.accumulate(b, ew(EwKind::mul, g, a.value()));
                           break;
                       }
                     });
}

template <typename T>
Var<T> ew(EwKind kind, const Var<T>& a, T b) {
  Tape<T>& tape = a.tape();
  Tensor<T> out = ew(kind, a.value(), b);
  return tape.record(std::move(out), {a}, [kind, a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (kind == EwKind::mul || kind == EwKind::scale) {
      tp.accumulate(a, ew(EwKind::scale, g, b));
    } else {
      tp.accumulate(a, g);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape new_shape) {
  Tensor<T> out = a.value().reshape(std::move(new_shape));
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
  });
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& t, const std::vector<std::size_t>& axes,
                 ReduceKind kind) {
  const ReducePlan plan = plan_reduce(t.shape(), axes);
  Tensor<T> out = make_output<T>(plan.out_shape);
  if (kind == ReduceKind::max) {
    out.fill(-std::numeric_limits<T>::infinity());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      T& slot = out[plan.out_index[i]];
      if (t[i] > slot) slot = t[i];
    }
    return out;
  }
  accumulate_sums(t, plan, kind, out);
  return out;
}

template <typename T>
Var<T> reduce(const Var<T>& t, const std::vector<std::size_t>& axes, ReduceKind kind) {
  auto plan = std::make_shared<ReducePlan>(plan_reduce(t.shape(), axes));
  const Tensor<T>& x = t.value();
  Tensor<T> out = make_output<T>(plan->out_shape);
  std::shared_ptr<std::vector<std::size_t>> arg;
  if (kind == ReduceKind::max) {
    out.fill(-std::numeric_limits<T>::infinity());
    arg = std::make_shared<std::vector<std::size_t>>(out.numel(), 0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const std::size_t o = plan->out_index[i];
      if (x[i] > out[o]) {
        out[o] = x[i];
        (*arg)[o] = i;
      }
    }
  } else {
    accumulate_sums(x, *plan, kind, out);
  }
  return t.tape().record(
      std::move(out), {t}, [t, plan, arg, kind](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& dx = tp.grad_buffer(t.id());
        if (kind == ReduceKind::max) {
          for (std::size_t o = 0; o < g.numel(); ++o) dx[(*arg)[o]] += g[o];
          return;
        }
        const T s = kind == ReduceKind::mean ? T{1} / static_cast<T>(plan->group) : T{1};
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += s * g[plan->out_index[i]];
      });
}

template <typename T>
Var<T> sum_all(const Var<T>& t) {
  std::vector<std::size_t> axes(t.value().rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(t, axes, ReduceKind::sum);
}

template <typename T>
Var<T> weighted_sum(const Var<T>& t, const Tensor<T>& weights) {
  Var<T> w = t.tape().constant(weights);
  return sum_all(mul(t, w));
}

#define SPATIODEC_INSTANTIATE(T)                                                    \
  template Tensor<T> ew(EwKind, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> ew(EwKind, const Tensor<T>&, T);                               \
  template Var<T> ew(EwKind, const Var<T>&, const Var<T>&);                         \
  template Var<T> ew(EwKind, const Var<T>&, T);                                     \
  template Var<T> reshape(const Var<T>&, Shape);                                    \
  template Tensor<T> reduce(const Tensor<T>&, const std::vector<std::size_t>&,      \
                            ReduceKind);                                            \
  template Var<T> reduce(const Var<T>&, const std::vector<std::size_t>&, ReduceKind); \
  template Var<T> sum_all(const Var<T>&);                                           \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
