#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spatiodec/tape.hpp"

namespace spatiodec {

inline constexpr double kGradDenominatorFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kGradDenominatorFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check over tensors owned by the caller. `f` must bind
/// each `values[i]` through `tape.parameter(*values[i], grads[i])` so the tape
/// deposits analytic gradients into `grads[i]`. Values are perturbed in place
/// and restored. Returns the worst relative error over every coordinate.
template <typename T>
double grad_check_bound(const std::function<Var<T>(Tape<T>&)>& f,
                        const std::vector<Tensor<T>*>& values,
                        const std::vector<Tensor<T>*>& grads, double eps = 1e-5) {
  if (eps <= 0) throw ContractError("grad_check eps must be positive");
  if (values.size() != grads.size()) throw ContractError("values/grads size mismatch");
  for (auto* g : grads) g->fill(T{0});
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    if (loss.value().numel() != 1) {
      throw ContractError("grad_check requires a scalar-valued function");
    }
    tape.backward(loss);
  }
  std::vector<Tensor<T>> analytic;
  analytic.reserve(grads.size());
  for (auto* g : grads) analytic.push_back(*g);

  auto eval = [&f]() {
    Tape<T> tape(false);
    return static_cast<double>(f(tape).value()[0]);
  };
  double worst = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    Tensor<T>& v = *values[t];
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const T saved = v[i];
      v[i] = static_cast<T>(saved + eps);
      const double plus = eval();
      v[i] = static_cast<T>(saved - eps);
      const double minus = eval();
      v[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      worst = std::max(worst, relative_error(analytic[t][i], numeric));
    }
  }
  return worst;
}

/// Checks the tape gradient of a scalar function of free input tensors.
template <typename T>
double grad_check(
    const std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>& f,
    std::vector<Tensor<T>> inputs, double eps = 1e-5) {
  std::vector<Tensor<T>> grads;
  std::vector<Tensor<T>*> vp;
  std::vector<Tensor<T>*> gp;
  grads.reserve(inputs.size());
  for (auto& in : inputs) grads.push_back(Tensor<T>::zeros(in.shape()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    vp.push_back(&inputs[i]);
    gp.push_back(&grads[i]);
  }
  std::function<Var<T>(Tape<T>&)> bound = [&](Tape<T>& tape) {
    std::vector<Var<T>> vars;
    vars.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      vars.push_back(tape.parameter(inputs[i], &grads[i]));
    }
    return f(tape, vars);
  };
  return grad_check_bound<T>(bound, vp, gp, eps);
}

}  // namespace spatiodec
