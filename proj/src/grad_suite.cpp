#include "spatiodec/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "spatiodec/attention.hpp"
#include "spatiodec/conv4d.hpp"
#include "spatiodec/grad_check.hpp"
#include "spatiodec/ops.hpp"

namespace spatiodec {

namespace {

using D = double;
using FreeFn = std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>;

Tensor<D> rnd(Shape s, std::uint64_t seed, double scale = 1.0) {
  return Tensor<D>::randn(std::move(s), seed, 0.0, scale);
}

// Scalarizes an op output with a fixed random projection.
double check_projected(const std::function<Var<D>(const std::vector<Var<D>>&)>& op,
                       std::vector<Tensor<D>> inputs, std::uint64_t seed, double eps) {
  Tape<D> probe(false);
  std::vector<Var<D>> pv;
  for (auto& in : inputs) pv.push_back(probe.constant(in));
  const Tensor<D> proj = rnd(op(pv).shape(), seed);
  FreeFn f = [&](Tape<D>&, const std::vector<Var<D>>& v) { return weighted_sum(op(v), proj); };
  return grad_check<D>(f, std::move(inputs), eps);
}

// Checks gradients w.r.t. the input and every trainable tensor in `visit`.
template <typename Params>
double check_module(Params& params, const Tensor<D>& x0, std::uint64_t seed,
                    const std::function<Var<D>(const Var<D>&, Params&, const ParamBinder<D>&)>& op) {
  Tensor<D> x = x0;
  Tensor<D> gx = Tensor<D>::zeros(x.shape());
  std::vector<Tensor<D>*> values{&x};
  std::vector<Tensor<D>*> grads{&gx};
  std::vector<Tensor<D>> sinks;
  std::vector<Tensor<D>*> trainable;
  visit_tensors(params, "", [&](const std::string&, Tensor<D>& t, TensorRole role) {
    if (role == TensorRole::trainable) trainable.push_back(&t);
  });
  sinks.reserve(trainable.size());
  for (auto* t : trainable) {
    sinks.push_back(Tensor<D>::zeros(t->shape()));
    values.push_back(t);
    grads.push_back(&sinks.back());
  }
  Tensor<D> proj;
  {
    Tape<D> probe(false);
    ParamBinder<D> bind(probe);
    proj = rnd(op(probe.constant(x), params, bind).shape(), seed);
  }
  std::function<Var<D>(Tape<D>&)> f = [&](Tape<D>& tape) {
    ParamBinder<D> bind(tape);
    for (std::size_t i = 1; i < values.size(); ++i) bind.route(values[i], grads[i]);
    return weighted_sum(op(tape.parameter(x, &gx), params, bind), proj);
  };
  // Deep relu/pool stacks: a narrower step straddles fewer kinks.
  return grad_check_bound<D>(f, values, grads, 3e-6);
}

// Gamma away from zero so every normalized channel carries gradient.
template <typename Params>
void jitter_affine(Params& p, Rng& rng) {
  visit_tensors(p, "", [&](const std::string& name, Tensor<D>& t, TensorRole) {
    const bool gamma = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    const bool beta = name.size() >= 4 && name.compare(name.size() - 4, 4, "beta") == 0;
    if (gamma) t = Tensor<D>::uniform(t.shape(), rng, 0.5, 1.5);
    if (beta) t = Tensor<D>::randn(t.shape(), rng, 0.0, 0.3);
    if (name.find(".bias") != std::string::npos) t = Tensor<D>::randn(t.shape(), rng, 0.0, 0.3);
  });
}

using Case = std::function<double(int)>;

std::vector<std::pair<std::string, Case>> suite() {
  std::vector<std::pair<std::string, Case>> s;
  // Ops that are linear in each argument get a wide step: no truncation
  // error, much less roundoff.
  s.emplace_back("conv3d", [](int c) {
    const Shape xs[3] = {{2, 2, 4, 5, 3}, {1, 3, 5, 4, 4}, {2, 1, 3, 3, 6}};
    const std::size_t cout[3] = {3, 2, 2}, k[3] = {3, 1, 3}, st[3] = {1, 2, 2};
    const Shape ws{cout[c], xs[c][1], k[c], k[c], k[c]};
    return check_projected(
        [&](const std::vector<Var<D>>& v) { return conv3d(v[0], v[1], v[2], st[c], Padding::same_zero); },
        {rnd(xs[c], 10 + c), rnd(ws, 20 + c), rnd({cout[c]}, 30 + c)}, 40 + c, 1e-3);
  });
  s.emplace_back("conv4d", [](int c) {
    const Shape xs[3] = {{1, 1, 5, 4, 5, 3}, {2, 2, 4, 3, 4, 4}, {1, 2, 7, 5, 3, 4}};
    const std::size_t cout[3] = {2, 2, 3}, kt[3] = {3, 2, 5}, st[3] = {2, 1, 2}, ss[3] = {2, 1, 2};
    const Conv4DConfig cfg{st[c], ss[c]};
    const Shape ws{cout[c], xs[c][1], kt[c], 3, 3, 3};
    return check_projected(
        [&](const std::vector<Var<D>>& v) { return temporal_flatten(conv4d(v[0], v[1], v[2], cfg)); },
        {rnd(xs[c], 60 + c), rnd(ws, 70 + c), rnd({cout[c]}, 80 + c)}, 50 + c, 1e-3);
  });
  s.emplace_back("maxpool3d", [](int c) {
    const Shape xs[3] = {{1, 2, 4, 4, 4}, {2, 1, 5, 6, 3}, {1, 3, 3, 4, 5}};
    const Extents3 win[3] = {{2, 2, 2}, {3, 2, 2}, {2, 3, 2}};
    const Extents3 st[3] = {{2, 2, 2}, {1, 2, 1}, {1, 1, 2}};
    return check_projected([&](const std::vector<Var<D>>& v) { return maxpool3d(v[0], win[c], st[c]); },
                           {rnd(xs[c], 90 + c)}, 100 + c, 1e-5);
  });
  s.emplace_back("trilinear", [](int c) {
    const Shape xs[3] = {{1, 2, 2, 3, 2}, {2, 1, 3, 3, 4}, {1, 2, 4, 2, 3}};
    const Extents3 to[3] = {{4, 5, 3}, {5, 6, 7}, {7, 5, 3}};
    return check_projected([&](const std::vector<Var<D>>& v) { return trilinear_upsample(v[0], to[c]); },
                           {rnd(xs[c], 110 + c)}, 120 + c, 1e-3);
  });
  s.emplace_back("dense", [](int c) {
    const std::size_t n[3] = {1, 3, 4}, fi[3] = {5, 2, 7}, fo[3] = {3, 4, 1};
    return check_projected([](const std::vector<Var<D>>& v) { return dense(v[0], v[1], v[2]); },
                           {rnd({n[c], fi[c]}, 130 + c), rnd({fo[c], fi[c]}, 140 + c), rnd({fo[c]}, 150 + c)},
                           160 + c, 1e-3);
  });
  s.emplace_back("norm", [](int c) {
    const Shape xs[3] = {{2, 3, 2, 2, 3}, {4, 2, 1, 2, 2}, {1, 2, 3, 3, 2}};
    const Mode mode = c == 2 ? Mode::infer : Mode::train;
    const std::size_t ch = xs[c][1];
    Rng rng(170 + c);
    Tensor<D> rm = Tensor<D>::randn({ch}, rng, 0.0, 0.5), rv = Tensor<D>::uniform({ch}, rng, 0.5, 2.0);
    return check_projected(
        [&](const std::vector<Var<D>>& v) {
          Tensor<D> m = rm, var = rv;  // train mode must not leak across evaluations
          return batch_norm(v[0], v[1], v[2], NormState<D>{&m, &var, 0.1, 1e-5}, mode);
        },
        {rnd(xs[c], 180 + c, 2.0), Tensor<D>::uniform({ch}, rng, 0.5, 1.5), rnd({ch}, 190 + c)}, 200 + c,
        1e-5);
  });
  s.emplace_back("relu", [](int c) {
    const Shape xs[3] = {{7}, {2, 3, 4}, {1, 2, 3, 2, 2}};
    return check_projected([](const std::vector<Var<D>>& v) { return relu(v[0]); },
                           {rnd(xs[c], 210 + c)}, 220 + c, 1e-5);
  });
  s.emplace_back("sigmoid", [](int c) {
    const Shape xs[3] = {{7}, {2, 3, 4}, {1, 2, 3, 2, 2}};
    return check_projected([](const std::vector<Var<D>>& v) { return sigmoid(v[0]); },
                           {rnd(xs[c], 230 + c, 3.0)}, 240 + c, 1e-5);
  });
  s.emplace_back("softmax_ce", [](int c) {
    const std::size_t n[3] = {1, 4, 6}, C[3] = {3, 7, 2};
    std::vector<int> labels(n[c]);
    for (std::size_t i = 0; i < n[c]; ++i) labels[i] = static_cast<int>((i * 5 + c) % C[c]);
    FreeFn f = [&](Tape<D>&, const std::vector<Var<D>>& v) { return softmax_ce(v[0], labels); };
    return grad_check<D>(f, {rnd({n[c], C[c]}, 250 + c, 2.0)});
  });
  s.emplace_back("mse", [](int c) {
    const std::size_t n[3] = {1, 5, 8};
    FreeFn f = [](Tape<D>&, const std::vector<Var<D>>& v) { return mse(v[0], v[1]); };
    return grad_check<D>(f, {rnd({n[c], 1}, 260 + c), rnd({n[c], 1}, 270 + c)});
  });
  s.emplace_back("global_avg_pool", [](int c) {
    const Shape xs[3] = {{1, 2, 2, 3, 2}, {3, 1, 2, 2, 2}, {2, 2, 1, 4, 3}};
    return check_projected([](const std::vector<Var<D>>& v) { return global_avg_pool(v[0]); },
                           {rnd(xs[c], 280 + c)}, 290 + c, 1e-3);
  });
  s.emplace_back("res_unit", [](int c) {
    const Shape xs[3] = {{2, 2, 3, 4, 3}, {1, 3, 4, 3, 4}, {2, 2, 4, 4, 3}};
    const std::size_t cout[3] = {2, 2, 3}, st[3] = {1, 2, 1};
    Rng rng(300 + c);
    auto p = make_res_unit<D>(xs[c][1], cout[c], st[c], rng);
    jitter_affine(p, rng);
    std::function<Var<D>(const Var<D>&, ResUnitParams<D>&, const ParamBinder<D>&)> op =
        [](const Var<D>& x, ResUnitParams<D>& q, const ParamBinder<D>& b) { return res_unit(x, q, b, Mode::train); };
    return check_module(p, rnd(xs[c], 310 + c), 320 + c, op);
  });
  s.emplace_back("attention_module", [](int c) {
    const Shape xs[3] = {{2, 2, 4, 5, 4}, {1, 2, 8, 9, 8}, {1, 2, 5, 4, 6}};
    const std::size_t cout[3] = {3, 2, 2}, st[3] = {1, 1, 2}, depth[3] = {1, 2, 1};
    Rng rng(330 + c);
    auto p = make_attention_module<D>(c + 1, xs[c][1], cout[c], st[c], depth[c], 1, rng);
    jitter_affine(p, rng);
    std::function<Var<D>(const Var<D>&, AttentionModuleParams<D>&, const ParamBinder<D>&)> op =
        [](const Var<D>& x, AttentionModuleParams<D>& q, const ParamBinder<D>& b) {
          return attention_module(x, q, b, Mode::train);
        };
    return check_module(p, rnd(xs[c], 340 + c), 350 + c, op);
  });
  return s;
}

}  // namespace

std::vector<std::string> grad_suite_ops() {
  std::vector<std::string> names;
  for (auto& [name, _] : suite()) names.push_back(name);
  return names;
}

std::vector<GradCheckResult> run_grad_suite(const std::string& only) {
  std::vector<GradCheckResult> out;
  for (auto& [name, fn] : suite()) {
    if (!only.empty() && name != only) continue;
    GradCheckResult r{name, 0, 0.0};
    for (int c = 0; c < 3; ++c) {
      r.worst = std::max(r.worst, fn(c));
      ++r.shapes;
    }
    out.push_back(r);
  }
  if (!only.empty() && out.empty()) throw ConfigError("unknown op '" + only + "'");
  return out;
}

}  // namespace spatiodec
