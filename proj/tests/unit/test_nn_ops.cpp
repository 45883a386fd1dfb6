#include <cmath>
#include <functional>

#include "doctest.h"
#include "spatiodec/grad_check.hpp"
#include "spatiodec/nn.hpp"
#include "spatiodec/ops.hpp"
#include "test_util.hpp"

using namespace spatiodec;
using spatiodec::testing::naive_conv3d;
using spatiodec::testing::random_tensor;

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

TEST_CASE("conv3d shapes and identity kernel") {
  Conv3DParams<double> p{Tensor<double>({1, 1, 3, 3, 3}, 0.1), Tensor<double>({1}), 1,
                         Padding::valid};
  auto y = conv3d(Tensor<double>({1, 1, 8, 8, 8}, 1.0), p);
  CHECK(y.shape() == Shape{1, 1, 6, 6, 6});

  Conv3DParams<double> id{Tensor<double>({1, 1, 3, 3, 3}), Tensor<double>({1}), 1,
                          Padding::same_zero};
  id.weights.at({0, 0, 1, 1, 1}) = 1.0;
  auto x = random_tensor({2, 1, 5, 6, 7}, 5);
  CHECK(bitwise_equal(conv3d(x, id), x));

  Conv3DParams<double> s2{Tensor<double>({2, 1, 3, 3, 3}, 0.1), Tensor<double>({2}), 2,
                          Padding::same_zero};
  CHECK(conv3d(x, s2).shape() == Shape{2, 2, 3, 3, 4});
}

TEST_CASE("conv3d errors") {
  Conv3DParams<double> p{Tensor<double>({1, 2, 3, 3, 3}), Tensor<double>({1}), 1,
                         Padding::valid};
  CHECK_THROWS_AS(conv3d(Tensor<double>({1, 1, 8, 8, 8}), p), ShapeError);
  p.weights = Tensor<double>({1, 1, 3, 3, 3});
  CHECK_THROWS_AS(conv3d(Tensor<double>({1, 1, 2, 8, 8}), p), ShapeError);
  p.weights = Tensor<double>({1, 1, 2, 3, 3});
  p.padding = Padding::same_zero;
  CHECK_THROWS_AS(conv3d(Tensor<double>({1, 1, 8, 8, 8}), p), ShapeError);
}

TEST_CASE("conv3d matches the nested-loop oracle on 20 random configurations") {
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> ext(3, 8), ch(1, 4), kk(0, 2), st(1, 2), pd(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = ch(rng), cout = ch(rng);
    const std::size_t k = 2 * kk(rng) + 1;
    const Shape xs{2, cin, std::max(ext(rng), k), std::max(ext(rng), k), std::max(ext(rng), k)};
    const bool same = pd(rng) == 1;
    const std::size_t stride = st(rng);
    auto x = random_tensor(xs, 100 + trial);
    Conv3DParams<double> p{random_tensor({cout, cin, k, k, k}, 200 + trial),
                           random_tensor({cout}, 300 + trial), stride,
                           same ? Padding::same_zero : Padding::valid};
    auto got = conv3d(x, p);
    auto want = naive_conv3d(x, p.weights, p.bias, stride, same);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("conv3d is linear in x with zero bias") {
  auto x1 = random_tensor({1, 2, 6, 5, 7}, 1);
  auto x2 = random_tensor({1, 2, 6, 5, 7}, 2);
  Conv3DParams<double> p{random_tensor({3, 2, 3, 3, 3}, 3), Tensor<double>({3}), 2,
                         Padding::same_zero};
  const double a = 1.7, b = -0.4;
  auto lhs = conv3d(ew(EwKind::add, ew(EwKind::scale, x1, a), ew(EwKind::scale, x2, b)), p);
  auto rhs = ew(EwKind::add, ew(EwKind::scale, conv3d(x1, p), a),
                ew(EwKind::scale, conv3d(x2, p), b));
  double scale = 0;
  for (double v : rhs.data()) scale = std::max(scale, std::abs(v));
  CHECK(max_abs_diff(lhs, rhs) <= 1e-6 * scale);
}

TEST_CASE("maxpool3d forward, ties and gradient routing") {
  auto c = Tensor<double>::full({1, 1, 4, 4, 4}, 3.0);
  auto [y, arg] = maxpool3d(c, {2, 2, 2}, {2, 2, 2});
  CHECK(y.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : y.data()) CHECK(v == 3.0);
  // Ties resolve to the first cell of each window.
  CHECK(arg[0] == 0);
  CHECK(arg[1] == 2);

  CHECK_THROWS_AS(maxpool3d(c, {5, 2, 2}, {1, 1, 1}), ShapeError);

  Tape<double> tape;
  auto x = tape.variable(random_tensor({2, 2, 5, 4, 6}, 7));
  auto p = maxpool3d(x, {2, 2, 2}, {2, 2, 2});
  const auto w = random_tensor(p.shape(), 8);
  tape.backward(weighted_sum(p, w));
  double routed = 0, sent = 0;
  std::size_t nonzero = 0;
  for (double g : x.grad().data()) {
    routed += g;
    nonzero += g != 0.0;
  }
  for (double g : w.data()) sent += g;
  CHECK(routed == doctest::Approx(sent).epsilon(1e-12));
  CHECK(nonzero == p.value().numel());
}

TEST_CASE("trilinear upsample") {
  auto c = Tensor<double>::full({1, 2, 2, 3, 2}, -1.25);
  auto u = trilinear_upsample(c, {5, 4, 3});
  CHECK(u.shape() == Shape{1, 2, 5, 4, 3});
  for (double v : u.data()) CHECK(v == doctest::Approx(-1.25).epsilon(1e-15));

  auto x = random_tensor({1, 1, 2, 2, 2}, 4);
  auto y = trilinear_upsample(x, {3, 3, 3});
  for (std::size_t a : {0, 1})
    for (std::size_t b : {0, 1})
      for (std::size_t d : {0, 1}) CHECK(y.at({0, 0, 2 * a, 2 * b, 2 * d}) == x.at({0, 0, a, b, d}));
  double mean = 0;
  for (double v : x.data()) mean += v / 8;
  CHECK(y.at({0, 0, 1, 1, 1}) == doctest::Approx(mean).epsilon(1e-14));

  // Linear ramp sampled at every other voxel comes back exactly.
  Tensor<double> ramp({1, 1, 9, 7, 5});
  for (std::size_t h = 0; h < 9; ++h)
    for (std::size_t w = 0; w < 7; ++w)
      for (std::size_t d = 0; d < 5; ++d) ramp.at({0, 0, h, w, d}) = 0.5 * h - 2.0 * w + 3.0 * d;
  Tensor<double> coarse({1, 1, 5, 4, 3});
  for (std::size_t h = 0; h < 5; ++h)
    for (std::size_t w = 0; w < 4; ++w)
      for (std::size_t d = 0; d < 3; ++d)
        coarse.at({0, 0, h, w, d}) = ramp.at({0, 0, 2 * h, 2 * w, 2 * d});
  CHECK(max_abs_diff(trilinear_upsample(coarse, {9, 7, 5}), ramp) <= 1e-12);

  CHECK(bitwise_equal(trilinear_upsample(x, {2, 2, 2}), x));

  // Single-voxel target samples the centre.
  auto centre = trilinear_upsample(x, {1, 1, 1});
  CHECK(centre[0] == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("dense") {
  Tensor<double> x({1, 2}, std::vector<double>{1, 2});
  Tensor<double> w({1, 2}, std::vector<double>{3, 4});
  Tensor<double> b({1}, std::vector<double>{1});
  CHECK(dense(x, w, b)[0] == 12.0);

  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  auto xs = random_tensor({4, 3}, 6);
  CHECK(bitwise_equal(dense(xs, eye, Tensor<double>({3})), xs));
  CHECK_THROWS_AS(dense(xs, Tensor<double>({2, 2}), Tensor<double>({2})), ShapeError);
}

TEST_CASE("activations") {
  CHECK(activate(Activation::sigmoid, Tensor<double>::scalar(0.0))[0] == 0.5);
  Tensor<double> r({2}, std::vector<double>{-3, 3});
  auto rr = activate(Activation::relu, r);
  CHECK(rr.values() == std::vector<double>{0, 3});
  CHECK(activate(Activation::relu, rr) == rr);

  Tensor<float> extreme({4}, std::vector<float>{-1000.f, -60.f, 60.f, 1000.f});
  const auto squashed = activate(Activation::sigmoid, extreme);
  for (float v : squashed.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }

  Tape<double> tape;
  auto x = tape.variable(random_tensor({6}, 3));
  auto s = sigmoid(x);
  tape.backward(sum_all(s));
  for (std::size_t i = 0; i < 6; ++i) {
    const double v = s.value()[i];
    CHECK(x.grad()[i] == doctest::Approx(v * (1 - v)).epsilon(1e-14));
  }
}

TEST_CASE("batch norm") {
  auto p = NormParams<double>::identity(3);
  auto x = random_tensor({2, 3, 4, 4, 4}, 5);
  auto y = norm(x, p, Mode::infer);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)).epsilon(1e-14));
  }

  auto t = norm(x, p, Mode::train);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double s = 0, ss = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t q = 0; q < 64; ++q) s += t[(n * 3 + ch) * 64 + q];
    const double mean = s / 128;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t q = 0; q < 64; ++q) ss += std::pow(t[(n * 3 + ch) * 64 + q] - mean, 2);
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(ss / 128 - 1.0) <= 1e-4);
  }
  // Running statistics moved toward the batch statistics.
  CHECK(p.running_mean[0] != 0.0);
  CHECK(p.running_var.all_finite());

  auto q = NormParams<double>::identity(2);
  CHECK_THROWS_AS(norm(Tensor<double>({1, 2}), q, Mode::train), ContractError);
  CHECK_THROWS_AS(norm(Tensor<double>({2, 3, 2}), q, Mode::train), ShapeError);
}

TEST_CASE("softmax cross entropy") {
  Tape<double> tape;
  auto z = tape.variable(Tensor<double>({2, 7}, 0.3));
  const int labels[2] = {1, 6};
  auto loss = softmax_ce(z, std::span<const int>(labels));
  CHECK(loss.value()[0] == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  tape.backward(loss);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 7; ++k) {
      const double onehot = static_cast<int>(k) == labels[i] ? 1.0 : 0.0;
      CHECK(z.grad().at({i, k}) == doctest::Approx((1.0 / 7 - onehot) / 2).epsilon(1e-12));
    }

  Tape<double> t2;
  Tensor<double> margin({1, 3});
  margin.at({0, 2}) = 50.0;
  const int lab2[1] = {2};
  CHECK(softmax_ce(t2.constant(margin), std::span<const int>(lab2)).value()[0] < 1e-20);

  const int bad[1] = {3};
  CHECK_THROWS_AS(softmax_ce(t2.constant(margin), std::span<const int>(bad)), LabelError);
}

TEST_CASE("mse") {
  Tape<double> tape;
  auto p = tape.variable(Tensor<double>({1, 1}, 0.0));
  auto t = tape.constant(Tensor<double>({1, 1}, 3.0));
  auto l = mse(p, t);
  CHECK(l.value()[0] == 9.0);
  tape.backward(l);
  CHECK(p.grad()[0] == -6.0);
  CHECK(mse(t, t).value()[0] == 0.0);
  CHECK_THROWS_AS(mse(p, tape.constant(Tensor<double>({2, 1}))), ShapeError);
}

TEST_CASE("every nn op passes grad_check on three random shapes") {
  const Shape vol_shapes[3] = {{2, 2, 4, 3, 5}, {1, 3, 5, 5, 4}, {2, 1, 6, 4, 4}};
  for (int s = 0; s < 3; ++s) {
    const Shape xs = vol_shapes[s];
    const std::uint64_t seed = 1000 + 17 * s;
    CAPTURE(s);

    for (std::size_t stride : {1u, 2u}) {
      for (Padding pad : {Padding::same_zero, Padding::valid}) {
        const std::size_t k = 3;
        auto proj = random_tensor(
            conv3d(random_tensor(xs, 1), Conv3DParams<double>{random_tensor({2, xs[1], k, k, k}, 2),
                                                              Tensor<double>({2}), stride, pad})
                .shape(),
            seed + 3);
        Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
          return weighted_sum(conv3d(v[0], v[1], v[2], stride, pad), proj);
        };
        CHECK(grad_check<double>(f, {random_tensor(xs, seed), random_tensor({2, xs[1], k, k, k}, seed + 1),
                                     random_tensor({2}, seed + 2)}) <= 1e-4);
      }
    }

    {
      auto proj = random_tensor(maxpool3d(random_tensor(xs, 1), {2, 2, 2}, {2, 2, 2}).first.shape(), seed);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(maxpool3d(v[0], {2, 2, 2}, {2, 2, 2}), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor(xs, seed + 4)}) <= 1e-4);
    }
    {
      const Extents3 target{xs[2] + 3, xs[3] * 2, xs[4] + 1};
      auto proj = random_tensor({xs[0], xs[1], target.h, target.w, target.d}, seed + 5);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(trilinear_upsample(v[0], target), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor(xs, seed + 6)}) <= 1e-4);
    }
    for (Mode mode : {Mode::train, Mode::infer}) {
      auto state = NormParams<double>::identity(xs[1]);
      state.running_var = Tensor<double>::full({xs[1]}, 1.7);
      state.running_mean = Tensor<double>::full({xs[1]}, 0.2);
      auto proj = random_tensor(xs, seed + 7);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        NormState<double> st{&state.running_mean, &state.running_var, 0.1, 1e-5};
        return weighted_sum(batch_norm(v[0], v[1], v[2], st, mode), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor(xs, seed + 8), random_tensor({xs[1]}, seed + 9),
                                   random_tensor({xs[1]}, seed + 10)}) <= 1e-4);
    }
    for (Activation act : {Activation::relu, Activation::sigmoid}) {
      auto proj = random_tensor(xs, seed + 11);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(activate(act, v[0]), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor(xs, seed + 12)}) <= 1e-4);
    }
    {
      const std::size_t n = xs[0] + 1, fin = xs[1] + 2, fout = xs[2];
      auto proj = random_tensor({n, fout}, seed + 13);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(dense(v[0], v[1], v[2]), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor({n, fin}, seed + 14), random_tensor({fout, fin}, seed + 15),
                                   random_tensor({fout}, seed + 16)}) <= 1e-4);
    }
    {
      const std::size_t n = xs[0] + 2, C = xs[2] + 1;
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>((i * 5 + s) % C);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return softmax_ce(v[0], std::span<const int>(labels));
      };
      CHECK(grad_check<double>(f, {random_tensor({n, C}, seed + 17)}) <= 1e-4);
      Fn g = [&](Tape<double>&, const std::vector<Var<double>>& v) { return mse(v[0], v[1]); };
      CHECK(grad_check<double>(g, {random_tensor({n, 1}, seed + 18), random_tensor({n, 1}, seed + 19)}) <=
            1e-4);
    }
    {
      auto proj = random_tensor({xs[0], xs[1]}, seed + 20);
      Fn f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
        return weighted_sum(global_avg_pool(v[0]), proj);
      };
      CHECK(grad_check<double>(f, {random_tensor(xs, seed + 21)}) <= 1e-4);
    }
  }
}
