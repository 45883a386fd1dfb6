#include <cmath>

#include "doctest.h"
#include "spatiodec/grad_check.hpp"
#include "spatiodec/nn.hpp"
#include "spatiodec/ops.hpp"
#include "test_util.hpp"

using namespace spatiodec;
using spatiodec::testing::random_tensor;

TEST_CASE("tensor_new fills and validates extents") {
  Tensor<float> z({2, 3});
  CHECK(z.numel() == 6);
  for (float v : z.data()) CHECK(v == 0.0f);

  Tensor<double> one({1}, 7.5);
  CHECK(one[0] == 7.5);

  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("seeded normal fill is reproducible and frozen") {
  auto a = Tensor<double>::randn({2, 2}, 42);
  auto b = Tensor<double>::randn({2, 2}, 42);
  CHECK(bitwise_equal(a, b));
  // Frozen from the first run (libstdc++ mt19937_64 + normal_distribution).
  const double frozen[4] = {0.70498826642085988, 1.2938204232729367, -0.5740948067202617,
                            0.39797739618378897};
  for (int i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(frozen[i]).epsilon(1e-15));
  auto c = Tensor<double>::randn({2, 2}, 43);
  CHECK_FALSE(bitwise_equal(a, c));
}

TEST_CASE("row-major coordinates round trip") {
  Tensor<float> t({3, 4, 5, 2});
  const Shape strides = t.strides();
  CHECK(strides == Shape{40, 10, 2, 1});
  for (std::size_t off = 0; off < t.numel(); ++off) {
    const Shape c = t.coords(off);
    std::size_t manual = 0;
    for (std::size_t k = 0; k < c.size(); ++k) manual += c[k] * strides[k];
    CHECK(manual == off);
    CHECK(t.offset(c) == off);
  }
}

TEST_CASE("reshape keeps row-major order") {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  auto flat = t.reshape({6});
  CHECK(flat.values() == t.values());
  CHECK(flat.reshape({2, 3}) == t);
  CHECK_THROWS_AS(t.reshape({4}), ShapeError);

  // [c=4, t=2, 8,8,8] -> [8, 8,8,8]: channel c, frame t lands at c*2 + t.
  auto y = random_tensor<float>({4, 2, 8, 8, 8}, 3);
  auto f = y.reshape({8, 8, 8, 8});
  CHECK(f.at({2 * 2 + 1, 3, 4, 5}) == y.at({2, 1, 3, 4, 5}));
}

TEST_CASE("elementwise ops") {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  Tensor<double> b({2}, std::vector<double>{3, 4});
  CHECK(ew(EwKind::mul, a, b).values() == std::vector<double>{3, 8});
  CHECK(ew(EwKind::add, a, 0.0) == a);
  CHECK(ew(EwKind::sub, b, a).values() == std::vector<double>{2, 2});
  CHECK(ew(EwKind::scale, a, 3.0).values() == std::vector<double>{3, 6});
  CHECK_THROWS_AS(ew(EwKind::add, a, Tensor<double>({3})), ShapeError);

  Tape<double> tape;
  auto va = tape.variable(a);
  auto vb = tape.variable(b);
  tape.backward(sum_all(mul(va, vb)));
  CHECK(va.grad().values() == b.values());
  CHECK(vb.grad().values() == a.values());
}

TEST_CASE("reduce sum / mean / max") {
  Tensor<double> t({2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(reduce(t, {1}, ReduceKind::sum).values() == std::vector<double>{3, 7});
  CHECK(reduce(t, {0}, ReduceKind::sum).values() == std::vector<double>{4, 6});

  auto c = Tensor<double>::full({3, 4, 5}, 2.5);
  auto m = reduce(c, {0, 1, 2}, ReduceKind::mean);
  CHECK(m.rank() == 0);
  CHECK(m[0] == doctest::Approx(2.5));

  auto r = random_tensor<double>({4, 5, 6}, 11);
  auto mx = reduce(r, {1}, ReduceKind::max);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 6; ++k) {
      double best = -1e300;
      for (std::size_t j = 0; j < 5; ++j) best = std::max(best, r.at({i, j, k}));
      CHECK(mx.at({i, k}) == best);
    }

  CHECK_THROWS_AS(reduce(t, {2}, ReduceKind::sum), AxisError);
  CHECK_THROWS_AS(reduce(t, {1, 1}, ReduceKind::sum), AxisError);
}

TEST_CASE("backward basics") {
  SUBCASE("sum") {
    Tape<double> tape;
    auto x = tape.variable(Tensor<double>({3}, 0.5));
    tape.backward(sum_all(x));
    CHECK(x.grad().values() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("sum of squares") {
    Tape<double> tape;
    auto x = tape.variable(Tensor<double>({2}, std::vector<double>{1, 2}));
    tape.backward(sum_all(mul(x, x)));
    CHECK(x.grad().values() == std::vector<double>{2, 4});
  }
  SUBCASE("fan-out accumulates") {
    Tape<double> tape;
    auto x = tape.variable(Tensor<double>({4}, 1.0));
    tape.backward(add(sum_all(x), sum_all(x)));
    for (double g : x.grad().data()) CHECK(g == 2.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape<double> tape;
    auto x = tape.variable(Tensor<double>({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
  SUBCASE("empty tape is rejected") {
    Tape<double> tape;
    Tape<double> other;
    auto x = other.variable(Tensor<double>::scalar(1.0));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
}

TEST_CASE("grad_check on composed graphs") {
  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> linear =
      [](Tape<double>&, const std::vector<Var<double>>& v) { return sum_all(v[0]); };
  // Dyadic inputs and a power-of-two step keep every sum exact, so only the
  // checker's own arithmetic is measured.
  auto dyadic = Tensor<double>::generate({3, 4}, [](std::size_t i) { return (double(i % 7) - 3.0) / 8.0; });
  CHECK(grad_check<double>(linear, {dyadic}, std::ldexp(1.0, -17)) <= 1e-12);
  // With the default step, rounding in the summation is all that remains.
  CHECK(grad_check<double>(linear, {random_tensor({3, 4}, 1)}) <= 1e-9);

  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> sig =
      [](Tape<double>&, const std::vector<Var<double>>& v) { return sum_all(sigmoid(v[0])); };
  CHECK(grad_check<double>(sig, {random_tensor({5, 3}, 2)}) <= 1e-6);

  const auto w = random_tensor({3, 4}, 9);
  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> composed =
      [&w](Tape<double>&, const std::vector<Var<double>>& v) {
        auto a = mul(v[0], v[1]);
        auto b = sub(a, scale(v[0], 0.3));
        auto c = add_scalar(mul(b, b), 1.0);
        auto r = reduce(c, {1}, ReduceKind::max);
        auto m = reduce(reshape(c, {12}), {0}, ReduceKind::mean);
        return add(weighted_sum(c, w), add(sum_all(r), m));
      };
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    CHECK(grad_check<double>(composed, {random_tensor({3, 4}, seed),
                                        random_tensor({3, 4}, seed + 100)}) <= 1e-4);
  }

  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> not_scalar =
      [](Tape<double>&, const std::vector<Var<double>>& v) { return v[0]; };
  CHECK_THROWS_AS(grad_check<double>(not_scalar, {random_tensor({2}, 1)}), ContractError);
}

TEST_CASE("grad has the value's shape before and after backward") {
  Tape<float> tape;
  auto x = tape.variable(Tensor<float>({2, 3}, 1.0f));
  CHECK(x.grad().shape() == x.value().shape());
  tape.backward(sum_all(scale(x, 2.0f)));
  CHECK(x.grad().shape() == x.value().shape());
  CHECK(x.grad()[0] == 2.0f);
}
