#include <doctest.h>

#include <cmath>

#include "athresh/ops.hpp"
#include "athresh/rng.hpp"
#include "athresh/tensor.hpp"

using namespace athresh;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape helpers") {
  CHECK(numel({2, 3, 4}) == 24);
  CHECK(numel({}) == 1);
  CHECK(row_major_strides({2, 3, 4}) == std::vector<index_t>{12, 4, 1});
  CHECK(shape_str({2, 3}) == "[2x3]");
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{3}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("scalar access and guards") {
  Tensor s = Tensor::scalar(4.5);
  CHECK(s.value() == 4.5);
  Tensor v(Shape{3}, {1, 2, 3});
  CHECK_THROWS_AS(v.value(), ContractError);
  CHECK_THROWS_AS(v.grad(), ContractError);
}

TEST_CASE("elementwise forward values") {
  Tensor x(Shape{3}, {0.0, 1.0, -1.0});
  CHECK(sigmoid(x)[0] == doctest::Approx(0.5));
  CHECK(athresh::exp(Tensor::scalar(1.0)).value() == doctest::Approx(2.718282).epsilon(1e-6));
  Tensor a(Shape{2}, {1.0, 2.0});
  Tensor b(Shape{2}, {3.0, 5.0});
  CHECK((a + b).values() == std::vector<double>{4.0, 7.0});
  CHECK((a * 2.0).values() == std::vector<double>{2.0, 4.0});
  CHECK((1.0 - a).values() == std::vector<double>{0.0, -1.0});
}

TEST_CASE("broadcast restricted to scalar or equal shapes") {
  Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  Tensor row(Shape{2}, {1, 1});
  CHECK_THROWS_AS(add(a, row), ShapeError);
  CHECK((a + Tensor::scalar(1.0)).values() == std::vector<double>{2, 3, 4, 5});
}

TEST_CASE("domain guards") {
  CHECK_THROWS_AS(athresh::log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(athresh::log(Tensor::scalar(-1.0)), DomainError);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
}

TEST_CASE("sigmoid derivative at zero") {
  Tensor x = Tensor::scalar(0.0);
  Tape tape;
  tape.watch(x);
  Tensor y = sigmoid(x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("matmul values and errors") {
  Tensor eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor x(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(eye, x).values() == x.values());
  Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  Tensor ones(Shape{2, 1}, {1, 1});
  CHECK(matmul(a, ones).values() == std::vector<double>{3, 7});
  CHECK_THROWS_AS(matmul(a, Tensor(Shape{3, 2}, 1.0)), ShapeError);
}

TEST_CASE("reduce sum/mean/max") {
  Tensor v(Shape{3}, {1, 2, 3});
  CHECK(sum_all(v).value() == 6.0);
  Tensor half(Shape{4, 5}, 0.5);
  CHECK(mean_all(half).value() == 0.5);
  Tensor m(Shape{2, 3}, {1, 5, 2, 7, 0, 3});
  CHECK(reduce_sum(m, {1}).values() == std::vector<double>{8, 10});
  CHECK(reduce_max(m, {0}).values() == std::vector<double>{7, 5, 3});
  CHECK(reduce_mean(m, {0, 1}).value() == doctest::Approx(3.0));
  CHECK_THROWS_AS(reduce_sum(m, {2}), ShapeError);
  CHECK_THROWS_AS(reduce_sum(m, {0, 0}), ShapeError);
}

TEST_CASE("mean gradient is 1/N") {
  Tensor x(Shape{2, 4}, 3.0);
  Tape tape;
  tape.watch(x);
  Tensor y = mean_all(x);
  tape.backward(y);
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("softmax values") {
  Tensor z(Shape{3}, {0, 0, 0});
  for (double v : softmax(z, 0).values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  Tensor x(Shape{3}, {1, 2, 3});
  const auto y = softmax(x, 0).values();
  CHECK(y[0] == doctest::Approx(0.090031).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(0.244728).epsilon(1e-4));
  CHECK(y[2] == doctest::Approx(0.665241).epsilon(1e-4));

  // shift invariance
  Tensor xc(Shape{3}, {1 + 17.5, 2 + 17.5, 3 + 17.5});
  const auto yc = softmax(xc, 0).values();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y[i] - yc[i]) < 1e-6);

  // slices sum to one along a middle axis
  Rng rng(11);
  Tensor r(Shape{2, 4, 3});
  for (auto& v : r.mutable_values()) v = rng.uniform(-5, 5);
  Tensor s = softmax(r, 1);
  for (index_t o = 0; o < 2; ++o) {
    for (index_t i = 0; i < 3; ++i) {
      double sum = 0;
      for (index_t l = 0; l < 4; ++l) sum += s[(o * 4 + l) * 3 + i];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("layernorm statistics and guards") {
  Tensor g(Shape{4}, 1.0);
  Tensor b(Shape{4}, 0.0);
  Tensor c(Shape{4}, {5, 5, 5, 5});
  const auto y = layernorm(c, g, b, 0).values();
  for (double v : y) CHECK(v == doctest::Approx(0.0));

  Rng rng(3);
  Tensor x(Shape{6, 4});
  for (auto& v : x.mutable_values()) v = rng.uniform(-2, 2);
  Tensor n = layernorm(x, g, b, 1);
  for (index_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (index_t i = 0; i < 4; ++i) mean += n[r * 4 + i];
    mean /= 4;
    for (index_t i = 0; i < 4; ++i) var += (n[r * 4 + i] - mean) * (n[r * 4 + i] - mean);
    var /= 4;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-3);
  }
  Tensor one(Shape{6, 1});
  Tensor g1(Shape{1}, 1.0);
  CHECK_THROWS_AS(layernorm(one, g1, g1, 1), DegenerateInputError);
}

TEST_CASE("conv2d hand values") {
  // 1x1 identity kernel
  Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k1(Shape{1, 1, 1, 1}, {1.0});
  CHECK(conv2d(x, k1, 1, 0).values() == x.values());

  // 3x3 all-ones kernel on all-ones 5x5, padding 1: center value 9
  Tensor ones(Shape{1, 1, 5, 5}, 1.0);
  Tensor k3(Shape{1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(ones, k3, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 5, 5});
  CHECK(y[2 * 5 + 2] == 9.0);
  CHECK(y[0] == 4.0);  // corner sees a 2x2 window

  // stride-2 output size
  Tensor big(Shape{1, 1, 8, 8}, 1.0);
  CHECK(conv2d(big, k3, 2, 1).shape() == Shape{1, 1, 4, 4});

  // depthwise: groups == channels
  Tensor two(Shape{1, 2, 3, 3}, 1.0);
  Tensor dk(Shape{2, 1, 3, 3}, 1.0);
  Tensor dw = conv2d(two, dk, 1, 1, 2);
  CHECK(dw.shape() == Shape{1, 2, 3, 3});
  CHECK(dw[4] == 9.0);

  CHECK_THROWS_AS(conv2d(two, Tensor(Shape{2, 2, 3, 3}, 1.0), 1, 1, 2), ShapeError);
  CHECK_THROWS_AS(conv2d(two, Tensor(Shape{2, 2, 2, 2}, 1.0), 1, 0), ShapeError);
}

TEST_CASE("concat/split round-trip is bit-exact") {
  Rng rng(7);
  Tensor a(Shape{2, 3});
  Tensor b(Shape{1, 3});
  Tensor c(Shape{4, 3});
  for (auto* t : {&a, &b, &c}) {
    for (auto& v : t->mutable_values()) v = rng.uniform(-1, 1);
  }
  Tensor cat = concat({a, b, c}, 0);
  CHECK(cat.shape() == Shape{7, 3});
  auto parts = split(cat, {2, 1, 4}, 0);
  CHECK(parts[0].values() == a.values());
  CHECK(parts[1].values() == b.values());
  CHECK(parts[2].values() == c.values());

  CHECK_THROWS_AS(concat({a, Tensor(Shape{2, 4}, 1.0)}, 0), ShapeError);
  CHECK_THROWS_AS(split(cat, {3, 3}, 0), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x(Shape{4}, {1, 2, 3, 4});
  {
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(x);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
  }
  x.zero_grad();
  {
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 4, 6, 8});
  }
}

TEST_CASE("backward guards and accumulation") {
  Tensor x(Shape{2}, {1, 2});
  Tape tape;
  tape.watch(x);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar loss
  Tensor loss = sum_all(y);
  tape.backward(loss);
  CHECK(x.grad() == std::vector<double>{2, 4});
  tape.backward(loss);  // leaf grads accumulate
  CHECK(x.grad() == std::vector<double>{4, 8});
  tape.zero_grad();
  CHECK(x.grad() == std::vector<double>{0, 0});

  Tape empty;
  Tensor z = Tensor::scalar(1.0);
  empty.watch(z);
  CHECK_THROWS_AS(empty.backward(z), ContractError);  // empty tape
}

TEST_CASE("mixing tapes is rejected") {
  Tensor a = Tensor::scalar(1.0);
  Tensor b = Tensor::scalar(2.0);
  Tape t1, t2;
  t1.watch(a);
  t2.watch(b);
  CHECK_THROWS_AS(add(a, b), ContractError);
}

TEST_CASE("backward determinism") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x(Shape{5, 5});
    for (auto& v : x.mutable_values()) v = rng.uniform(-1, 1);
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(mul(sigmoid(x), x));
    tape.backward(loss);
    return x.grad();
  };
  CHECK(run(123) == run(123));
}

TEST_CASE("narrow, reshape, permute") {
  Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(narrow(a, 1, 1, 2).values() == std::vector<double>{2, 3, 5, 6});
  CHECK(reshape(a, {3, 2}).values() == a.values());
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
  CHECK(transpose(a).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
  Tensor t(Shape{2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(permute(t, {2, 0, 1}).values() == std::vector<double>{0, 2, 4, 6, 1, 3, 5, 7});
  CHECK_THROWS_AS(permute(t, {0, 0, 1}), ShapeError);
}

TEST_CASE("upsample bilinear exact cases") {
  // 2x upsample of a constant map stays constant
  Tensor c(Shape{1, 1, 3, 3}, 0.7);
  for (double v : upsample_bilinear(c, 6, 6).values()) CHECK(v == doctest::Approx(0.7));
  // identity when sizes match
  Tensor r(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(upsample_bilinear(r, 2, 2).values() == r.values());
}

TEST_SUITE_END();
