#include <cmath>
#include <functional>
#include <random>

#include "ctxrnn/errors.hpp"
#include "ctxrnn/tape.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxrnn;
using testutil::random_size;
using testutil::random_tensor;

TEST_CASE("sigmoid closed forms") {
  Tape t;
  CHECK(sigmoid(t.scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid(t.scalar(std::log(3.0))).value() == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("matmul with identity returns the operand") {
  std::mt19937_64 rng(1);
  Tape t;
  Tensor eye(Shape::matrix(3, 3));
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor a = random_tensor(rng, Shape::matrix(3, 3));
  Var out = matmul(t.constant(eye), t.constant(a));
  CHECK(out.shape() == Shape::matrix(3, 3));
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.value(i) == a[i]);
}

TEST_CASE("conv1d_depthwise valid convolution by hand") {
  Tape t;
  Var y = conv1d_depthwise(t.constant(Tensor::vector({1, 3, 6})), t.constant(Tensor::vector({1, -1})),
                           Padding::valid);
  REQUIRE(y.size() == 2);
  CHECK(y.value(0) == 2.0);
  CHECK(y.value(1) == 3.0);
}

TEST_CASE("conv1d_depthwise same padding keeps length and centres the kernel") {
  Tape t;
  Var y = conv1d_depthwise(t.constant(Tensor::vector({1, 2, 3, 4})), t.constant(Tensor::vector({0, 1, 0})));
  REQUIRE(y.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.value(i) == static_cast<double>(i + 1));
}

TEST_CASE("backward on analytic derivatives") {
  Tape t;
  Var x = t.param(Tensor::scalar(3.0));
  Var y = mul(x, x);
  CHECK(t.backward(y)[x][0] == doctest::Approx(6.0));

  Tape t2;
  Var z = t2.param(Tensor::scalar(0.0));
  CHECK(t2.backward(sigmoid(z))[z][0] == doctest::Approx(0.25));
}

TEST_CASE("gradient of the loss w.r.t. itself is one") {
  Tape t;
  Var x = t.param(Tensor::vector({1.0, 2.0}));
  Var loss = mean(x);
  auto g = t.backward(loss);
  CHECK(g[loss][0] == 1.0);
  CHECK(g[x][0] == doctest::Approx(0.5));
}

TEST_CASE("mean of conv output w.r.t. kernel matches finite differences") {
  std::mt19937_64 rng(5);
  Tensor signal = random_tensor(rng, Shape::matrix(3, 12));
  Tensor kernel = random_tensor(rng, Shape::matrix(3, 3));
  auto f = [&](Tape& t, std::span<const Var> p) {
    Var y = conv1d_depthwise(t.constant(signal), p[0]);
    return mean(mul(y, y));
  };
  std::vector<Tensor> params{kernel};
  CHECK(grad_check(f, params, 1e-5) <= 1e-4);
}

TEST_CASE("grad_check on affine and constant functions") {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor(rng, Shape::vector(6));
  Tensor x = random_tensor(rng, Shape::vector(6));
  auto linear = [&](Tape& t, std::span<const Var> p) { return sum(mul(p[0], t.constant(x))); };
  std::vector<Tensor> params{w};
  CHECK(grad_check(linear, params, 1e-5) <= 1e-10);

  auto constant = [](Tape& t, std::span<const Var>) { return t.scalar(4.0); };
  CHECK(grad_check(constant, params, 1e-5) == 0.0);
}

TEST_CASE("grad_check rejects bad epsilon and non-deterministic functions") {
  std::vector<Tensor> params{Tensor::scalar(1.0)};
  auto f = [](Tape&, std::span<const Var> p) { return mul(p[0], p[0]); };
  CHECK_THROWS_AS(grad_check(f, params, 0.0), DomainError);
  CHECK_THROWS_AS(grad_check(f, params, 0.1), DomainError);
  int calls = 0;
  auto noisy = [&](Tape& t, std::span<const Var> p) { return add(p[0], t.scalar(++calls)); };
  CHECK_THROWS_AS(grad_check(noisy, params, 1e-5), std::runtime_error);
}

TEST_CASE("primitive error paths") {
  Tape t;
  Var a = t.constant(Tensor::vector({1, 2, 3}));
  Var b = t.constant(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(log(t.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(t.constant(Tensor::vector({-1.0}))), DomainError);
  CHECK_THROWS_AS(div(t.scalar(1.0), t.scalar(0.0)), DomainError);
  CHECK_THROWS_AS(slice(a, 2, 2), ShapeError);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
  Tape other;
  Var foreign = other.param(Tensor::scalar(1.0));
  CHECK_THROWS_AS(t.backward(foreign), std::invalid_argument);
  CHECK_THROWS_AS(add(a, other.constant(Tensor::vector({1, 2, 3}))), std::invalid_argument);
  CHECK_THROWS_AS(pinball(a, a, 1.0), DomainError);

  t.set_check_finite(true);
  CHECK_THROWS_AS(exp(t.scalar(1000.0)), NumericError);
  t.set_check_finite(false);
  CHECK_NOTHROW(exp(t.scalar(1000.0)));
}

TEST_CASE("shared subexpressions accumulate gradients") {
  std::mt19937_64 rng(9);
  Tensor x0 = random_tensor(rng, Shape::vector(5));

  Tape shared;
  Var xs = shared.param(x0);
  Var s = sigmoid(xs);
  auto gs = shared.backward(sum(mul(s, s)));

  Tape unrolled;
  Var xu = unrolled.param(x0);
  Var s1 = sigmoid(xu);
  Var s2 = sigmoid(xu);
  auto gu = unrolled.backward(sum(mul(s1, s2)));

  for (std::size_t i = 0; i < 5; ++i) CHECK(gs[xs][i] == doctest::Approx(gu[xu][i]).epsilon(1e-14));
}

TEST_CASE("forward results are bit-identical across runs") {
  std::mt19937_64 rng(4);
  Tensor w = random_tensor(rng, Shape::matrix(7, 9));
  Tensor x = random_tensor(rng, Shape::vector(9));
  auto run = [&] {
    Tape t;
    Var y = tanh(matmul(t.constant(w), t.constant(x)));
    Var z = spectral_features(y);
    return z.to_tensor().values;
  };
  CHECK(run() == run());
}

// Every primitive against central finite differences on random shapes.
namespace {

using Builder = std::function<Var(Tape&, std::span<const Var>)>;

void check_primitive(const char* name, std::size_t trials,
                     const std::function<std::vector<Tensor>(std::mt19937_64&)>& make_inputs,
                     const Builder& op) {
  double worst = 0.0;
  for (std::size_t seed = 0; seed < trials; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::vector<Tensor> inputs = make_inputs(rng);
    // Random projection so every output element carries a distinct weight.
    std::mt19937_64 prng(seed);
    Tensor probe;
    auto f = [&](Tape& t, std::span<const Var> p) {
      Var y = op(t, p);
      if (probe.size() != y.size()) probe = random_tensor(prng, y.shape());
      return sum(mul(y, t.constant(probe)));
    };
    worst = std::max(worst, grad_check(f, inputs, 1e-5));
  }
  INFO(name << " worst relative error " << worst);
  CHECK(worst <= 1e-4);
}

Shape random_vec(std::mt19937_64& rng) { return Shape::vector(random_size(rng, 1, 8)); }

}  // namespace

TEST_CASE("primitive gradients agree with finite differences on 100 random cases") {
  constexpr std::size_t kTrials = 100;
  auto two_like = [](std::mt19937_64& rng) {
    Shape s = random_vec(rng);
    return std::vector<Tensor>{random_tensor(rng, s), random_tensor(rng, s)};
  };
  auto one = [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, random_vec(rng))}; };

  check_primitive("add", kTrials, two_like, [](Tape&, std::span<const Var> p) { return add(p[0], p[1]); });
  check_primitive("sub", kTrials, two_like, [](Tape&, std::span<const Var> p) { return sub(p[0], p[1]); });
  check_primitive("mul", kTrials, two_like, [](Tape&, std::span<const Var> p) { return mul(p[0], p[1]); });
  check_primitive(
      "div", kTrials,
      [](std::mt19937_64& rng) {
        Shape s = random_vec(rng);
        return std::vector<Tensor>{random_tensor(rng, s), random_tensor(rng, s, 0.5, 2.0)};
      },
      [](Tape&, std::span<const Var> p) { return div(p[0], p[1]); });
  check_primitive("sigmoid", kTrials, one, [](Tape&, std::span<const Var> p) { return sigmoid(p[0]); });
  check_primitive("tanh", kTrials, one, [](Tape&, std::span<const Var> p) { return tanh(p[0]); });
  check_primitive("exp", kTrials, one, [](Tape&, std::span<const Var> p) { return exp(p[0]); });
  check_primitive("relu", kTrials, one, [](Tape&, std::span<const Var> p) { return relu(p[0]); });
  check_primitive("clamp", kTrials, one, [](Tape&, std::span<const Var> p) { return clamp(p[0], -0.5, 0.5); });
  check_primitive("scale_shift", kTrials, one,
                  [](Tape&, std::span<const Var> p) { return scale_shift(p[0], -1.7, 0.3); });
  check_primitive("mean", kTrials, one, [](Tape&, std::span<const Var> p) { return mean(p[0]); });
  check_primitive("sum", kTrials, one, [](Tape&, std::span<const Var> p) { return sum(p[0]); });
  check_primitive(
      "log", kTrials,
      [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, random_vec(rng), 0.2, 3.0)}; },
      [](Tape&, std::span<const Var> p) { return log(p[0]); });
  check_primitive("pinball", kTrials, two_like,
                  [](Tape&, std::span<const Var> p) { return pinball(p[0], p[1], 0.3); });
  check_primitive(
      "matmul", kTrials,
      [](std::mt19937_64& rng) {
        const std::size_t m = random_size(rng, 1, 6), k = random_size(rng, 1, 6), n = random_size(rng, 1, 4);
        Shape rhs = n == 1 ? Shape::vector(k) : Shape::matrix(k, n);
        return std::vector<Tensor>{random_tensor(rng, Shape::matrix(m, k)), random_tensor(rng, rhs)};
      },
      [](Tape&, std::span<const Var> p) { return matmul(p[0], p[1]); });
  check_primitive(
      "concat", kTrials,
      [](std::mt19937_64& rng) {
        return std::vector<Tensor>{random_tensor(rng, random_vec(rng)), random_tensor(rng, Shape::scalar()),
                                   random_tensor(rng, random_vec(rng))};
      },
      [](Tape&, std::span<const Var> p) { return concat(p); });
  check_primitive(
      "slice", kTrials,
      [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, Shape::matrix(6, 3))}; },
      [](Tape&, std::span<const Var> p) { return slice(p[0], 2, 3); });
  check_primitive(
      "reshape", kTrials,
      [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, Shape::vector(6))}; },
      [](Tape&, std::span<const Var> p) { return reshape(p[0], Shape::matrix(2, 3)); });
  check_primitive(
      "conv1d_depthwise", kTrials,
      [](std::mt19937_64& rng) {
        const std::size_t c = random_size(rng, 1, 4), l = random_size(rng, 3, 10), k = random_size(rng, 1, 3);
        return std::vector<Tensor>{random_tensor(rng, Shape::matrix(c, l)), random_tensor(rng, Shape::matrix(c, k))};
      },
      [](Tape&, std::span<const Var> p) { return conv1d_depthwise(p[0], p[1]); });
  check_primitive(
      "conv1d_pointwise", kTrials,
      [](std::mt19937_64& rng) {
        const std::size_t ci = random_size(rng, 1, 5), co = random_size(rng, 1, 5), l = random_size(rng, 1, 8);
        return std::vector<Tensor>{random_tensor(rng, Shape::matrix(ci, l)), random_tensor(rng, Shape::matrix(co, ci)),
                                   random_tensor(rng, Shape::vector(co))};
      },
      [](Tape&, std::span<const Var> p) { return conv1d_pointwise(p[0], p[1], p[2]); });
  check_primitive(
      "spectral_features", kTrials,
      [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, Shape::vector(random_size(rng, 2, 16)))}; },
      [](Tape&, std::span<const Var> p) { return spectral_features(p[0]); });
}
