#include <chrono>
#include <cmath>
#include <random>

#include "ctxrnn/context_track.hpp"
#include "ctxrnn/errors.hpp"
#include "ctxrnn/spectral.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxrnn;

namespace {

struct ConvTensors {
  Tensor dw1, pw1, pw1_b, proj1, dw2, pw2, pw2_b, reduce, reduce_b;

  std::vector<Tensor> flat() const { return {dw1, pw1, pw1_b, proj1, dw2, pw2, pw2_b, reduce, reduce_b}; }
};

ConvTensors zero_conv(std::size_t C, std::size_t k, std::size_t W, std::size_t u) {
  return {Tensor(Shape::matrix(5, k)),     Tensor(Shape::matrix(C, 5)), Tensor(Shape::vector(C)),
          Tensor(Shape::matrix(C, 5)),     Tensor(Shape::matrix(C, k)), Tensor(Shape::matrix(C, C)),
          Tensor(Shape::vector(C)),        Tensor(Shape::matrix(u + 2, C * W)), Tensor(Shape::vector(u + 2))};
}

ConvTensors random_conv(std::mt19937_64& rng, std::size_t C, std::size_t k, std::size_t W, std::size_t u) {
  ConvTensors t = zero_conv(C, k, W, u);
  for (Tensor* p : {&t.dw1, &t.pw1, &t.pw1_b, &t.proj1, &t.dw2, &t.pw2, &t.pw2_b, &t.reduce, &t.reduce_b})
    *p = testutil::random_tensor(rng, p->shape, -0.6, 0.6);
  return t;
}

ConvStackParams conv_params(std::span<const Var> v) { return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]}; }

std::vector<Var> params(Tape& tape, const ConvTensors& t) {
  std::vector<Var> out;
  for (const Tensor& p : t.flat()) out.push_back(tape.param(p));
  return out;
}

}  // namespace

TEST_CASE("zero conv parameters give a zero context output") {
  std::mt19937_64 rng(1);
  Tape tape;
  const auto p = params(tape, zero_conv(8, 3, 6, 2));
  const Var stack = tape.constant(testutil::random_tensor(rng, Shape::matrix(5, 6), -3, 3));
  const ContextOutput out = context_conv_forward(stack, conv_params(p), 2);
  CHECK(out.r.size() == 2);
  for (double v : out.r.values()) CHECK(v == 0.0);
  CHECK(out.delta_alpha.value() == 0.0);
  CHECK(out.delta_beta.value() == 0.0);
}

TEST_CASE("identity conv with a mean-pool reduction returns channel means") {
  const std::size_t W = 4, C = 5, u = 1;
  ConvTensors t = zero_conv(C, 3, W, u);
  for (std::size_t c = 0; c < 5; ++c) {
    t.dw1.at(c, 1) = 1.0;
    t.pw1.at(c, c) = 1.0;
  }
  for (std::size_t r = 0; r < u + 2; ++r)
    for (std::size_t w = 0; w < W; ++w) t.reduce.at(r, r * W + w) = 1.0 / W;
  const std::vector<double> x = {1.0, -2.0, 3.0,  0.5,    // channel 0
                                 -1.0, -1.0, -1.0, -1.0,  // channel 1
                                 4.0, 0.0,  -4.0, 2.0,    // channel 2
                                 9.0, 9.0,  9.0,  9.0,  0.0, 0.0, 0.0, 0.0};
  Tape tape;
  const auto p = params(tape, t);
  const ContextOutput out = context_conv_forward(tape.constant(Shape::matrix(5, W), x), conv_params(p), u);
  // Hand trace: block1 = relu(x), block2 = relu(0 + block1) = block1,
  // row r of the reduction averages channel r.
  CHECK(out.r.value() == doctest::Approx((1.0 + 3.0 + 0.5) / 4.0));
  CHECK(out.delta_alpha.value() == 0.0);
  CHECK(out.delta_beta.value() == doctest::Approx(6.0 / 4.0));
}

TEST_CASE("context conv gradients") {
  std::mt19937_64 rng(7);
  const std::size_t W = 6, C = 4, u = 2;
  const ConvTensors t = random_conv(rng, C, 3, W, u);
  const Tensor stack = testutil::random_tensor(rng, Shape::matrix(5, W), -2, 2);
  auto fn = [&](Tape& tape, std::span<const Var> v) {
    const ContextOutput out = context_conv_forward(tape.constant(stack), conv_params(v), u);
    return add(add(mean(out.r), scale(out.delta_alpha, 0.3)), scale(out.delta_beta, 0.7));
  };
  CHECK(grad_check(fn, t.flat()) <= 1e-4);

  // Through the spectral features of a parameterized raw window.
  std::vector<Tensor> with_input = t.flat();
  with_input.push_back(Tensor::vector(testutil::random_vector(rng, W, 0.2, 1.5)));
  auto chain = [&](Tape&, std::span<const Var> v) {
    const ContextOutput out = context_conv_forward(spectral_features(v[9]), conv_params(v), u);
    return mean(out.r);
  };
  CHECK(grad_check(chain, with_input) <= 1e-4);
}

TEST_CASE("context conv shape errors") {
  Tape tape;
  const auto p = params(tape, zero_conv(4, 3, 6, 2));
  CHECK_THROWS_AS(context_conv_forward(tape.constant(Tensor(Shape::matrix(5, 5))), conv_params(p), 2), ShapeError);
  CHECK_THROWS_AS(context_conv_forward(tape.constant(Tensor(Shape::matrix(5, 6))), conv_params(p), 3), ShapeError);
  CHECK_THROWS_AS(context_conv_forward(tape.constant(Tensor(Shape::vector(6))), conv_params(p), 2), ShapeError);
}

TEST_CASE("assemble_context") {
  Tape tape;
  const Var ab = tape.constant(Tensor::vector({1.0, 2.0})), cd = tape.constant(Tensor::vector({3.0, 4.0}));
  const std::vector<Var> one = {ab};
  const Var single = assemble_context(one, 1);
  CHECK(std::vector<double>(single.values().begin(), single.values().end()) == std::vector<double>{1, 2});
  const std::vector<Var> two = {ab, cd}, swapped = {cd, ab};
  const Var r = assemble_context(two, 2);
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{1, 2, 3, 4});
  const Var s = assemble_context(swapped, 2);
  CHECK(std::vector<double>(s.values().begin(), s.values().end()) != std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(assemble_context(two, 3), ShapeError);
}

TEST_CASE("modulate") {
  Tape tape;
  std::mt19937_64 rng(3);
  const auto rv = testutil::random_vector(rng, 12, -5, 5);
  const Var r = tape.constant(Shape::vector(12), rv);
  const Var same = modulate(r, tape.constant(Tensor(Shape::vector(12), 1.0)));
  for (std::size_t i = 0; i < 12; ++i) CHECK(same.value(i) == rv[i]);

  const Var m = modulate(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4})));
  CHECK(m.value(0) == 3.0);
  CHECK(m.value(1) == 8.0);

  for (int trial = 0; trial < 200; ++trial) {
    const auto x = testutil::random_vector(rng, 6, -10, 10);
    const auto g = testutil::random_vector(rng, 6, -0.999, 0.999);
    const Var out = modulate(tape.constant(Shape::vector(6), x), tape.constant(Shape::vector(6), g));
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(out.value(i) == x[i] * g[i]);
      if (x[i] != 0.0) CHECK(std::abs(out.value(i)) < std::abs(x[i]));
    }
  }
  CHECK_THROWS_AS(modulate(r, tape.constant(Tensor::vector({1.0}))), ShapeError);
}

TEST_CASE("context track cost is linear in the batch size") {
  const std::size_t W = 24, C = 8, u = 2, steps = 1000;
  std::mt19937_64 rng(5);
  const ConvTensors t = random_conv(rng, C, 3, W, u);
  const auto window = testutil::random_vector(rng, W, 0.5, 2.0);
  auto run = [&](std::size_t K) {
    const auto start = std::chrono::steady_clock::now();
    Tape tape;
    for (std::size_t s = 0; s < steps; ++s) {
      tape.clear();
      const auto p = params(tape, t);
      std::vector<Var> parts;
      for (std::size_t k = 0; k < K; ++k)
        parts.push_back(context_conv_forward(spectral_features(tape.constant(Shape::vector(W), window)), conv_params(p), u).r);
      (void)assemble_context(parts, K);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  std::vector<double> ratios;
  for (int rep = 0; rep < 3; ++rep) ratios.push_back(run(30) / run(15));
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] <= 2.5);
}
