// Copyright 2026 DA-Mamba Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "damamba/nn.hpp"
#include "damamba/ops.hpp"
#include "support/gradcheck.hpp"

using namespace damamba;
using damamba::testing::gradcheck;

namespace {
std::mt19937_64 rng(12345);
}

TEST_CASE("broadcast elementwise forward") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  Var r = add(constant(a), constant(b));
  CHECK(r.val().at(0, 0) == 11);
  CHECK(r.val().at(1, 2) == 36);

  Tensor c = Tensor::from({2, 1}, {100, 200});
  Var s = mul(constant(a), constant(c));
  CHECK(s.val().at(0, 2) == 300);
  CHECK(s.val().at(1, 0) == 800);
}

TEST_CASE("binary op gradients with broadcasting") {
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  Tensor b = Tensor::randn({3, 1}, rng);
  using Bin = Var (*)(const Var&, const Var&);
  Bin div_fn = damamba::div;
  for (Bin fn : {static_cast<Bin>(add), static_cast<Bin>(sub),
                 static_cast<Bin>(mul), div_fn, static_cast<Bin>(maximum)}) {
    Tensor bb = b;
    if (fn == div_fn)
      for (int64_t i = 0; i < bb.numel(); ++i) bb[i] = 2.0 + std::abs(bb[i]);
    double err = gradcheck(
        [&](const std::vector<Var>& v) { return sum(mul(fn(v[0], v[1]), v[0])); },
        {a, bb});
    CHECK(err < 1e-7);
  }
}

TEST_CASE("unary op gradients") {
  Tensor x = Tensor::randn({3, 5}, rng, 0.8);
  using Fn = Var (*)(const Var&);
  std::vector<Fn> fns = {exp, sigmoid, silu, softplus, relu, huber};
  for (auto fn : fns) {
    double err = gradcheck(
        [&](const std::vector<Var>& v) { return sum(mul(fn(v[0]), v[0])); },
        {x});
    CHECK(err < 1e-7);
  }
  Tensor pos(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) pos[i] = 0.5 + std::abs(x[i]);
  CHECK(gradcheck([](const std::vector<Var>& v) { return sum(log(v[0])); },
                  {pos}) < 1e-7);
  CHECK(gradcheck([](const std::vector<Var>& v) { return sum(sqrt(v[0])); },
                  {pos}) < 1e-7);
  CHECK(gradcheck(
            [](const std::vector<Var>& v) { return sum(pow_scalar(v[0], 2.5)); },
            {pos}) < 1e-7);
}

TEST_CASE("reductions and reshape") {
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var m = mean_axes(v[0], {0, 2}, true);
              return sum(mul(m, m));
            },
            {x}) < 1e-7);
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var r = reshape(v[0], {6, 4});
              return mean(mul(r, r));
            },
            {x}) < 1e-7);
}

TEST_CASE("permute round trip and gradient") {
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Var p = permute(constant(x), {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.val().at(1, 0, 2) == x.at(0, 2, 1));
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var p2 = permute(v[0], {1, 2, 0});
              return sum(mul(p2, p2));
            },
            {x}) < 1e-7);
}

TEST_CASE("concat and slice") {
  Tensor a = Tensor::randn({2, 2, 3}, rng);
  Tensor b = Tensor::randn({2, 4, 3}, rng);
  Var c = concat({constant(a), constant(b)}, 1);
  CHECK(c.shape() == Shape{2, 6, 3});
  CHECK(c.val().at(1, 3, 2) == b.at(1, 1, 2));
  Var s = slice(c, 1, 2, 4);
  CHECK(s.val().at(0, 0, 0) == b.at(0, 0, 0));
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var cc = concat({v[0], v[1]}, 1);
              Var ss = slice(cc, 1, 1, 4);
              return sum(mul(ss, ss));
            },
            {a, b}) < 1e-7);
}

TEST_CASE("matmul and bmm gradients") {
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({4, 2}, rng);
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              return sum(matmul(v[0], v[1]));
            },
            {a, b}) < 1e-7);
  Tensor ba = Tensor::randn({2, 3, 4}, rng);
  Tensor bb = Tensor::randn({2, 4, 5}, rng);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Tensor A = ta ? Tensor::randn({2, 4, 3}, rng) : ba;
      Tensor B = tb ? Tensor::randn({2, 5, 4}, rng) : bb;
      CHECK(gradcheck(
                [ta, tb](const std::vector<Var>& v) {
                  Var r = bmm(v[0], v[1], ta, tb);
                  return sum(mul(r, r));
                },
                {A, B}) < 1e-7);
    }
}

TEST_CASE("softmax and log_softmax") {
  Tensor x = Tensor::randn({2, 5, 3}, rng, 2.0);
  Var sm = softmax(constant(x), 1);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 3; ++i) {
      double s = 0;
      for (int64_t k = 0; k < 5; ++k) s += sm.val().at(b, k, i);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var y = softmax(v[0], 1);
              return sum(mul(y, v[0]));
            },
            {x}) < 1e-7);
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var y = log_softmax(v[0], 1);
              return sum(mul(y, v[0]));
            },
            {x}) < 1e-7);
}

TEST_CASE("conv2d matches direct computation and gradients") {
  Tensor x = Tensor::randn({2, 3, 5, 5}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
  Tensor b = Tensor::randn({4}, rng);
  Var y = conv2d(constant(x), constant(w), constant(b), 1, 1, 1);
  CHECK(y.shape() == Shape{2, 4, 5, 5});
  // direct check at one output location
  double ref = b[1];
  for (int c = 0; c < 3; ++c)
    for (int ki = 0; ki < 3; ++ki)
      for (int kj = 0; kj < 3; ++kj) {
        int ii = 2 + ki - 1, jj = 3 + kj - 1;
        ref += x.at(1, c, ii, jj) * w.at(1, c, ki, kj);
      }
  CHECK(y.val().at(1, 1, 2, 3) == doctest::Approx(ref).epsilon(1e-12));

  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var r = conv2d(v[0], v[1], v[2], 2, 1, 1);
              return sum(mul(r, r));
            },
            {Tensor::randn({1, 2, 6, 6}, rng), Tensor::randn({3, 2, 3, 3}, rng),
             Tensor::randn({3}, rng)}) < 1e-6);
  // depthwise
  CHECK(gradcheck(
            [](const std::vector<Var>& v) {
              Var r = conv2d(v[0], v[1], Var(), 1, 1, 4);
              return sum(mul(r, r));
            },
            {Tensor::randn({1, 4, 4, 4}, rng),
             Tensor::randn({4, 1, 3, 3}, rng)}) < 1e-6);
}

TEST_CASE("grad reversal is identity forward, negated backward") {
  Tensor x = Tensor::randn({3, 3}, rng);
  for (double lam : {0.0, 0.5, 1.0}) {
    Var v(x, true);
    Var y = grad_reversal(v, lam);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.val()[i] == x[i]);
    Var loss = sum(mul(y, constant(x)));
    backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(v.grad()[i] == -lam * x[i]);
  }
}

TEST_CASE("select_columns gathers and scatters") {
  Tensor x = Tensor::randn({4, 3}, rng);
  std::vector<int> idx = {2, 0, 1, 1};
  Var v(x, true);
  Var y = select_columns(v, idx);
  CHECK(y.val()[0] == x.at(0, 2));
  CHECK(y.val()[3] == x.at(3, 1));
  backward(sum(y));
  CHECK(v.grad().at(0, 2) == 1.0);
  CHECK(v.grad().at(0, 0) == 0.0);
}

TEST_CASE("batch norm and layer norm gradcheck through composition") {
  std::mt19937_64 r2(7);
  Tensor x = Tensor::randn({2, 3, 2, 2}, rng);
  CHECK(gradcheck(
            [&](const std::vector<Var>& v) {
              BatchNorm2d bn(3);
              Var y = bn.forward(v[0]);
              return sum(mul(y, y));
            },
            {x}) < 1e-6);
  CHECK(gradcheck(
            [&](const std::vector<Var>& v) {
              LayerNormChannel ln(3);
              Var y = ln.forward(v[0]);
              return sum(mul(y, v[0]));
            },
            {x}) < 1e-6);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::randn({2, 2}, rng);
  NoGradGuard g;
  Var v(x, true);
  CHECK(!v.requires_grad());
  Var y = mul(v, v);
  CHECK(!y.requires_grad());
}
