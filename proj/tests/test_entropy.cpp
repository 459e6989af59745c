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

#include <cmath>
#include <map>

#include "damamba/entropy.hpp"
#include "support/gradcheck.hpp"

using namespace damamba;
using damamba::testing::gradcheck;

namespace {
std::mt19937_64 rng(4242);

// Mean of the negative tail of N(mu, sigma^2) by Simpson integration,
// independent of the closed form under test.
double tail_mean_numeric(double mu, double sigma) {
  const double lo = mu - 14.0 * sigma;
  const double hi = 0.0;
  const int steps = 200000;  // even
  const double h = (hi - lo) / steps;
  auto pdf = [&](double x) {
    double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
  };
  double mass = 0.0, moment = 0.0;
  for (int i = 0; i <= steps; ++i) {
    double x = lo + i * h;
    double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    mass += w * pdf(x);
    moment += w * x * pdf(x);
  }
  return moment / mass;
}
}  // namespace

TEST_CASE("margin closed form matches numeric integration") {
  CHECK(compute_margin(0.0, 1.0) == doctest::Approx(-0.79788).epsilon(1e-4));
  CHECK(compute_margin(0.0, 2.0) == doctest::Approx(-1.59577).epsilon(1e-4));
  CHECK(compute_margin(0.0, 1.0) ==
        doctest::Approx(tail_mean_numeric(0.0, 1.0)).epsilon(1e-8));

  std::uniform_real_distribution<double> um(-2.0, 2.0), us(0.2, 3.0);
  for (int i = 0; i < 20; ++i) {
    double mu = um(rng), sigma = us(rng);
    double ref = std::min(tail_mean_numeric(mu, sigma), 0.0);
    CHECK(compute_margin(mu, sigma) == doctest::Approx(ref).epsilon(1e-6));
  }

  // vanishing negative tail: m -> 0 from below as mu grows
  CHECK(compute_margin(100.0, 1.0) <= 0.0);
  CHECK(compute_margin(100.0, 1.0) > -0.02);
  CHECK(compute_margin(1e6, 1.0) > -1e-5);
  CHECK(compute_margin(5.0, 1.0) < 0.0);
  CHECK_THROWS(compute_margin(0.0, 0.0));
  CHECK_THROWS(compute_margin(0.0, -1.0));
}

TEST_CASE("margin relu lifts and is monotone") {
  Tensor m = Tensor::zeros({1, 1, 1, 1});
  m[0] = -1.0;
  Var x(Tensor::from({1, 1, 1, 3}, {-2.0, -0.5, 1.0}));
  Var y = margin_relu(x, m);
  CHECK(y.val()[0] == -1.0);
  CHECK(y.val()[1] == -0.5);
  CHECK(y.val()[2] == 1.0);

  // zero margin reduces to ReLU
  Tensor m0 = Tensor::zeros({1, 1, 1, 1});
  Var y0 = margin_relu(x, m0);
  CHECK(y0.val()[0] == 0.0);
  CHECK(y0.val()[1] == 0.0);
  CHECK(y0.val()[2] == 1.0);

  // monotone in x
  Tensor a = Tensor::randn({1, 2, 3, 3}, rng);
  Tensor b = a;
  for (int64_t i = 0; i < b.numel(); ++i) b[i] += 0.5;
  Tensor mm = margins_from_stats(Tensor::zeros({2}), Tensor::full({2}, 1.0));
  Var ya = margin_relu(Var(a), mm), yb = margin_relu(Var(b), mm);
  for (int64_t i = 0; i < ya.numel(); ++i)
    CHECK(ya.val()[i] <= yb.val()[i]);
}

TEST_CASE("channel normalization is a proper per-location softmax") {
  Tensor c = Tensor::full({1, 4, 2, 2}, 3.7);
  Var p = normalize_channels(Var(c));
  for (int64_t i = 0; i < p.numel(); ++i)
    CHECK(p.val()[i] == doctest::Approx(0.25).epsilon(1e-12));

  // shift invariance per location
  Tensor x = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor xs = x;
  for (int64_t k = 0; k < 4; ++k)
    for (int64_t i = 0; i < 4; ++i) xs[k * 4 + i] += 2.5;
  Var px = normalize_channels(Var(x)), ps = normalize_channels(Var(xs));
  for (int64_t i = 0; i < px.numel(); ++i)
    CHECK(px.val()[i] == doctest::Approx(ps.val()[i]).epsilon(1e-12));

  // saturation
  Tensor big = Tensor::zeros({1, 4, 1, 1});
  big[0] = 50.0;
  CHECK(normalize_channels(Var(big)).val()[0] ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uniform channels give ln K cross-entropies") {
  Tensor z = Tensor::full({2, 4, 3, 3}, 1.25);
  Tensor m = margins_from_stats(Tensor::zeros({4}), Tensor::full({4}, 1.0));
  EntropyMaps maps = ekd_entropy_pair(Var(z), Var(z), Var(z), m, 2);
  CHECK(maps.h_t_ts.shape() == Shape{2, 1, 3, 3});
  for (int64_t i = 0; i < maps.h_t_ts.numel(); ++i) {
    CHECK(maps.h_t_ts.val()[i] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6));
    CHECK(maps.h_t_st.val()[i] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }
}

TEST_CASE("entropy maps are nonnegative for random inputs") {
  Tensor m = margins_from_stats(Tensor::zeros({4}), Tensor::full({4}, 1.0));
  for (int it = 0; it < 10; ++it) {
    Tensor zt = Tensor::randn({1, 4, 2, 2}, rng);
    Tensor zts = Tensor::randn({1, 4, 2, 2}, rng);
    Tensor zst = Tensor::randn({1, 4, 2, 2}, rng);
    EntropyMaps maps = ekd_entropy_pair(Var(zt), Var(zts), Var(zst), m, 4);
    for (int64_t i = 0; i < maps.h_t_ts.numel(); ++i) {
      CHECK(maps.h_t_ts.val()[i] >= 0.0);
      CHECK(maps.h_t_st.val()[i] >= 0.0);
    }
  }
}

TEST_CASE("Gibbs: -sum p log q over the simplex is minimized at q = p") {
  // h_t_st with z_st = z_t equals the Shannon entropy of p(z_t); any other
  // distribution inside the log can only increase it.
  Tensor m = Tensor::zeros({1, 4, 1, 1});
  for (int64_t c = 0; c < 4; ++c) m[c] = -10.0;  // wide margins: no clipping
  Tensor zt = Tensor::randn({1, 4, 1, 1}, rng);
  double h_self =
      ekd_entropy_pair(Var(zt), Var(zt), Var(zt), m).h_t_st.val().item();
  for (int it = 0; it < 1000; ++it) {
    Tensor zst = Tensor::randn({1, 4, 1, 1}, rng);
    double h = ekd_entropy_pair(Var(zt), Var(zt), Var(zst), m)
                   .h_t_st.val()
                   .item();
    CHECK(h >= h_self - 1e-12);
  }
}

TEST_CASE("ekd loss matches the uniform-case value and is differentiable") {
  Tensor z = Tensor::full({1, 4, 2, 2}, 0.5);
  Tensor m = margins_from_stats(Tensor::zeros({4}), Tensor::full({4}, 1.0));
  std::vector<EntropyMaps> maps;
  for (int stage : {2, 4, 6})
    maps.push_back(ekd_entropy_pair(Var(z), Var(z), Var(z), m, stage));
  CHECK(ekd_loss(maps).val().item() ==
        doctest::Approx(6.0 * std::log(4.0)).epsilon(1e-6));
  CHECK(ekd_loss(maps).val().item() == doctest::Approx(8.3178).epsilon(1e-4));

  Tensor zt = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor zts = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor zst = Tensor::randn({1, 4, 2, 2}, rng);
  double err = gradcheck(
      [&](const std::vector<Var>& v) {
        std::vector<EntropyMaps> ms;
        for (int stage : {2, 4, 6})
          ms.push_back(ekd_entropy_pair(v[0], v[1], v[2], m, stage));
        return ekd_loss(ms);
      },
      {zt, zts, zst}, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("stop-teacher mode blocks gradients through the soft targets") {
  Tensor m = margins_from_stats(Tensor::zeros({4}), Tensor::full({4}, 1.0));
  Var zt(Tensor::randn({1, 4, 2, 2}, rng), true);
  Var zts(Tensor::randn({1, 4, 2, 2}, rng), true);
  Var zst(Tensor::randn({1, 4, 2, 2}, rng), true);
  EntropyMaps maps = ekd_entropy_pair(zt, zts, zst, m, 2, true);
  backward(mean(maps.h_t_ts));
  CHECK(zt.has_grad());
  CHECK_FALSE(zts.has_grad());
}

TEST_CASE("gating attention mixes the two maps through sigmoid(gamma)") {
  Tensor a = Tensor::randn({1, 1, 2, 2}, rng);
  Tensor b = Tensor::randn({1, 1, 2, 2}, rng);
  Var attn0 = gating_attention(Var(a), Var(b), Var(Tensor::scalar(0.0)));
  for (int64_t i = 0; i < 4; ++i)
    CHECK(attn0.val()[i] ==
          doctest::Approx(0.5 * (a[i] + b[i])).epsilon(1e-12));

  Var attn_hi = gating_attention(Var(a), Var(b), Var(Tensor::scalar(40.0)));
  for (int64_t i = 0; i < 4; ++i)
    CHECK(attn_hi.val()[i] == doctest::Approx(b[i]).epsilon(1e-12));

  // identical maps are a fixed point for any gamma
  Var attn_eq = gating_attention(Var(a), Var(a), Var(Tensor::scalar(-1.7)));
  for (int64_t i = 0; i < 4; ++i)
    CHECK(attn_eq.val()[i] == doctest::Approx(a[i]).epsilon(1e-12));

  double err = gradcheck(
      [&](const std::vector<Var>& v) {
        return mean(gating_attention(Var(a), Var(b), v[0]));
      },
      {Tensor::scalar(0.3)}, 1e-6);
  CHECK(err < 1e-10);
}

TEST_CASE("perturbation is the stated convex combination") {
  Tensor z = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor attn = Tensor::randn({1, 1, 2, 2}, rng);

  Var zero = ermp_perturb(Var(z), Var(attn), 0.0);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(zero.val()[i] == z[i]);

  Var one = ermp_perturb(Var(z), Var(attn), 1.0);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t i = 0; i < 4; ++i)
      CHECK(one.val()[c * 4 + i] == doctest::Approx(attn[i]).epsilon(1e-12));

  Var mid = ermp_perturb(Var(z), Var(attn), 0.3);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t i = 0; i < 4; ++i) {
      double lo = std::min(z[c * 4 + i], attn[i]);
      double hi = std::max(z[c * 4 + i], attn[i]);
      CHECK(mid.val()[c * 4 + i] >= lo - 1e-12);
      CHECK(mid.val()[c * 4 + i] <= hi + 1e-12);
    }

  CHECK_THROWS(ermp_perturb(Var(z), Var(attn), 1.5));

  double err = gradcheck(
      [&](const std::vector<Var>& v) {
        return mean(mul(ermp_perturb(v[0], v[1], 0.3),
                        ermp_perturb(v[0], v[1], 0.3)));
      },
      {z, attn}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("stage draw is uniform over {2,4,6}") {
  std::mt19937_64 r(123);
  std::map<int, int> counts;
  for (int i = 0; i < 3000; ++i) counts[draw_ermp_stage(r)]++;
  CHECK(counts.size() == 3);
  for (int stage : {2, 4, 6}) {
    CHECK(counts[stage] >= 900);
    CHECK(counts[stage] <= 1100);
  }
}

TEST_CASE("ermp gate starts unbiased") {
  ErmpGate gate;
  CHECK(gate.sigma_gamma() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gate.gamma.requires_grad());
}
