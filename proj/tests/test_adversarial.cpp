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

#include "damamba/adversarial.hpp"
#include "support/gradcheck.hpp"

using namespace damamba;
using damamba::testing::gradcheck;

namespace {
std::mt19937_64 rng(31337);
}

TEST_CASE("local discriminator keeps spatial size and normalizes") {
  LocalDiscriminator disc(8, rng);
  Tensor x = Tensor::randn({2, 8, 5, 7}, rng);
  Var logits = disc.forward(Var(x));
  CHECK(logits.shape() == Shape{2, 2, 5, 7});
  Var p = softmax(logits, 1);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t y = 0; y < 5; ++y)
      for (int64_t xx = 0; xx < 7; ++xx)
        CHECK(p.val().at(b, 0, y, xx) + p.val().at(b, 1, y, xx) ==
              doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("global discriminator is pooling invariant") {
  GlobalDiscriminator disc(4, rng, 16);
  // constant features across the batch -> identical logits
  Tensor c = Tensor::full({3, 4, 2, 2}, 0.37);
  Var l = disc.forward(Var(c));
  CHECK(l.shape() == Shape{3, 1});
  CHECK(l.val()[0] == doctest::Approx(l.val()[1]).epsilon(1e-12));
  CHECK(l.val()[1] == doctest::Approx(l.val()[2]).epsilon(1e-12));

  // spatial permutation leaves the pooled logit unchanged
  Tensor x = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor xp = Tensor::zeros({1, 4, 2, 2});
  int perm[4] = {3, 1, 0, 2};
  for (int64_t ch = 0; ch < 4; ++ch)
    for (int64_t i = 0; i < 4; ++i)
      xp[ch * 4 + perm[i]] = x[ch * 4 + i];
  CHECK(disc.forward(Var(x)).val().item() ==
        doctest::Approx(disc.forward(Var(xp)).val().item()).epsilon(1e-12));
  CHECK(std::isfinite(disc.forward(Var(x)).val().item()));
}

TEST_CASE("focal loss closed form and reductions") {
  // p_t = 0.9 via logit = ln(9), true label 1, gamma=2, alpha=1
  Var logit(Tensor::full({1, 1}, std::log(9.0)));
  double fl = focal_loss(logit, 1, 2.0, 1.0).val().item();
  CHECK(fl == doctest::Approx(-0.01 * std::log(0.9)).epsilon(1e-10));
  CHECK(fl == doctest::Approx(0.0010536).epsilon(1e-4));

  // gamma=0, alpha=1 reduces to plain CE on a grid of probabilities
  for (int i = 1; i < 1000; ++i) {
    double p = i / 1000.0;
    Var lg(Tensor::full({1, 1}, std::log(p / (1.0 - p))));
    double f = focal_loss(lg, 1, 0.0, 1.0).val().item();
    CHECK(f == doctest::Approx(-std::log(p)).epsilon(1e-9));
  }
}

TEST_CASE("focal loss never exceeds alpha times CE") {
  for (int i = 1; i < 1000; ++i) {
    double p = i / 1000.0;
    Var lg(Tensor::full({1, 1}, std::log(p / (1.0 - p))));
    for (double g : {0.5, 2.0, 5.0}) {
      double f = focal_loss(lg, 1, g, 0.25).val().item();
      CHECK(f <= 0.25 * (-std::log(p)) + 1e-12);
    }
  }
}

TEST_CASE("domain CE and focal loss have FD-exact gradients") {
  Tensor local = Tensor::randn({1, 2, 3, 3}, rng);
  Tensor glob = Tensor::randn({2, 1}, rng);
  for (int label : {0, 1}) {
    double e1 = gradcheck(
        [&](const std::vector<Var>& v) { return domain_ce(v[0], label); },
        {local}, 1e-6);
    CHECK(e1 < 1e-6);
    double e2 = gradcheck(
        [&](const std::vector<Var>& v) {
          return focal_loss(v[0], label, 2.0, 0.25);
        },
        {glob}, 1e-6);
    CHECK(e2 < 1e-6);
  }
}

TEST_CASE("adv_loss is nonnegative and reports metrics") {
  LocalDiscriminator ld(4, rng);
  GlobalDiscriminator gd(4, rng, 8);
  Tensor f3s = Tensor::randn({2, 4, 3, 3}, rng);
  Tensor f3t = Tensor::randn({2, 4, 3, 3}, rng);
  Tensor f6s = Tensor::randn({2, 4, 1, 1}, rng);
  Tensor f6t = Tensor::randn({2, 4, 1, 1}, rng);
  DiscriminatorConfig cfg;
  auto res = adv_loss(ld.forward(Var(f3s)), ld.forward(Var(f3t)),
                      gd.forward(Var(f6s)), gd.forward(Var(f6t)), cfg);
  CHECK(res.loss.val().item() >= 0.0);
  CHECK(res.loss.val().item() ==
        doctest::Approx(res.local_ce + res.global_fl).epsilon(1e-12));
  CHECK(res.local_acc >= 0.0);
  CHECK(res.local_acc <= 1.0);
  CHECK(res.global_acc >= 0.0);
  CHECK(res.global_acc <= 1.0);
  CHECK_THROWS(adv_loss(Var(), ld.forward(Var(f3t)), gd.forward(Var(f6s)),
                        gd.forward(Var(f6t)), cfg));
}

TEST_CASE("gradient reversal flips the backbone-side gradient") {
  LocalDiscriminator ld(4, rng);
  Tensor feat = Tensor::randn({1, 4, 3, 3}, rng);

  Var x1(feat, true);
  backward(domain_ce(ld.forward(grad_reversal(x1, 1.0)), 0));
  Var x2(feat, true);
  backward(domain_ce(ld.forward(x2), 0));

  double dot = 0.0;
  for (int64_t i = 0; i < feat.numel(); ++i)
    dot += x1.grad()[i] * x2.grad()[i];
  CHECK(dot < 0.0);
  for (int64_t i = 0; i < feat.numel(); ++i)
    CHECK(x1.grad()[i] == doctest::Approx(-x2.grad()[i]).epsilon(1e-12));
}

TEST_CASE("one probe step helps the discriminator and hurts the backbone") {
  LocalDiscriminator ld(4, rng);
  GlobalDiscriminator gd(4, rng, 8);
  DiscriminatorConfig cfg;
  Tensor fs = Tensor::randn({2, 4, 3, 3}, rng);
  Tensor ft = Tensor::randn({2, 4, 3, 3}, rng);

  auto eval_loss = [&](const Var& xs, const Var& xt) {
    return adv_loss(ld.forward(grad_reversal(xs, cfg.grl_lambda)),
                    ld.forward(grad_reversal(xt, cfg.grl_lambda)),
                    gd.forward(grad_reversal(xs, cfg.grl_lambda)),
                    gd.forward(grad_reversal(xt, cfg.grl_lambda)), cfg)
        .loss;
  };

  // discriminator-side step: follow the gradient, loss must drop
  Var xs(fs), xt(ft);
  Var loss0 = eval_loss(xs, xt);
  backward(loss0);
  const double lr = 1e-2;
  std::vector<std::pair<std::string, Var>> params;
  for (auto& pv : ld.named_parameters()) params.push_back(pv);
  for (auto& pv : gd.named_parameters()) params.push_back(pv);
  for (auto& [n, p] : params)
    if (p.has_grad()) p.val_mut().add_(p.grad(), -lr);
  double after_disc = eval_loss(Var(fs), Var(ft)).val().item();
  CHECK(after_disc < loss0.val().item());
  // undo the discriminator step
  for (auto& [n, p] : params)
    if (p.has_grad()) p.val_mut().add_(p.grad(), lr);

  // backbone-side step: the reversed gradient points uphill for the
  // discriminator objective
  Var bs(fs, true), bt(ft, true);
  Var loss1 = eval_loss(bs, bt);
  backward(loss1);
  Tensor fs2 = fs, ft2 = ft;
  fs2.add_(bs.grad(), -lr);
  ft2.add_(bt.grad(), -lr);
  double after_backbone = eval_loss(Var(fs2), Var(ft2)).val().item();
  CHECK(after_backbone > loss1.val().item());
}
