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

#include "damamba/adversarial.hpp"

#include <stdexcept>

namespace damamba {

LocalDiscriminator::LocalDiscriminator(int64_t channels,
                                       std::mt19937_64& rng) {
  c1_ = std::make_shared<Conv2dLayer>(channels, channels, 1, 1, 0, rng);
  c2_ = std::make_shared<Conv2dLayer>(channels, channels, 3, 1, 1, rng);
  c3_ = std::make_shared<Conv2dLayer>(channels, 2, 1, 1, 0, rng);
  register_module("c1", c1_);
  register_module("c2", c2_);
  register_module("c3", c3_);
}

Var LocalDiscriminator::forward(const Var& feat) const {
  Var h = leaky_relu(c1_->forward(feat), 0.2);
  h = leaky_relu(c2_->forward(h), 0.2);
  return c3_->forward(h);
}

GlobalDiscriminator::GlobalDiscriminator(int64_t channels,
                                         std::mt19937_64& rng,
                                         int64_t hidden) {
  fc1_ = std::make_shared<Linear>(channels, hidden, rng);
  fc2_ = std::make_shared<Linear>(hidden, 1, rng);
  register_module("fc1", fc1_);
  register_module("fc2", fc2_);
}

Var GlobalDiscriminator::forward(const Var& feat) const {
  // (B,C,H,W) -> GAP -> (B,C)
  Var pooled = mean_axes(feat, {2, 3}, /*keepdim=*/false);
  return fc2_->forward(leaky_relu(fc1_->forward(pooled), 0.2));
}

Var domain_ce(const Var& logits, int label) {
  if (label != 0 && label != 1)
    throw std::invalid_argument("domain_ce: label must be 0 or 1");
  Var ls = log_softmax(logits, 1);
  Var picked = slice(ls, 1, label, 1);
  return neg(mean(picked));
}

Var focal_loss(const Var& logit, int label, double gamma, double alpha) {
  if (label != 0 && label != 1)
    throw std::invalid_argument("focal_loss: label must be 0 or 1");
  Var p = sigmoid(logit);
  Var p_t = label == 1 ? p : sub(constant(Tensor::scalar(1.0)), p);
  Var one_minus = sub(constant(Tensor::scalar(1.0)), p_t);
  Var weight = pow_scalar(one_minus, gamma);
  Var ce = neg(log(clamp_min(p_t, 1e-12)));
  return mul_scalar(mean(mul(weight, ce)), alpha);
}

namespace {
double local_accuracy(const Tensor& logits, int label) {
  const auto& s = logits.shape();  // (B,2,H,W)
  int64_t B = s[0], H = s[2], W = s[3];
  int64_t hits = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        int pred = logits.at(b, 1, y, x) > logits.at(b, 0, y, x) ? 1 : 0;
        if (pred == label) ++hits;
      }
  return static_cast<double>(hits) / static_cast<double>(B * H * W);
}

double global_accuracy(const Tensor& logit, int label) {
  int64_t hits = 0;
  for (int64_t i = 0; i < logit.numel(); ++i)
    if ((logit[i] > 0.0 ? 1 : 0) == label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(logit.numel());
}
}  // namespace

AdvLossResult adv_loss(const Var& local_s, const Var& local_t,
                       const Var& global_s, const Var& global_t,
                       const DiscriminatorConfig& cfg) {
  if (!local_s.defined() || !local_t.defined() || !global_s.defined() ||
      !global_t.defined())
    throw std::invalid_argument("adv_loss: missing branch");
  Var ce = mul_scalar(add(domain_ce(local_s, 0), domain_ce(local_t, 1)), 0.5);
  Var fl = mul_scalar(
      add(focal_loss(global_s, 0, cfg.focal_gamma, cfg.focal_alpha),
          focal_loss(global_t, 1, cfg.focal_gamma, cfg.focal_alpha)),
      0.5);
  AdvLossResult out;
  out.loss = add(ce, fl);
  out.local_ce = ce.val().item();
  out.global_fl = fl.val().item();
  out.local_acc = 0.5 * (local_accuracy(local_s.val(), 0) +
                         local_accuracy(local_t.val(), 1));
  out.global_acc = 0.5 * (global_accuracy(global_s.val(), 0) +
                          global_accuracy(global_t.val(), 1));
  return out;
}

}  // namespace damamba
