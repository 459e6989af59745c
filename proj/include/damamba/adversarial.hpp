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

#pragma once

#include "damamba/nn.hpp"

namespace damamba {

struct DiscriminatorConfig {
  double grl_lambda = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
};

/// Fully convolutional per-pixel domain head; logits (B,2,H,W). The gradient
/// reversal is applied by the caller so the head itself stays a plain
/// classifier.
class LocalDiscriminator : public Module {
 public:
  LocalDiscriminator(int64_t channels, std::mt19937_64& rng);
  Var forward(const Var& feat) const;

 private:
  std::shared_ptr<Conv2dLayer> c1_, c2_, c3_;
};

/// Image-level domain head: global average pool, two-layer MLP, one logit
/// per image (B,1).
class GlobalDiscriminator : public Module {
 public:
  GlobalDiscriminator(int64_t channels, std::mt19937_64& rng,
                      int64_t hidden = 256);
  Var forward(const Var& feat) const;

 private:
  std::shared_ptr<Linear> fc1_, fc2_;
};

/// Mean softmax cross-entropy of per-pixel 2-class logits against one domain
/// label (0 = source, 1 = target).
Var domain_ce(const Var& logits, int label);

/// Binary focal loss on a single logit per image; p_t is the probability
/// assigned to the true domain.
Var focal_loss(const Var& logit, int label, double gamma, double alpha);

struct AdvLossResult {
  Var loss;
  double local_ce = 0, global_fl = 0;
  double local_acc = 0, global_acc = 0;
};

/// Eq: pixel-level CE plus image-level focal loss, each averaged over the
/// two domains. Logits must already sit behind the gradient reversal.
AdvLossResult adv_loss(const Var& local_s, const Var& local_t,
                       const Var& global_s, const Var& global_t,
                       const DiscriminatorConfig& cfg);

}  // namespace damamba
