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

#include <random>
#include <vector>

#include "damamba/nn.hpp"

namespace damamba {

/// Mean of the negative tail of N(mu, sigma^2), clamped to <= 0. Used as the
/// per-channel margin for the margin ReLU. Throws if sigma <= 0.
double compute_margin(double mu, double sigma);

/// Per-channel margins (1,C,1,1) from batch-norm running statistics; sigma
/// is sqrt(var + eps) so the precondition sigma > 0 always holds. Constants:
/// gradients never flow into the statistics.
Tensor margins_from_stats(const Tensor& mean, const Tensor& var,
                          double eps = 1e-5);

/// Elementwise max(x, m_c) with a per-channel margin.
Var margin_relu(const Var& x, const Tensor& margins);

/// Channel-axis softmax per spatial location of a (B,C,H,W) map.
Var normalize_channels(const Var& x);

/// The two cross-entropy maps of a tap stage, each (B,1,H,W), entries >= 0.
struct EntropyMaps {
  int stage = 0;
  Var h_t_ts;  // -sum_k p(z_ts) log p(z_t)
  Var h_t_st;  // -sum_k p(z_t)  log p(z_st)
};

/// stop_teacher detaches the distribution outside each log (the soft
/// target), leaving gradients only through the student branch.
EntropyMaps ekd_entropy_pair(const Var& z_t, const Var& z_ts, const Var& z_st,
                             const Tensor& margins, int stage = 0,
                             bool stop_teacher = false);

/// Distillation loss: per stage the spatial + batch mean of the two maps'
/// sum, summed over the tap stages.
Var ekd_loss(const std::vector<EntropyMaps>& maps);

/// Attn = (1 - sigmoid(gamma)) * h_t_st + sigmoid(gamma) * h_t_ts.
Var gating_attention(const Var& h_t_st, const Var& h_t_ts, const Var& gamma);

/// One tap stage drawn uniformly from {2, 4, 6}.
int draw_ermp_stage(std::mt19937_64& rng);

/// z + alpha * (attn - z), with attn (B,1,H,W) broadcast across channels.
Var ermp_perturb(const Var& z_t, const Var& attn, double alpha);

/// Owns the learnable gate scalar of the perturbation attention.
class ErmpGate : public Module {
 public:
  ErmpGate();
  Var gamma;
  double sigma_gamma() const;
};

}  // namespace damamba
