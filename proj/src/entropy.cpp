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

#include "damamba/entropy.hpp"

#include <cmath>
#include <stdexcept>

namespace damamba {

double compute_margin(double mu, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("compute_margin: sigma <= 0");
  const double r = mu / sigma;
  double m;
  if (r > 30.0) {
    // far right: Phi(-r) underflows; use the Mills-ratio asymptotic
    m = -sigma / r;
  } else {
    const double phi = std::exp(-0.5 * r * r) / std::sqrt(2.0 * M_PI);
    const double tail = 0.5 * std::erfc(r / std::sqrt(2.0));
    m = mu - sigma * phi / tail;
  }
  return std::min(m, 0.0);
}

Tensor margins_from_stats(const Tensor& mean, const Tensor& var, double eps) {
  const int64_t C = mean.numel();
  Tensor m = Tensor::zeros({1, C, 1, 1});
  for (int64_t c = 0; c < C; ++c)
    m[c] = compute_margin(mean[c], std::sqrt(var[c] + eps));
  return m;
}

Var margin_relu(const Var& x, const Tensor& margins) {
  return maximum(x, constant(margins));
}

Var normalize_channels(const Var& x) { return softmax(x, 1); }

EntropyMaps ekd_entropy_pair(const Var& z_t, const Var& z_ts, const Var& z_st,
                             const Tensor& margins, int stage,
                             bool stop_teacher) {
  if (z_t.shape() != z_ts.shape() || z_t.shape() != z_st.shape())
    throw std::invalid_argument("ekd_entropy_pair: shape mismatch");
  Var p_t = normalize_channels(margin_relu(z_t, margins));
  Var p_ts = normalize_channels(margin_relu(z_ts, margins));
  Var p_st = normalize_channels(margin_relu(z_st, margins));
  if (stop_teacher) {
    p_ts = detach(p_ts);
  }
  Var log_t = log(clamp_min(p_t, 1e-8));
  Var log_st = log(clamp_min(p_st, 1e-8));
  Var teacher_t = stop_teacher ? detach(p_t) : p_t;
  EntropyMaps maps;
  maps.stage = stage;
  maps.h_t_ts = neg(sum_axes(mul(p_ts, log_t), {1}, /*keepdim=*/true));
  maps.h_t_st = neg(sum_axes(mul(teacher_t, log_st), {1}, /*keepdim=*/true));
  return maps;
}

Var ekd_loss(const std::vector<EntropyMaps>& maps) {
  if (maps.empty()) throw std::invalid_argument("ekd_loss: no stages");
  Var total;
  for (const auto& m : maps) {
    Var term = mean(add(m.h_t_ts, m.h_t_st));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Var gating_attention(const Var& h_t_st, const Var& h_t_ts, const Var& gamma) {
  Var g = sigmoid(gamma);
  return add(mul(sub(constant(Tensor::scalar(1.0)), g), h_t_st),
             mul(g, h_t_ts));
}

int draw_ermp_stage(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  return 2 * (pick(rng) + 1);
}

Var ermp_perturb(const Var& z_t, const Var& attn, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("ermp_perturb: alpha outside [0,1]");
  if (alpha == 0.0) return z_t;
  return add(mul_scalar(z_t, 1.0 - alpha), mul_scalar(attn, alpha));
}

ErmpGate::ErmpGate() { gamma = make_param("gamma", Tensor::scalar(0.0)); }

double ErmpGate::sigma_gamma() const {
  return 1.0 / (1.0 + std::exp(-gamma.val().item()));
}

}  // namespace damamba
