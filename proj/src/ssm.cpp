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

#include "damamba/ssm.hpp"

#include <cmath>
#include <stdexcept>

namespace damamba {

Var flatten_spatial(const Var& x) {
  const Shape& s = x.shape();
  return reshape(x, {s[0], s[1], s[2] * s[3]});
}

Var unflatten_spatial(const Var& x, int64_t h, int64_t w) {
  const Shape& s = x.shape();
  return reshape(x, {s[0], s[1], h, w});
}

SsmLayer::SsmLayer(int64_t channels, int64_t state_dim, std::mt19937_64& rng)
    : channels_(channels), state_dim_(state_dim) {
  Tensor alog({channels, state_dim});
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t n = 0; n < state_dim; ++n)
      alog.at(c, n) = std::log(static_cast<double>(n + 1));
  a_log = make_param("a_log", std::move(alog));
  d_skip = make_param("d_skip", Tensor::full({channels}, 1.0));

  delta_proj_ = std::make_shared<Linear>(channels, channels, rng);
  b_proj_ = std::make_shared<Linear>(channels, state_dim, rng);
  c_proj_ = std::make_shared<Linear>(channels, state_dim, rng);
  register_module("delta_proj", delta_proj_);
  register_module("b_proj", b_proj_);
  register_module("c_proj", c_proj_);

  // softplus(bias) spans [1e-3, 1e-1] so the discretized pole starts stable
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
  Tensor& db = delta_proj_->bias.val_mut();
  for (int64_t c = 0; c < channels; ++c) {
    double dt = std::exp(u(rng));
    db[c] = std::log(std::expm1(dt));
  }
}

Var SsmLayer::forward(const Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != channels_)
    throw std::invalid_argument("SsmLayer expects (B,C,L) with C=" +
                                std::to_string(channels_));
  int64_t B = s[0], C = s[1], L = s[2];
  Var tokens = reshape(permute(x, {0, 2, 1}), {B * L, C});
  // the clamp keeps delta strictly positive when softplus underflows
  Var delta_t =
      clamp_min(softplus(delta_proj_->forward(tokens)), 1e-12);  // (B*L, C)
  Var b_t = b_proj_->forward(tokens);                           // (B*L, N)
  Var c_t = c_proj_->forward(tokens);                           // (B*L, N)
  Var delta = permute(reshape(delta_t, {B, L, C}), {0, 2, 1});  // (B,C,L)
  Var bmat = permute(reshape(b_t, {B, L, state_dim_}), {0, 2, 1});
  Var cmat = permute(reshape(c_t, {B, L, state_dim_}), {0, 2, 1});
  Var a = neg(exp(a_log));
  return selective_scan(x, delta, a, bmat, cmat, d_skip);
}

Var cosine_similarity_map(const Var& z_s, const Var& z_t) {
  if (z_s.shape() != z_t.shape())
    throw std::invalid_argument("cosine map inputs must match shapes");
  Var dot = sum_axes(mul(z_s, z_t), {1}, true);
  Var ns = sum_axes(mul(z_s, z_s), {1}, true);
  Var nt = sum_axes(mul(z_t, z_t), {1}, true);
  return div(dot, sqrt(add_scalar(mul(ns, nt), 1e-24)));
}

DaSpatialSsm::DaSpatialSsm(int64_t channels, int64_t state_dim,
                           std::mt19937_64& rng) {
  conv_seq_ = std::make_shared<Conv2dLayer>(channels, channels, /*kh=*/1,
                                            /*kw=*/3, /*stride=*/1,
                                            /*pad_h=*/0, /*pad_w=*/1, rng,
                                            /*groups=*/static_cast<int>(channels));
  conv_dw_ = std::make_shared<Conv2dLayer>(channels, channels, 3, 1, 1, rng,
                                           static_cast<int>(channels));
  scan_ = std::make_shared<SsmLayer>(channels, state_dim, rng);
  register_module("conv_seq", conv_seq_);
  register_module("conv_dw", conv_dw_);
  register_module("scan", scan_);
}

Var DaSpatialSsm::scan_path(const Var& z) const {
  const Shape& s = z.shape();
  int64_t h = s[2], w = s[3];
  // 1D depthwise conv along the flattened sequence
  Var seq = reshape(flatten_spatial(z), {s[0], s[1], 1, h * w});
  Var c1 = silu(conv_seq_->forward(seq));
  Var spat = conv_dw_->forward(unflatten_spatial(
      reshape(c1, {s[0], s[1], h * w}), h, w));
  Var y = scan_->forward(flatten_spatial(spat));
  return unflatten_spatial(y, h, w);
}

std::pair<Var, Var> DaSpatialSsm::forward_pair(const Var& z_s, const Var& z_t,
                                               bool reweight) const {
  if (z_s.shape() != z_t.shape())
    throw std::invalid_argument("spatial scan inputs must match shapes");
  Var ys = scan_path(z_s);
  Var yt = scan_path(z_t);
  if (!reweight) return {ys, yt};
  Var cos = cosine_similarity_map(ys, yt);
  Var wmap = mul_scalar(add_scalar(cos, 1.0), 0.5);
  return {mul(ys, wmap), mul(yt, wmap)};
}

Var DaSpatialSsm::forward_single(const Var& z) const { return scan_path(z); }

DaChannelSsm::DaChannelSsm(int64_t channels, int64_t state_dim,
                           std::mt19937_64& rng) {
  if (channels % 4 != 0)
    throw std::invalid_argument(
        "channel scan requires channel count divisible by 4, got " +
        std::to_string(channels));
  scan_ = std::make_shared<SsmLayer>(1, state_dim, rng);
  recal_ = std::make_shared<Conv2dLayer>(channels, channels, 1, 1, 0, rng);
  register_module("scan", scan_);
  register_module("recal", recal_);
}

std::pair<Var, Var> DaChannelSsm::interleave(const Var& z_s, const Var& z_t) {
  int64_t c = z_s.shape()[1];
  if (c % 4 != 0) throw std::invalid_argument("channels not divisible by 4");
  int64_t q = c / 4;
  auto seg = [q](const Var& z, int i) { return slice(z, 1, i * q, q); };
  Var s_mix = concat({seg(z_s, 0), seg(z_t, 1), seg(z_s, 2), seg(z_t, 3)}, 1);
  Var t_mix = concat({seg(z_t, 0), seg(z_s, 1), seg(z_t, 2), seg(z_s, 3)}, 1);
  return {s_mix, t_mix};
}

Var DaChannelSsm::scan_path(const Var& z) const {
  const Shape& s = z.shape();
  int64_t B = s[0], C = s[1], h = s[2], w = s[3];
  // each location's channel vector becomes a scalar-token sequence
  Var seq = reshape(permute(z, {0, 2, 3, 1}), {B * h * w, 1, C});
  Var y = scan_->forward(seq);
  Var back = permute(reshape(y, {B, h, w, C}), {0, 3, 1, 2});
  return recal_->forward(back);
}

std::pair<Var, Var> DaChannelSsm::forward_pair(const Var& z_s, const Var& z_t,
                                               bool swap) const {
  Var in_s = z_s, in_t = z_t;
  if (swap) std::tie(in_s, in_t) = interleave(z_s, z_t);
  return {scan_path(in_s), scan_path(in_t)};
}

Var DaChannelSsm::forward_single(const Var& z) const { return scan_path(z); }

MambaMixerBlock::MambaMixerBlock(int64_t channels, int64_t state_dim,
                                 std::mt19937_64& rng) {
  norm_ = std::make_shared<LayerNormChannel>(channels);
  spatial_ = std::make_shared<DaSpatialSsm>(channels, state_dim, rng);
  channel_ = std::make_shared<DaChannelSsm>(channels, state_dim, rng);
  transform_ = std::make_shared<Conv2dLayer>(channels, channels, 1, 1, 0, rng);
  proj_spatial_ =
      std::make_shared<Conv2dLayer>(2 * channels, channels, 1, 1, 0, rng);
  proj_channel_ =
      std::make_shared<Conv2dLayer>(2 * channels, channels, 1, 1, 0, rng);
  register_module("norm", norm_);
  register_module("spatial", spatial_);
  register_module("channel", channel_);
  register_module("transform", transform_);
  register_module("proj_spatial", proj_spatial_);
  register_module("proj_channel", proj_channel_);
}

Var MambaMixerBlock::fuse(const Var& input, const Var& sp, const Var& ch,
                          const Var& normed) const {
  Var tr = silu(transform_->forward(normed));
  Var a = proj_spatial_->forward(concat({sp, tr}, 1));
  Var b = proj_channel_->forward(concat({ch, tr}, 1));
  return add(add(a, b), input);
}

std::pair<Var, Var> MambaMixerBlock::forward_pair(const Var& z_s,
                                                  const Var& z_t,
                                                  bool da_enabled) const {
  Var ns = norm_->forward(z_s);
  Var nt = norm_->forward(z_t);
  auto [sp_s, sp_t] = spatial_->forward_pair(ns, nt, da_enabled);
  auto [ch_s, ch_t] = channel_->forward_pair(ns, nt, da_enabled);
  return {fuse(z_s, sp_s, ch_s, ns), fuse(z_t, sp_t, ch_t, nt)};
}

Var MambaMixerBlock::forward_single(const Var& z) const {
  Var n = norm_->forward(z);
  return fuse(z, spatial_->forward_single(n), channel_->forward_single(n), n);
}

}  // namespace damamba
