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

#include "damamba/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace damamba {

MultiheadAttention::MultiheadAttention(int64_t channels, int heads,
                                       std::mt19937_64& rng)
    : channels_(channels), heads_(heads) {
  if (channels % heads != 0)
    throw std::invalid_argument("channels must be divisible by heads");
  q_ = std::make_shared<Linear>(channels, channels, rng);
  k_ = std::make_shared<Linear>(channels, channels, rng);
  v_ = std::make_shared<Linear>(channels, channels, rng);
  o_ = std::make_shared<Linear>(channels, channels, rng);
  register_module("q", q_);
  register_module("k", k_);
  register_module("v", v_);
  register_module("o", o_);
}

Var MultiheadAttention::forward(const Var& q_in, const Var& kv_in,
                                Tensor* weights_out) const {
  const Shape& qs = q_in.shape();
  const Shape& ks = kv_in.shape();
  if (qs.size() != 4 || ks.size() != 4 || qs[0] != ks[0] || qs[1] != ks[1])
    throw std::invalid_argument("attention expects matching (B,C,H,W) maps");
  int64_t B = qs[0], C = qs[1];
  int64_t lq = qs[2] * qs[3], lk = ks[2] * ks[3];
  int64_t dh = C / heads_;

  auto to_heads = [&](const Var& x, const std::shared_ptr<Linear>& proj,
                      int64_t len) {
    // (B,C,H,W) -> (B*heads, len, dh)
    Var tokens = reshape(permute(reshape(x, {B, C, len}), {0, 2, 1}),
                         {B * len, C});
    Var p = proj->forward(tokens);
    return reshape(permute(reshape(p, {B, len, heads_, dh}), {0, 2, 1, 3}),
                   {B * heads_, len, dh});
  };

  Var q = to_heads(q_in, q_, lq);
  Var k = to_heads(kv_in, k_, lk);
  Var v = to_heads(kv_in, v_, lk);

  Var scores = mul_scalar(bmm(q, k, false, true), 1.0 / std::sqrt(double(dh)));
  Var attn = softmax(scores, 2);  // (B*heads, lq, lk)
  if (weights_out) *weights_out = attn.val();
  Var ctx = bmm(attn, v);  // (B*heads, lq, dh)
  Var merged = reshape(
      permute(reshape(ctx, {B, heads_, lq, dh}), {0, 2, 1, 3}), {B * lq, C});
  Var out = o_->forward(merged);
  return reshape(permute(reshape(out, {B, lq, C}), {0, 2, 1}),
                 {B, C, qs[2], qs[3]});
}

Var cross_attention(const MultiheadAttention& attn, const Var& query_dom,
                    const Var& kv_dom, Tensor* weights_out) {
  return add(attn.forward(query_dom, kv_dom, weights_out), query_dom);
}

SelfAttentionBlock::SelfAttentionBlock(int64_t channels, int heads,
                                       int64_t mlp_ratio,
                                       std::mt19937_64& rng) {
  norm1_ = std::make_shared<LayerNormChannel>(channels);
  norm2_ = std::make_shared<LayerNormChannel>(channels);
  attn_ = std::make_shared<MultiheadAttention>(channels, heads, rng);
  mlp1_ = std::make_shared<Conv2dLayer>(channels, channels * mlp_ratio, 1, 1,
                                        0, rng);
  mlp2_ = std::make_shared<Conv2dLayer>(channels * mlp_ratio, channels, 1, 1,
                                        0, rng);
  register_module("norm1", norm1_);
  register_module("norm2", norm2_);
  register_module("attn", attn_);
  register_module("mlp1", mlp1_);
  register_module("mlp2", mlp2_);
}

Var SelfAttentionBlock::forward(const Var& x) const {
  Var n1 = norm1_->forward(x);
  Var h = add(attn_->forward(n1, n1), x);
  Var n2 = norm2_->forward(h);
  return add(mlp2_->forward(silu(mlp1_->forward(n2))), h);
}

}  // namespace damamba
