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

/// Multi-head scaled dot-product attention over (B,C,H,W) maps flattened to
/// spatial tokens. Queries come from `q_in`, keys/values from `kv_in`.
class MultiheadAttention : public Module {
 public:
  MultiheadAttention(int64_t channels, int heads, std::mt19937_64& rng);
  /// Returns the attended map (no residual). If `weights_out` is non-null it
  /// receives a copy of the (B*heads, Lq, Lk) attention weights.
  Var forward(const Var& q_in, const Var& kv_in,
              Tensor* weights_out = nullptr) const;

 private:
  int64_t channels_;
  int heads_;
  std::shared_ptr<Linear> q_, k_, v_, o_;
};

/// Attention with queries from `query_dom` and keys/values from `kv_dom`,
/// plus a residual from the query domain. This is the dominant-branch
/// constructor: (query=Z_s, kv=Z_t) yields the source-dominant branch.
Var cross_attention(const MultiheadAttention& attn, const Var& query_dom,
                    const Var& kv_dom, Tensor* weights_out = nullptr);

/// Pre-norm self-attention sublayer with a pointwise MLP.
class SelfAttentionBlock : public Module {
 public:
  SelfAttentionBlock(int64_t channels, int heads, int64_t mlp_ratio,
                     std::mt19937_64& rng);
  Var forward(const Var& x) const;

 private:
  std::shared_ptr<LayerNormChannel> norm1_, norm2_;
  std::shared_ptr<MultiheadAttention> attn_;
  std::shared_ptr<Conv2dLayer> mlp1_, mlp2_;
};

}  // namespace damamba
