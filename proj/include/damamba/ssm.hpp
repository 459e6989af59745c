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

/// Selective state-space layer over (B,C,L) sequences. Step size and the
/// input/output projections are data-dependent per token; the diagonal state
/// matrix is parameterized as -exp(a_log) so it stays negative.
class SsmLayer : public Module {
 public:
  SsmLayer(int64_t channels, int64_t state_dim, std::mt19937_64& rng);
  Var forward(const Var& x) const;

  Var a_log;   // (C,N)
  Var d_skip;  // (C)

 private:
  int64_t channels_, state_dim_;
  std::shared_ptr<Linear> delta_proj_, b_proj_, c_proj_;
};

/// Per-location cosine similarity of the channel vectors of two equally
/// shaped maps; (B,1,H,W), values in [-1,1], 0 where either vector is zero.
Var cosine_similarity_map(const Var& z_s, const Var& z_t);

/// Spatial scanning branch: depthwise 1D conv over the flattened sequence,
/// 3x3 depthwise conv in 2D, selective scan, then cross-domain cosine
/// reweighting with w = (1 + cos)/2.
class DaSpatialSsm : public Module {
 public:
  DaSpatialSsm(int64_t channels, int64_t state_dim, std::mt19937_64& rng);
  /// reweight=false skips the cross-domain coupling (ablation / identical
  /// behavior to two independent single passes).
  std::pair<Var, Var> forward_pair(const Var& z_s, const Var& z_t,
                                   bool reweight) const;
  Var forward_single(const Var& z) const;

 private:
  Var scan_path(const Var& z) const;
  std::shared_ptr<Conv2dLayer> conv_seq_, conv_dw_;
  std::shared_ptr<SsmLayer> scan_;
};

/// Channel scanning branch: contiguous channel quarters 2 and 4 are swapped
/// between the domains, each location's channel vector is scanned as a
/// sequence, and a 1x1 conv recalibrates.
class DaChannelSsm : public Module {
 public:
  DaChannelSsm(int64_t channels, int64_t state_dim, std::mt19937_64& rng);
  std::pair<Var, Var> forward_pair(const Var& z_s, const Var& z_t,
                                   bool swap) const;
  Var forward_single(const Var& z) const;

  /// The fixed segment swap; applying it twice restores the inputs.
  static std::pair<Var, Var> interleave(const Var& z_s, const Var& z_t);

 private:
  Var scan_path(const Var& z) const;
  std::shared_ptr<SsmLayer> scan_;
  std::shared_ptr<Conv2dLayer> recal_;
};

/// Three-branch mixer: spatial scan, channel scan, and a pointwise
/// transformation branch, fused by projected concatenation and elementwise
/// addition, with a residual from the block input.
class MambaMixerBlock : public Module {
 public:
  MambaMixerBlock(int64_t channels, int64_t state_dim, std::mt19937_64& rng);
  std::pair<Var, Var> forward_pair(const Var& z_s, const Var& z_t,
                                   bool da_enabled) const;
  Var forward_single(const Var& z) const;

 private:
  Var fuse(const Var& input, const Var& sp, const Var& ch,
           const Var& normed) const;
  std::shared_ptr<LayerNormChannel> norm_;
  std::shared_ptr<DaSpatialSsm> spatial_;
  std::shared_ptr<DaChannelSsm> channel_;
  std::shared_ptr<Conv2dLayer> transform_, proj_spatial_, proj_channel_;
};

/// (B,C,H,W) -> (B,C,H*W) and back.
Var flatten_spatial(const Var& x);
Var unflatten_spatial(const Var& x, int64_t h, int64_t w);

}  // namespace damamba
