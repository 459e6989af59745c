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

#include <array>
#include <functional>

#include "damamba/attention.hpp"
#include "damamba/ssm.hpp"

namespace damamba {

/// Six-stage hybrid backbone configuration. Stages 1-2 are convolutional
/// stems, stages 3-6 interleave mixer and self-attention blocks. Channel
/// width doubles each stage up to max_channels; every stage halves the
/// spatial resolution.
struct BackboneConfig {
  int64_t base_channels = 8;
  std::array<int, 6> depths = {1, 1, 1, 1, 1, 1};
  int heads = 2;
  int64_t state_dim = 4;
  int mlp_ratio = 2;
  int64_t max_channels = 1024;

  /// Channel count of a 1-based stage.
  int64_t stage_channels(int stage) const;

  /// Reference configurations at publication scale.
  static BackboneConfig small_ref();
  static BackboneConfig base_ref();
  /// Desk-scale default used by the synthetic benchmark.
  static BackboneConfig tiny();
};

/// Per-stage features for a paired forward pass. dom_st / dom_ts are the
/// cross-domain dominant branches (query from source resp. target); they are
/// only defined at stages where they are computed.
struct StageFeatures {
  Var z_s, z_t;
  Var dom_st, dom_ts;
};

struct FeatureSet {
  std::array<StageFeatures, 6> stages;
  StageFeatures& stage(int k) { return stages[static_cast<size_t>(k - 1)]; }
  const StageFeatures& stage(int k) const {
    return stages[static_cast<size_t>(k - 1)];
  }
};

/// Optional hook applied to the target features right after the entropy tap
/// stages (2, 4, 6); returns the (possibly perturbed) features to propagate.
using StageHook =
    std::function<Var(int stage, const Var& z_t, const Var& dom_st,
                      const Var& dom_ts)>;

class HdamtBackbone : public Module {
 public:
  HdamtBackbone(const BackboneConfig& cfg, std::mt19937_64& rng);

  /// Paired two-domain pass. da_scan enables the cross-domain scanning
  /// coupling inside the mixer blocks; with_dominants enables the
  /// cross-attention dominant branches. All parameters are shared between
  /// the domains.
  FeatureSet forward_train(const Var& img_s, const Var& img_t, bool da_scan,
                           bool with_dominants, const StageHook& hook = {});

  /// Single-domain pass (inference and source-only training); returns the
  /// six stage features.
  std::array<Var, 6> forward_single(const Var& img);

  const BackboneConfig& config() const { return cfg_; }

  /// Statistics-only target-domain batch norms for the entropy tap stages;
  /// slot 0, 1, 2 correspond to stages 2, 4, 6.
  BatchNorm2d& margin_stats(int slot) { return *margin_bn_[slot]; }

 private:
  struct ConvStage {
    std::shared_ptr<Conv2dLayer> down;
    std::shared_ptr<BatchNorm2d> down_bn;
    std::vector<std::shared_ptr<Conv2dLayer>> convs;
    std::vector<std::shared_ptr<BatchNorm2d>> bns;
  };
  struct HybridStage {
    std::shared_ptr<Conv2dLayer> down;
    std::shared_ptr<BatchNorm2d> down_bn;
    std::vector<std::shared_ptr<MambaMixerBlock>> mixers;
    std::vector<std::shared_ptr<SelfAttentionBlock>> attns;
    std::shared_ptr<MultiheadAttention> cross;
  };

  Var conv_stage_forward(ConvStage& st, const Var& x);
  Var hybrid_down(HybridStage& st, const Var& x);

  BackboneConfig cfg_;
  std::array<ConvStage, 2> stems_;
  std::array<HybridStage, 4> hybrids_;
  std::shared_ptr<MultiheadAttention> tap2_;
  std::array<std::shared_ptr<BatchNorm2d>, 3> margin_bn_;
};

}  // namespace damamba
