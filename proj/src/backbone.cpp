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

#include "damamba/backbone.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace damamba {

int64_t BackboneConfig::stage_channels(int stage) const {
  int64_t ch = base_channels << (stage - 1);
  return std::min(ch, max_channels);
}

BackboneConfig BackboneConfig::small_ref() {
  BackboneConfig c;
  c.base_channels = 96;
  c.depths = {2, 2, 7, 5, 2, 2};
  c.heads = 8;
  c.state_dim = 16;
  c.mlp_ratio = 4;
  return c;
}

BackboneConfig BackboneConfig::base_ref() {
  BackboneConfig c;
  c.base_channels = 128;
  c.depths = {2, 2, 10, 5, 2, 2};
  c.heads = 8;
  c.state_dim = 16;
  c.mlp_ratio = 4;
  return c;
}

BackboneConfig BackboneConfig::tiny() { return BackboneConfig{}; }

HdamtBackbone::HdamtBackbone(const BackboneConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  int64_t prev = 3;
  for (int k = 1; k <= 2; ++k) {
    ConvStage& st = stems_[static_cast<size_t>(k - 1)];
    int64_t ch = cfg.stage_channels(k);
    std::string pre = "stage" + std::to_string(k) + ".";
    st.down = std::make_shared<Conv2dLayer>(prev, ch, 3, 2, 1, rng);
    st.down_bn = std::make_shared<BatchNorm2d>(ch);
    register_module(pre + "down", st.down);
    register_module(pre + "down_bn", st.down_bn);
    for (int d = 0; d < cfg.depths[static_cast<size_t>(k - 1)]; ++d) {
      st.convs.push_back(std::make_shared<Conv2dLayer>(ch, ch, 3, 1, 1, rng));
      st.bns.push_back(std::make_shared<BatchNorm2d>(ch));
      register_module(pre + "conv" + std::to_string(d), st.convs.back());
      register_module(pre + "bn" + std::to_string(d), st.bns.back());
    }
    prev = ch;
  }
  tap2_ = std::make_shared<MultiheadAttention>(cfg.stage_channels(2),
                                               cfg.heads, rng);
  register_module("stage2.tap", tap2_);
  for (int k = 3; k <= 6; ++k) {
    HybridStage& st = hybrids_[static_cast<size_t>(k - 3)];
    int64_t ch = cfg.stage_channels(k);
    std::string pre = "stage" + std::to_string(k) + ".";
    st.down = std::make_shared<Conv2dLayer>(prev, ch, 3, 2, 1, rng);
    st.down_bn = std::make_shared<BatchNorm2d>(ch);
    register_module(pre + "down", st.down);
    register_module(pre + "down_bn", st.down_bn);
    for (int d = 0; d < cfg.depths[static_cast<size_t>(k - 1)]; ++d) {
      st.mixers.push_back(
          std::make_shared<MambaMixerBlock>(ch, cfg.state_dim, rng));
      st.attns.push_back(std::make_shared<SelfAttentionBlock>(
          ch, cfg.heads, cfg.mlp_ratio, rng));
      register_module(pre + "mixer" + std::to_string(d), st.mixers.back());
      register_module(pre + "attn" + std::to_string(d), st.attns.back());
    }
    st.cross = std::make_shared<MultiheadAttention>(ch, cfg.heads, rng);
    register_module(pre + "cross", st.cross);
    prev = ch;
  }
  for (int slot = 0; slot < 3; ++slot) {
    int stage = 2 * (slot + 1);
    margin_bn_[static_cast<size_t>(slot)] = std::make_shared<BatchNorm2d>(
        cfg.stage_channels(stage), /*affine=*/false);
    register_module("margin_bn" + std::to_string(stage),
                    margin_bn_[static_cast<size_t>(slot)]);
  }
}

Var HdamtBackbone::conv_stage_forward(ConvStage& st, const Var& x) {
  Var y = silu(st.down_bn->forward(st.down->forward(x)));
  for (size_t i = 0; i < st.convs.size(); ++i)
    y = silu(st.bns[i]->forward(st.convs[i]->forward(y)));
  return y;
}

Var HdamtBackbone::hybrid_down(HybridStage& st, const Var& x) {
  return silu(st.down_bn->forward(st.down->forward(x)));
}

namespace {
int margin_slot(int stage) { return stage / 2 - 1; }
}  // namespace

FeatureSet HdamtBackbone::forward_train(const Var& img_s, const Var& img_t,
                                        bool da_scan, bool with_dominants,
                                        const StageHook& hook) {
  FeatureSet fs;
  Var zs = img_s, zt = img_t;
  for (int k = 1; k <= 2; ++k) {
    ConvStage& st = stems_[static_cast<size_t>(k - 1)];
    zs = conv_stage_forward(st, zs);
    zt = conv_stage_forward(st, zt);
    fs.stage(k).z_s = zs;
    fs.stage(k).z_t = zt;
  }
  // Entropy tap at the last stem stage: a dedicated cross-attention pair
  // that is not propagated forward.
  if (with_dominants) {
    fs.stage(2).dom_st = cross_attention(*tap2_, zs, zt);
    fs.stage(2).dom_ts = cross_attention(*tap2_, zt, zs);
  }
  if (training()) margin_bn_[0]->observe(zt.val());
  if (hook && with_dominants)
    zt = hook(2, zt, fs.stage(2).dom_st, fs.stage(2).dom_ts);

  Var prev_st, prev_ts;
  for (int k = 3; k <= 6; ++k) {
    HybridStage& st = hybrids_[static_cast<size_t>(k - 3)];
    Var down_s = hybrid_down(st, zs);
    Var down_t = hybrid_down(st, zt);
    Var bs = down_s, bt = down_t;
    for (size_t d = 0; d < st.mixers.size(); ++d) {
      auto [ms, mt] = st.mixers[d]->forward_pair(bs, bt, da_scan);
      bs = st.attns[d]->forward(ms);
      bt = st.attns[d]->forward(mt);
    }
    zs = bs;
    zt = bt;
    fs.stage(k).z_s = zs;
    fs.stage(k).z_t = zt;
    if (with_dominants) {
      Var dom_st = cross_attention(*st.cross, zs, zt);
      Var dom_ts = cross_attention(*st.cross, zt, zs);
      if (prev_st.defined()) {
        // carry the previous dominant forward through the stage's shared
        // downsampling conv (statistics-free path: conv then activation)
        dom_st = mul_scalar(
            add(dom_st, silu(st.down->forward(prev_st))), 0.5);
        dom_ts = mul_scalar(
            add(dom_ts, silu(st.down->forward(prev_ts))), 0.5);
      }
      fs.stage(k).dom_st = dom_st;
      fs.stage(k).dom_ts = dom_ts;
      prev_st = dom_st;
      prev_ts = dom_ts;
    }
    if (k == 4 || k == 6) {
      if (training())
        margin_bn_[static_cast<size_t>(margin_slot(k))]->observe(zt.val());
      if (hook && with_dominants)
        zt = hook(k, zt, fs.stage(k).dom_st, fs.stage(k).dom_ts);
    }
  }
  return fs;
}

std::array<Var, 6> HdamtBackbone::forward_single(const Var& img) {
  std::array<Var, 6> out;
  Var z = img;
  for (int k = 1; k <= 2; ++k) {
    z = conv_stage_forward(stems_[static_cast<size_t>(k - 1)], z);
    out[static_cast<size_t>(k - 1)] = z;
  }
  for (int k = 3; k <= 6; ++k) {
    HybridStage& st = hybrids_[static_cast<size_t>(k - 3)];
    z = hybrid_down(st, z);
    for (size_t d = 0; d < st.mixers.size(); ++d) {
      z = st.mixers[d]->forward_single(z);
      z = st.attns[d]->forward(z);
    }
    out[static_cast<size_t>(k - 1)] = z;
  }
  return out;
}

}  // namespace damamba
