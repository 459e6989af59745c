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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "damamba/backbone.hpp"
#include "support/gradcheck.hpp"

using namespace damamba;
using damamba::testing::gradcheck;

namespace {
std::mt19937_64 rng(99);

BackboneConfig micro() {
  BackboneConfig c;
  c.base_channels = 4;
  c.depths = {1, 1, 1, 1, 1, 1};
  c.heads = 1;
  c.state_dim = 2;
  c.mlp_ratio = 2;
  return c;
}
}  // namespace

TEST_CASE("attention preserves shape and rows of weights sum to one") {
  MultiheadAttention attn(8, 2, rng);
  Tensor x = Tensor::randn({1, 8, 3, 3}, rng);
  Tensor w;
  Var y = attn.forward(Var(x), Var(x), &w);
  CHECK(y.shape() == x.shape());
  // weights: (B*heads, L, L), each row a distribution over 9 tokens
  CHECK(w.shape() == Shape{2, 9, 9});
  for (int64_t h = 0; h < 2; ++h)
    for (int64_t i = 0; i < 9; ++i) {
      double s = 0;
      for (int64_t j = 0; j < 9; ++j) s += w.at(h, i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("attention gradient vs finite differences") {
  MultiheadAttention attn(4, 2, rng);
  Tensor q = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor kv = Tensor::randn({1, 4, 2, 2}, rng);
  double err = gradcheck(
      [&](const std::vector<Var>& v) {
        Var y = attn.forward(v[0], v[1]);
        return sum(mul(y, y));
      },
      {q, kv}, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("cross attention keeps the query-domain residual") {
  MultiheadAttention attn(4, 2, rng);
  Tensor q = Tensor::randn({1, 4, 2, 2}, rng);
  Tensor kv = Tensor::randn({1, 4, 2, 2}, rng);
  Var plain = attn.forward(Var(q), Var(kv));
  Var crossed = cross_attention(attn, Var(q), Var(kv));
  for (int64_t i = 0; i < plain.numel(); ++i)
    CHECK(crossed.val()[i] ==
          doctest::Approx(plain.val()[i] + q[i]).epsilon(1e-12));
}

TEST_CASE("self-attention block preserves shape and has FD-exact gradients") {
  SelfAttentionBlock blk(4, 2, 2, rng);
  Tensor x = Tensor::randn({1, 4, 3, 3}, rng);
  CHECK(blk.forward(Var(x)).shape() == x.shape());
  double err = gradcheck(
      [&](const std::vector<Var>& v) { return mean(mul(blk.forward(v[0]),
                                                       blk.forward(v[0]))); },
      {x}, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("stage channel progression doubles and saturates") {
  BackboneConfig c = BackboneConfig::small_ref();
  CHECK(c.stage_channels(1) == 96);
  CHECK(c.stage_channels(2) == 192);
  CHECK(c.stage_channels(3) == 384);
  CHECK(c.stage_channels(4) == 768);
  CHECK(c.stage_channels(5) == 1024);
  CHECK(c.stage_channels(6) == 1024);
}

TEST_CASE("single-domain pass produces the expected pyramid") {
  HdamtBackbone net(BackboneConfig::tiny(), rng);
  net.set_training(false);
  NoGradGuard ng;
  Var img(Tensor::randn({1, 3, 64, 64}, rng));
  auto feats = net.forward_single(img);
  int64_t hw = 32;
  for (int k = 1; k <= 6; ++k) {
    CHECK(feats[static_cast<size_t>(k - 1)].shape() ==
          Shape{1, net.config().stage_channels(k), hw, hw});
    hw /= 2;
  }
}

TEST_CASE("inference is deterministic and does not record a tape") {
  HdamtBackbone net(BackboneConfig::tiny(), rng);
  net.set_training(false);
  NoGradGuard ng;
  Var img(Tensor::randn({1, 3, 32, 32}, rng));
  auto f1 = net.forward_single(img);
  auto f2 = net.forward_single(img);
  for (int64_t i = 0; i < f1[5].numel(); ++i)
    CHECK(f1[5].val()[i] == f2[5].val()[i]);
  CHECK(f1[5].node()->parents.empty());
}

TEST_CASE("identical domains give identical branches") {
  HdamtBackbone net(micro(), rng);
  Var img(Tensor::randn({1, 3, 16, 16}, rng));
  FeatureSet fs = net.forward_train(img, img, true, true);
  for (int k = 1; k <= 6; ++k) {
    const auto& st = fs.stage(k);
    for (int64_t i = 0; i < st.z_s.numel(); ++i)
      CHECK(st.z_s.val()[i] == st.z_t.val()[i]);
    if (st.dom_st.defined())
      for (int64_t i = 0; i < st.dom_st.numel(); ++i)
        CHECK(st.dom_st.val()[i] == st.dom_ts.val()[i]);
  }
}

TEST_CASE("dominant branches exist exactly where expected") {
  HdamtBackbone net(micro(), rng);
  Var s(Tensor::randn({1, 3, 16, 16}, rng));
  Var t(Tensor::randn({1, 3, 16, 16}, rng));

  FeatureSet with = net.forward_train(s, t, true, true);
  CHECK_FALSE(with.stage(1).dom_st.defined());
  CHECK(with.stage(2).dom_st.defined());
  for (int k = 3; k <= 6; ++k) {
    CHECK(with.stage(k).dom_st.defined());
    CHECK(with.stage(k).dom_ts.defined());
    CHECK(with.stage(k).dom_st.shape() == with.stage(k).z_s.shape());
  }

  FeatureSet without = net.forward_train(s, t, false, false);
  for (int k = 1; k <= 6; ++k) {
    CHECK_FALSE(without.stage(k).dom_st.defined());
    CHECK_FALSE(without.stage(k).dom_ts.defined());
  }
}

TEST_CASE("paired pass without coupling matches two single passes") {
  std::mt19937_64 r1(5), r2(5);
  HdamtBackbone a(micro(), r1);
  HdamtBackbone b(micro(), r2);
  Var s(Tensor::randn({1, 3, 16, 16}, rng));
  Var t(Tensor::randn({1, 3, 16, 16}, rng));
  FeatureSet fs = a.forward_train(s, t, false, false);
  auto fsingle_s = b.forward_single(s);
  // BN running statistics differ between the two objects afterwards, but
  // the forward values of the source branch must agree exactly.
  for (int k = 1; k <= 6; ++k)
    for (int64_t i = 0; i < fs.stage(k).z_s.numel(); ++i)
      CHECK(fs.stage(k).z_s.val()[i] ==
            fsingle_s[static_cast<size_t>(k - 1)].val()[i]);
}

TEST_CASE("stage hook fires at the tap stages and identity hook is a no-op") {
  std::mt19937_64 r1(5), r2(5);
  HdamtBackbone a(micro(), r1);
  HdamtBackbone b(micro(), r2);
  Var s(Tensor::randn({1, 3, 16, 16}, rng));
  Var t(Tensor::randn({1, 3, 16, 16}, rng));

  std::vector<int> fired;
  StageHook hook = [&](int stage, const Var& z_t, const Var& dom_st,
                       const Var& dom_ts) {
    fired.push_back(stage);
    CHECK(dom_st.defined());
    CHECK(dom_ts.defined());
    CHECK(dom_st.shape() == z_t.shape());
    return z_t;
  };
  FeatureSet hooked = a.forward_train(s, t, true, true, hook);
  CHECK(fired == std::vector<int>{2, 4, 6});

  FeatureSet plain = b.forward_train(s, t, true, true);
  for (int k = 1; k <= 6; ++k)
    for (int64_t i = 0; i < plain.stage(k).z_t.numel(); ++i)
      CHECK(hooked.stage(k).z_t.val()[i] == plain.stage(k).z_t.val()[i]);
}

TEST_CASE("margin statistics track the target branch during training") {
  HdamtBackbone net(micro(), rng);
  Var s(Tensor::randn({2, 3, 16, 16}, rng));
  Var t(Tensor::randn({2, 3, 16, 16}, rng));
  net.forward_train(s, t, true, true);
  for (int slot = 0; slot < 3; ++slot) {
    const Tensor& m = net.margin_stats(slot).running_mean();
    bool moved = false;
    for (int64_t i = 0; i < m.numel(); ++i)
      if (m[i] != 0.0) moved = true;
    CHECK(moved);
  }
}

TEST_CASE("parameter names are unique and gradients reach the stem") {
  HdamtBackbone net(micro(), rng);
  auto params = net.named_parameters();
  std::set<std::string> names;
  for (auto& [n, v] : params) names.insert(n);
  CHECK(names.size() == params.size());
  CHECK(net.parameter_count() > 0);

  Var s(Tensor::randn({1, 3, 16, 16}, rng));
  Var t(Tensor::randn({1, 3, 16, 16}, rng));
  FeatureSet fs = net.forward_train(s, t, true, true);
  Var loss = mean(mul(fs.stage(6).dom_st, fs.stage(6).dom_st));
  backward(loss);
  int with_grad = 0;
  for (auto& [n, v] : params)
    if (v.has_grad()) ++with_grad;
  CHECK(with_grad > 0);
  // stem weights sit upstream of everything and must receive gradient
  bool stem = false;
  for (auto& [n, v] : params)
    if (n.find("stage1.down") != std::string::npos && v.has_grad())
      stem = true;
  CHECK(stem);
}

TEST_CASE("full paired pass gradient vs finite differences on a micro net") {
  HdamtBackbone net(micro(), rng);
  net.set_training(false);  // freeze BN at running stats for a clean check
  Tensor s = Tensor::randn({1, 3, 8, 8}, rng);
  Tensor t = Tensor::randn({1, 3, 8, 8}, rng);
  double err = gradcheck(
      [&](const std::vector<Var>& v) {
        FeatureSet fs = net.forward_train(v[0], v[1], true, true);
        return add(mean(mul(fs.stage(6).z_s, fs.stage(6).z_s)),
                   mean(mul(fs.stage(6).dom_ts, fs.stage(6).dom_ts)));
      },
      {s, t}, 1e-5);
  CHECK(err < 1e-3);
}
