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

#include "damamba/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace damamba {

void Module::register_parameter(const std::string& name, Var v) {
  params_.emplace_back(name, std::move(v));
}

void Module::register_buffer(const std::string& name,
                             std::shared_ptr<Tensor> t) {
  buffers_.emplace_back(name, std::move(t));
}

void Module::register_module(const std::string& name,
                             std::shared_ptr<Module> m) {
  children_.emplace_back(name, std::move(m));
}

Var Module::make_param(const std::string& name, Tensor init) {
  Var v(std::move(init), true);
  register_parameter(name, v);
  return v;
}

std::vector<std::pair<std::string, Var>> Module::named_parameters(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& [n, v] : params_) out.emplace_back(prefix + n, v);
  for (const auto& [n, c] : children_) {
    auto sub = c->named_parameters(prefix + n + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>
Module::named_buffers(const std::string& prefix) const {
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> out;
  for (const auto& [n, t] : buffers_) out.emplace_back(prefix + n, t);
  for (const auto& [n, c] : children_) {
    auto sub = c->named_buffers(prefix + n + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

int64_t Module::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : named_parameters()) n += v.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& [name, v] : named_parameters()) v.zero_grad();
}

void Module::set_training(bool t) {
  training_ = t;
  for (auto& [n, c] : children_) c->set_training(t);
}

Tensor init_normal(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
  double std = std::sqrt(1.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
  return Tensor::randn(std::move(shape), rng, std);
}

Linear::Linear(int64_t in, int64_t out, std::mt19937_64& rng, bool with_bias)
    : in_(in), out_(out) {
  weight = make_param("weight", init_normal({in, out}, in, rng));
  if (with_bias) bias = make_param("bias", Tensor::zeros({out}));
}

Var Linear::forward(const Var& x) const {
  Var y = matmul(x, weight);
  if (bias.defined()) y = add(y, bias);
  return y;
}

Conv2dLayer::Conv2dLayer(int64_t cin, int64_t cout, int k, int stride, int pad,
                         std::mt19937_64& rng, int groups, bool with_bias)
    : Conv2dLayer(cin, cout, k, k, stride, pad, pad, rng, groups, with_bias) {}

Conv2dLayer::Conv2dLayer(int64_t cin, int64_t cout, int kh, int kw, int stride,
                         int pad_h, int pad_w, std::mt19937_64& rng,
                         int groups, bool with_bias)
    : stride_(stride), pad_h_(pad_h), pad_w_(pad_w), groups_(groups) {
  int64_t cin_g = cin / groups;
  weight = make_param("weight",
                      init_normal({cout, cin_g, kh, kw}, cin_g * kh * kw, rng));
  if (with_bias) bias = make_param("bias", Tensor::zeros({cout}));
}

Var Conv2dLayer::forward(const Var& x) const {
  return conv2d_hw(x, weight, bias, stride_, pad_h_, pad_w_, groups_);
}

BatchNorm2d::BatchNorm2d(int64_t channels, bool affine, double momentum,
                         double eps)
    : channels_(channels), affine_(affine), momentum_(momentum), eps_(eps) {
  mean_ = std::make_shared<Tensor>(Tensor::zeros({channels}));
  var_ = std::make_shared<Tensor>(Tensor::full({channels}, 1.0));
  register_buffer("running_mean", mean_);
  register_buffer("running_var", var_);
  if (affine_) {
    gamma = make_param("gamma", Tensor::full({1, channels, 1, 1}, 1.0));
    beta = make_param("beta", Tensor::zeros({1, channels, 1, 1}));
  }
}

void BatchNorm2d::observe(const Tensor& x) {
  int64_t C = x.size(1);
  if (C != channels_) throw std::invalid_argument("batch norm channel count");
  int64_t B = x.size(0), HW = x.size(2) * x.size(3);
  double n = static_cast<double>(B * HW);
  for (int64_t c = 0; c < C; ++c) {
    double s = 0.0, sq = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      const double* p = x.data() + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        s += p[i];
        sq += p[i] * p[i];
      }
    }
    double mu = s / n;
    double var = sq / n - mu * mu;
    (*mean_)[c] = (1.0 - momentum_) * (*mean_)[c] + momentum_ * mu;
    (*var_)[c] = (1.0 - momentum_) * (*var_)[c] + momentum_ * var;
  }
}

Var BatchNorm2d::forward(const Var& x) {
  if (x.shape().size() != 4 || x.shape()[1] != channels_)
    throw std::invalid_argument("batch norm expects (B,C,H,W)");
  Var xhat;
  if (training()) {
    Var mu = mean_axes(x, {0, 2, 3}, true);
    Var centered = sub(x, mu);
    Var var = mean_axes(mul(centered, centered), {0, 2, 3}, true);
    xhat = div(centered, sqrt(add_scalar(var, eps_)));
    observe(x.val());
  } else {
    Tensor mu({1, channels_, 1, 1}), inv({1, channels_, 1, 1});
    for (int64_t c = 0; c < channels_; ++c) {
      mu[c] = (*mean_)[c];
      inv[c] = 1.0 / std::sqrt((*var_)[c] + eps_);
    }
    xhat = mul(sub(x, constant(mu)), constant(inv));
  }
  if (affine_) xhat = add(mul(xhat, gamma), beta);
  return xhat;
}

LayerNormChannel::LayerNormChannel(int64_t channels, double eps) : eps_(eps) {
  gamma = make_param("gamma", Tensor::full({1, channels, 1, 1}, 1.0));
  beta = make_param("beta", Tensor::zeros({1, channels, 1, 1}));
}

Var LayerNormChannel::forward(const Var& x) const {
  Var mu = mean_axes(x, {1}, true);
  Var centered = sub(x, mu);
  Var var = mean_axes(mul(centered, centered), {1}, true);
  Var xhat = div(centered, sqrt(add_scalar(var, eps_)));
  return add(mul(xhat, gamma), beta);
}

}  // namespace damamba
