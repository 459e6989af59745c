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

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "damamba/ops.hpp"

namespace damamba {

/// Base class providing hierarchical parameter/buffer registration with
/// dot-separated names, used for optimization and checkpointing.
class Module {
 public:
  virtual ~Module() = default;

  void register_parameter(const std::string& name, Var v);
  void register_buffer(const std::string& name, std::shared_ptr<Tensor> t);
  void register_module(const std::string& name, std::shared_ptr<Module> m);

  std::vector<std::pair<std::string, Var>> named_parameters(
      const std::string& prefix = "") const;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> named_buffers(
      const std::string& prefix = "") const;

  int64_t parameter_count() const;
  void zero_grad();

  virtual void set_training(bool t);
  bool training() const { return training_; }

 protected:
  Var make_param(const std::string& name, Tensor init);

 private:
  bool training_ = true;
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
};

/// Fan-in variance-scaling normal init.
Tensor init_normal(Shape shape, int64_t fan_in, std::mt19937_64& rng);

class Linear : public Module {
 public:
  Linear(int64_t in, int64_t out, std::mt19937_64& rng, bool bias = true);
  /// x: (rows, in) -> (rows, out)
  Var forward(const Var& x) const;
  Var weight;  // (in, out)
  Var bias;    // (out) or undefined
 private:
  int64_t in_, out_;
};

class Conv2dLayer : public Module {
 public:
  Conv2dLayer(int64_t cin, int64_t cout, int k, int stride, int pad,
              std::mt19937_64& rng, int groups = 1, bool bias = true);
  /// Rectangular kernel variant (kh x kw with per-axis padding).
  Conv2dLayer(int64_t cin, int64_t cout, int kh, int kw, int stride, int pad_h,
              int pad_w, std::mt19937_64& rng, int groups = 1,
              bool bias = true);
  Var forward(const Var& x) const;
  Var weight;
  Var bias;
  int stride() const { return stride_; }

 private:
  int stride_, pad_h_, pad_w_, groups_;
};

/// Batch normalization over (B,*,H,W) with running statistics.
class BatchNorm2d : public Module {
 public:
  BatchNorm2d(int64_t channels, bool affine = true, double momentum = 0.1,
              double eps = 1e-5);
  Var forward(const Var& x);
  /// Updates running statistics from x without producing an output; used
  /// for statistics-only taps.
  void observe(const Tensor& x);

  const Tensor& running_mean() const { return *mean_; }
  const Tensor& running_var() const { return *var_; }

  Var gamma, beta;

 private:
  int64_t channels_;
  bool affine_;
  double momentum_, eps_;
  std::shared_ptr<Tensor> mean_, var_;
};

/// Layer normalization over the channel axis of (B,C,H,W), per location.
class LayerNormChannel : public Module {
 public:
  explicit LayerNormChannel(int64_t channels, double eps = 1e-6);
  Var forward(const Var& x) const;
  Var gamma, beta;

 private:
  double eps_;
};

}  // namespace damamba
