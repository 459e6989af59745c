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

#include <functional>
#include <memory>
#include <vector>

#include "damamba/tensor.hpp"

namespace damamba {

/// One entry in the reverse-mode tape. `backward` receives the accumulated
/// output gradient and pushes gradients into the parents.
struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& gout)> backward;

  Tensor& grad_ref() {
    if (!has_grad) {
      grad = Tensor::zeros(value.shape());
      has_grad = true;
    }
    return grad;
  }
  void accumulate(const Tensor& g) {
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad.add_(g);
    }
  }
  void accumulate(Tensor&& g) {
    if (!has_grad) {
      grad = std::move(g);
      has_grad = true;
    } else {
      grad.add_(g);
    }
  }
};

using NodePtr = std::shared_ptr<Node>;

/// Handle to a tape node. Copies are shallow.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& val_mut() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && node_->has_grad) node_->grad.fill(0.0);
  }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }

  NodePtr node() const { return node_; }
  static Var wrap(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  NodePtr node_;
};

/// True while gradients are being recorded (default). The guard below
/// disables recording for inference passes.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Builds an op node. `backward` may be empty for non-differentiable ops.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor& gout)> backward);

/// Like make_op, but the backward closure also receives the op's own output
/// value, so ops whose gradient depends on the output need not copy it.
Var make_op_out(Tensor value, std::vector<Var> parents,
                std::function<void(const Tensor& out, const Tensor& gout)>
                    backward);

/// Reverse-mode sweep from a scalar root (seeds with 1).
void backward(const Var& root);

}  // namespace damamba
