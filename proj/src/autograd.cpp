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

#include "damamba/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace damamba {

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Var::Var(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && grad_enabled();
  node_ = std::move(n);
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor& gout)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool need = false;
    for (const Var& p : parents)
      if (p.defined() && p.requires_grad()) need = true;
    if (need && backward) {
      n->requires_grad = true;
      n->backward = std::move(backward);
      for (const Var& p : parents)
        if (p.defined()) n->parents.push_back(p.node());
    }
  }
  return Var::wrap(std::move(n));
}

Var make_op_out(Tensor value, std::vector<Var> parents,
                std::function<void(const Tensor& out, const Tensor& gout)>
                    backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool need = false;
    for (const Var& p : parents)
      if (p.defined() && p.requires_grad()) need = true;
    if (need && backward) {
      n->requires_grad = true;
      // The raw self pointer is safe: the closure is owned by the node and
      // only runs while the node is alive. A shared_ptr here would cycle.
      Node* self = n.get();
      n->backward = [self, f = std::move(backward)](const Tensor& gout) {
        f(self->value, gout);
      };
      for (const Var& p : parents)
        if (p.defined()) n->parents.push_back(p.node());
    }
  }
  return Var::wrap(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw std::logic_error("backward on undefined Var");
  if (root.numel() != 1)
    throw std::logic_error("backward requires a scalar root");

  // Iterative post-order topological sort.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next_child;
  };
  std::vector<Frame> stack;
  Node* r = root.node().get();
  if (!r->requires_grad) return;
  stack.push_back({r, 0});
  visited.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node* c = f.n->parents[f.next_child++].get();
      if (c->requires_grad && !visited.count(c)) {
        visited.insert(c);
        stack.push_back({c, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  r->grad_ref().fill(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad) n->backward(n->grad);
  }
}

}  // namespace damamba
