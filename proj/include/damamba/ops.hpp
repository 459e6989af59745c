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

#include <vector>

#include "damamba/autograd.hpp"
#include "damamba/tensor.hpp"

namespace damamba {

/// Wraps a tensor as a non-differentiable leaf.
inline Var constant(Tensor t) { return Var(std::move(t), false); }

// ---- elementwise, numpy-style broadcasting ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);  // grad follows the winning side

Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var pow_scalar(const Var& a, double p);  // elementwise a^p, a > 0

Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.1);
Var clamp_min(const Var& a, double lo);  // grad blocked where clamped
Var huber(const Var& a);                 // 0.5 a^2 for |a|<1 else |a|-0.5

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axes(const Var& a, std::vector<int> axes, bool keepdim = false);
Var mean_axes(const Var& a, std::vector<int> axes, bool keepdim = false);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, std::vector<int> order);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // (m,k) x (k,n)
/// Batched matmul over leading axis: (B,m,k) x (B,k,n), optional transposes
/// of the trailing two axes.
Var bmm(const Var& a, const Var& b, bool trans_a = false,
        bool trans_b = false);

// ---- fused nonlinearities ----
Var softmax(const Var& a, int axis);
Var log_softmax(const Var& a, int axis);

// ---- convolution ----
/// x: (B,Cin,H,W), w: (Cout,Cin/groups,kh,kw), b: (Cout) or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups = 1);
Var conv2d_hw(const Var& x, const Var& w, const Var& b, int stride, int pad_h,
              int pad_w, int groups = 1);

// ---- autograd plumbing ----
Var detach(const Var& a);
/// Identity forward; backward multiplies the upstream gradient by -lambda.
Var grad_reversal(const Var& x, double lambda);

/// rows: (R,K) log-probabilities (or any matrix); picks rows[i, idx[i]].
Var select_columns(const Var& rows, const std::vector<int>& idx);

// ---- selective state-space scan ----
/// Zero-order-hold discretization: a_bar = exp(delta*a), b_bar = delta*b.
/// delta and a broadcast elementwise; throws if delta has non-positive
/// entries.
std::pair<Var, Var> discretize(const Var& delta, const Var& a, const Var& b);

/// Selective scan over the trailing axis.
///   x, delta: (B,C,L); a: (C,N); bmat, cmat: (B,N,L); dskip: (C).
/// Recurrence per (b,c): h_l = exp(delta*a) h_{l-1} + delta*B_l x_l,
/// y_l = <C_l, h_l> + D x_l with h_0 = 0.
Var selective_scan(const Var& x, const Var& delta, const Var& a,
                   const Var& bmat, const Var& cmat, const Var& dskip);

/// Gradient sum-reduction of `g` onto a broadcast source shape.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

}  // namespace damamba
