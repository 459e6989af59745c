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

#include "damamba/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace damamba {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

void acc(const NodePtr& p, const Tensor& g) {
  if (p->requires_grad) p->accumulate(g);
}

void acc(const NodePtr& p, Tensor&& g) {
  if (p->requires_grad) p->accumulate(std::move(g));
}

// Accumulates `g` into `p`, summing over broadcast axes when shapes differ.
void acc_reduced(const NodePtr& p, const Tensor& g) {
  if (!p->requires_grad) return;
  if (g.same_shape(p->value))
    p->accumulate(g);
  else
    p->accumulate(reduce_to_shape(g, p->value.shape()));
}

void acc_reduced(const NodePtr& p, Tensor&& g) {
  if (!p->requires_grad) return;
  if (g.same_shape(p->value))
    p->accumulate(std::move(g));
  else
    p->accumulate(reduce_to_shape(g, p->value.shape()));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("broadcast mismatch " + shape_str(a) +
                                  " vs " + shape_str(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 0);
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `in` aligned to broadcast output shape `out` (0 on broadcast
// axes).
std::vector<int64_t> bc_strides(const Shape& in, const Shape& out) {
  auto st = contiguous_strides(in);
  std::vector<int64_t> r(out.size(), 0);
  for (size_t i = 0; i < in.size(); ++i) {
    size_t oi = out.size() - in.size() + i;
    r[oi] = in[i] == 1 ? 0 : st[i];
  }
  return r;
}

template <class F>
Tensor bc_combine(const Tensor& a, const Tensor& b, F f) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::empty(os);
  int64_t n = out.numel();
  if (a.same_shape(b)) {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  auto sa = bc_strides(a.shape(), os);
  auto sb = bc_strides(b.shape(), os);
  size_t r = os.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
    }
  }
  return out;
}

template <class FwdF, class GradAF, class GradBF>
Var binary_op(const Var& a, const Var& b, FwdF f, GradAF ga, GradBF gb) {
  Tensor out = bc_combine(a.val(), b.val(), f);
  NodePtr an = a.node(), bn = b.node();
  return make_op(
      std::move(out), {a, b}, [an, bn, ga, gb](const Tensor& gout) {
        const Tensor& av = an->value;
        const Tensor& bv = bn->value;
        if (an->requires_grad)
          acc_reduced(an, bc_combine(gout, bc_combine(av, bv, ga),
                                     std::multiplies<double>()));
        if (bn->requires_grad)
          acc_reduced(bn, bc_combine(gout, bc_combine(av, bv, gb),
                                     std::multiplies<double>()));
      });
}

template <class FwdF, class GradF>
Var unary_op(const Var& a, FwdF f, GradF g) {
  const Tensor& av = a.val();
  Tensor out = Tensor::empty(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  NodePtr an = a.node();
  return make_op_out(std::move(out), {a},
                     [an, g](const Tensor& outv, const Tensor& gout) {
                       const Tensor& avv = an->value;
                       Tensor gi = Tensor::empty(avv.shape());
                       for (int64_t i = 0; i < gi.numel(); ++i)
                         gi[i] = gout[i] * g(avv[i], outv[i]);
                       acc(an, std::move(gi));
                     });
}

struct AxisSplit {
  int64_t outer, k, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range");
  AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) sp.inner *= s[static_cast<size_t>(i)];
  return sp;
}

int norm_axis(const Shape& s, int axis) {
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range");
  return axis;
}

}  // namespace

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const Shape& os = g.shape();
  auto st = bc_strides(target, os);
  size_t r = os.size();
  std::vector<int64_t> idx(r, 0);
  int64_t ot = 0;
  const double* pg = g.data();
  double* po = out.data();
  int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) {
    po[ot] += pg[i];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ot += st[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      ot -= st[d] * os[d];
    }
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  Tensor out = bc_combine(a.val(), b.val(), std::plus<double>());
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& gout) {
    acc_reduced(an, gout);
    acc_reduced(bn, gout);
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = bc_combine(a.val(), b.val(), std::minus<double>());
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& gout) {
    acc_reduced(an, gout);
    if (bn->requires_grad) {
      Tensor gb = reduce_to_shape(gout, bn->value.shape());
      gb.scale_(-1.0);
      acc(bn, std::move(gb));
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = bc_combine(a.val(), b.val(), std::multiplies<double>());
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& gout) {
    if (an->requires_grad)
      acc_reduced(an, bc_combine(gout, bn->value, std::multiplies<double>()));
    if (bn->requires_grad)
      acc_reduced(bn, bc_combine(gout, an->value, std::multiplies<double>()));
  });
}

Var div(const Var& a, const Var& b) {
  Tensor out = bc_combine(a.val(), b.val(), std::divides<double>());
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](const Tensor& gout) {
    if (an->requires_grad)
      acc_reduced(an, bc_combine(gout, bn->value, std::divides<double>()));
    if (bn->requires_grad)
      acc_reduced(
          bn, bc_combine(bc_combine(gout, an->value,
                                     std::multiplies<double>()),
                         bn->value,
                         [](double x, double y) { return -x / (y * y); }));
  });
}

Var maximum(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var add_scalar(const Var& a, double s) {
  const Tensor& av = a.val();
  Tensor out = Tensor::empty(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + s;
  NodePtr an = a.node();
  return make_op(std::move(out), {a},
                 [an](const Tensor& gout) { acc(an, gout); });
}

Var mul_scalar(const Var& a, double s) {
  const Tensor& av = a.val();
  Tensor out = Tensor::empty(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * s;
  NodePtr an = a.node();
  return make_op(std::move(out), {a}, [an, s](const Tensor& gout) {
    if (!an->requires_grad) return;
    Tensor g = gout;
    g.scale_(s);
    acc(an, std::move(g));
  });
}

Var pow_scalar(const Var& a, double p) {
  return unary_op(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var exp(const Var& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary_op(
      a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var softplus(const Var& a) {
  return unary_op(
      a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var relu(const Var& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamp_min(const Var& a, double lo) {
  return unary_op(
      a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

Var huber(const Var& a) {
  return unary_op(
      a,
      [](double x) {
        double ax = std::abs(x);
        return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
      },
      [](double x, double) {
        double ax = std::abs(x);
        return ax < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
      });
}

Var sum(const Var& a) {
  const Tensor& av = a.val();
  double s = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
  NodePtr an = a.node();
  Shape ash = av.shape();
  return make_op(Tensor::scalar(s), {a}, [an, ash](const Tensor& gout) {
    acc(an, Tensor::full(ash, gout[0]));
  });
}

Var mean(const Var& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var sum_axes(const Var& a, std::vector<int> axes, bool keepdim) {
  const Tensor& av = a.val();
  const Shape& is = av.shape();
  std::vector<bool> red(is.size(), false);
  for (int ax : axes) red[static_cast<size_t>(norm_axis(is, ax))] = true;
  Shape keep = is;
  for (size_t i = 0; i < is.size(); ++i)
    if (red[i]) keep[i] = 1;
  Tensor out = reduce_to_shape(av, keep);
  Shape final_shape;
  if (keepdim) {
    final_shape = keep;
  } else {
    for (size_t i = 0; i < is.size(); ++i)
      if (!red[i]) final_shape.push_back(is[i]);
  }
  out = out.reshaped(final_shape);
  NodePtr an = a.node();
  return make_op(std::move(out), {a},
                 [an, is, keep](const Tensor& gout) {
                   Tensor gk = gout.reshaped(keep);
                   acc(an, bc_combine(gk, Tensor::zeros(is),
                                      [](double g, double) { return g; }));
                 });
}

Var mean_axes(const Var& a, std::vector<int> axes, bool keepdim) {
  const Shape& is = a.shape();
  int64_t n = 1;
  for (int ax : axes) n *= is[static_cast<size_t>(norm_axis(is, ax))];
  return mul_scalar(sum_axes(a, std::move(axes), keepdim),
                    1.0 / static_cast<double>(n));
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.val().reshaped(shape);
  NodePtr an = a.node();
  Shape orig = a.shape();
  return make_op(std::move(out), {a}, [an, orig](const Tensor& gout) {
    acc(an, gout.reshaped(orig));
  });
}

Var permute(const Var& a, std::vector<int> order) {
  const Tensor& av = a.val();
  size_t r = av.shape().size();
  if (order.size() != r) throw std::invalid_argument("permute order rank");
  Shape os(r);
  for (size_t i = 0; i < r; ++i) os[i] = av.shape()[static_cast<size_t>(order[i])];
  auto ist = contiguous_strides(av.shape());
  // Stride of output linear index contributed by each *input* dimension.
  auto ost = contiguous_strides(os);
  std::vector<int64_t> contrib(r, 0);
  for (size_t i = 0; i < r; ++i) contrib[static_cast<size_t>(order[i])] = ost[i];
  Tensor out(os);
  const Shape& is = av.shape();
  std::vector<int64_t> idx(r, 0);
  int64_t oo = 0;
  const double* pi = av.data();
  double* po = out.data();
  for (int64_t i = 0; i < av.numel(); ++i) {
    po[oo] = pi[i];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      oo += contrib[d];
      if (idx[d] < is[d]) break;
      idx[d] = 0;
      oo -= contrib[d] * is[d];
    }
  }
  std::vector<int> inv(r);
  for (size_t i = 0; i < r; ++i) inv[static_cast<size_t>(order[i])] = static_cast<int>(i);
  NodePtr an = a.node();
  return make_op(std::move(out), {a}, [an, inv](const Tensor& gout) {
    Var g = permute(constant(gout), inv);
    acc(an, g.val());
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Shape& s0 = parts[0].shape();
  int ax = norm_axis(s0, axis);
  int64_t total = 0;
  for (const Var& p : parts) total += p.shape()[static_cast<size_t>(ax)];
  Shape os = s0;
  os[static_cast<size_t>(ax)] = total;
  auto sp = split_at(os, ax);
  Tensor out(os);
  int64_t off = 0;
  for (const Var& p : parts) {
    int64_t k = p.shape()[static_cast<size_t>(ax)];
    const double* src = p.val().data();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy(src + o * k * sp.inner, src + (o + 1) * k * sp.inner,
                out.data() + (o * total + off) * sp.inner);
    off += k;
  }
  std::vector<NodePtr> nodes;
  std::vector<int64_t> ks;
  for (const Var& p : parts) {
    nodes.push_back(p.node());
    ks.push_back(p.shape()[static_cast<size_t>(ax)]);
  }
  return make_op(std::move(out), parts,
                 [nodes, ks, sp, total](const Tensor& gout) {
                   int64_t off2 = 0;
                   for (size_t pi = 0; pi < nodes.size(); ++pi) {
                     int64_t k = ks[pi];
                     if (nodes[pi]->requires_grad) {
                       Tensor g(nodes[pi]->value.shape());
                       for (int64_t o = 0; o < sp.outer; ++o)
                         std::copy(gout.data() + (o * total + off2) * sp.inner,
                                   gout.data() + (o * total + off2 + k) * sp.inner,
                                   g.data() + o * k * sp.inner);
                       acc(nodes[pi], g);
                     }
                     off2 += k;
                   }
                 });
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  const Shape& is = a.shape();
  int ax = norm_axis(is, axis);
  int64_t k = is[static_cast<size_t>(ax)];
  if (start < 0 || len < 0 || start + len > k)
    throw std::out_of_range("slice range");
  auto sp = split_at(is, ax);
  Shape os = is;
  os[static_cast<size_t>(ax)] = len;
  Tensor out(os);
  const double* src = a.val().data();
  for (int64_t o = 0; o < sp.outer; ++o)
    std::copy(src + (o * k + start) * sp.inner,
              src + (o * k + start + len) * sp.inner,
              out.data() + o * len * sp.inner);
  NodePtr an = a.node();
  return make_op(std::move(out), {a},
                 [an, is, sp, k, start, len](const Tensor& gout) {
                   Tensor g(is);
                   for (int64_t o = 0; o < sp.outer; ++o)
                     std::copy(gout.data() + o * len * sp.inner,
                               gout.data() + (o + 1) * len * sp.inner,
                               g.data() + (o * k + start) * sp.inner);
                   acc(an, g);
                 });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.dim() != 2 || bv.dim() != 2 || av.size(1) != bv.size(0))
    throw std::invalid_argument("matmul shape mismatch " +
                                shape_str(av.shape()) + " x " +
                                shape_str(bv.shape()));
  int64_t m = av.size(0), k = av.size(1), n = bv.size(1);
  Tensor out = Tensor::empty({m, n});
  MatMap(out.data(), m, n) = ConstMatMap(av.data(), m, k) *
                             ConstMatMap(bv.data(), k, n);
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b},
                 [an, bn, m, k, n](const Tensor& gout) {
                   ConstMatMap g(gout.data(), m, n);
                   if (an->requires_grad) {
                     Tensor ga = Tensor::empty({m, k});
                     MatMap(ga.data(), m, k) =
                         g * ConstMatMap(bn->value.data(), k, n).transpose();
                     acc(an, std::move(ga));
                   }
                   if (bn->requires_grad) {
                     Tensor gb = Tensor::empty({k, n});
                     MatMap(gb.data(), k, n) =
                         ConstMatMap(an->value.data(), m, k).transpose() * g;
                     acc(bn, std::move(gb));
                   }
                 });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.dim() != 3 || bv.dim() != 3 || av.size(0) != bv.size(0))
    throw std::invalid_argument("bmm shape mismatch");
  int64_t bsz = av.size(0);
  int64_t m = trans_a ? av.size(2) : av.size(1);
  int64_t k = trans_a ? av.size(1) : av.size(2);
  int64_t k2 = trans_b ? bv.size(2) : bv.size(1);
  int64_t n = trans_b ? bv.size(1) : bv.size(2);
  if (k != k2) throw std::invalid_argument("bmm inner dim mismatch");
  Tensor out = Tensor::empty({bsz, m, n});
  for (int64_t i = 0; i < bsz; ++i) {
    ConstMatMap A(av.data() + i * av.size(1) * av.size(2), av.size(1),
                  av.size(2));
    ConstMatMap B(bv.data() + i * bv.size(1) * bv.size(2), bv.size(1),
                  bv.size(2));
    MatMap O(out.data() + i * m * n, m, n);
    if (!trans_a && !trans_b)
      O = A * B;
    else if (trans_a && !trans_b)
      O = A.transpose() * B;
    else if (!trans_a && trans_b)
      O = A * B.transpose();
    else
      O = A.transpose() * B.transpose();
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op(
      std::move(out), {a, b},
      [an, bn, bsz, m, n, trans_a, trans_b](const Tensor& gout) {
        const Tensor& avc = an->value;
        const Tensor& bvc = bn->value;
        if (an->requires_grad) {
          Tensor ga = Tensor::empty(avc.shape());
          for (int64_t i = 0; i < bsz; ++i) {
            ConstMatMap G(gout.data() + i * m * n, m, n);
            ConstMatMap B(bvc.data() + i * bvc.size(1) * bvc.size(2),
                          bvc.size(1), bvc.size(2));
            MatMap GA(ga.data() + i * avc.size(1) * avc.size(2), avc.size(1),
                      avc.size(2));
            if (!trans_a)
              GA = trans_b ? (G * B).eval() : (G * B.transpose()).eval();
            else
              GA = trans_b ? (B.transpose() * G.transpose()).eval()
                           : (B * G.transpose()).eval();
          }
          acc(an, std::move(ga));
        }
        if (bn->requires_grad) {
          Tensor gb = Tensor::empty(bvc.shape());
          for (int64_t i = 0; i < bsz; ++i) {
            ConstMatMap G(gout.data() + i * m * n, m, n);
            ConstMatMap A(avc.data() + i * avc.size(1) * avc.size(2),
                          avc.size(1), avc.size(2));
            MatMap GB(gb.data() + i * bvc.size(1) * bvc.size(2), bvc.size(1),
                      bvc.size(2));
            if (!trans_b)
              GB = trans_a ? (A * G).eval() : (A.transpose() * G).eval();
            else
              GB = trans_a ? (G.transpose() * A.transpose()).eval()
                           : (G.transpose() * A).eval();
          }
          acc(bn, std::move(gb));
        }
      });
}

Var softmax(const Var& a, int axis) {
  const Tensor& av = a.val();
  auto sp = split_at(av.shape(), axis);
  Tensor out = Tensor::empty(av.shape());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* x = av.data() + o * sp.k * sp.inner + in;
      double* y = out.data() + o * sp.k * sp.inner + in;
      double mx = -1e300;
      for (int64_t j = 0; j < sp.k; ++j) mx = std::max(mx, x[j * sp.inner]);
      double z = 0.0;
      for (int64_t j = 0; j < sp.k; ++j) {
        double e = std::exp(x[j * sp.inner] - mx);
        y[j * sp.inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < sp.k; ++j) y[j * sp.inner] /= z;
    }
  NodePtr an = a.node();
  return make_op_out(
      std::move(out), {a}, [an, sp](const Tensor& yv, const Tensor& gout) {
        Tensor gi = Tensor::empty(yv.shape());
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            const double* y = yv.data() + o * sp.k * sp.inner + in;
            const double* g = gout.data() + o * sp.k * sp.inner + in;
            double* gx = gi.data() + o * sp.k * sp.inner + in;
            double dot = 0.0;
            for (int64_t j = 0; j < sp.k; ++j)
              dot += y[j * sp.inner] * g[j * sp.inner];
            for (int64_t j = 0; j < sp.k; ++j)
              gx[j * sp.inner] = y[j * sp.inner] * (g[j * sp.inner] - dot);
          }
        acc(an, std::move(gi));
      });
}

Var log_softmax(const Var& a, int axis) {
  const Tensor& av = a.val();
  auto sp = split_at(av.shape(), axis);
  Tensor out = Tensor::empty(av.shape());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      const double* x = av.data() + o * sp.k * sp.inner + in;
      double* y = out.data() + o * sp.k * sp.inner + in;
      double mx = -1e300;
      for (int64_t j = 0; j < sp.k; ++j) mx = std::max(mx, x[j * sp.inner]);
      double z = 0.0;
      for (int64_t j = 0; j < sp.k; ++j) z += std::exp(x[j * sp.inner] - mx);
      double lz = mx + std::log(z);
      for (int64_t j = 0; j < sp.k; ++j) y[j * sp.inner] = x[j * sp.inner] - lz;
    }
  NodePtr an = a.node();
  return make_op_out(
      std::move(out), {a}, [an, sp](const Tensor& yv, const Tensor& gout) {
        Tensor gi = Tensor::empty(yv.shape());
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t in = 0; in < sp.inner; ++in) {
            const double* y = yv.data() + o * sp.k * sp.inner + in;
            const double* g = gout.data() + o * sp.k * sp.inner + in;
            double* gx = gi.data() + o * sp.k * sp.inner + in;
            double gsum = 0.0;
            for (int64_t j = 0; j < sp.k; ++j) gsum += g[j * sp.inner];
            for (int64_t j = 0; j < sp.k; ++j)
              gx[j * sp.inner] =
                  g[j * sp.inner] - std::exp(y[j * sp.inner]) * gsum;
          }
        acc(an, std::move(gi));
      });
}

Var detach(const Var& a) { return Var(a.val(), false); }

Var grad_reversal(const Var& x, double lambda) {
  NodePtr xn = x.node();
  return make_op(x.val(), {x}, [xn, lambda](const Tensor& gout) {
    Tensor g = gout;
    g.scale_(-lambda);
    acc(xn, g);
  });
}

Var select_columns(const Var& rows, const std::vector<int>& idx) {
  const Tensor& rv = rows.val();
  if (rv.dim() != 2 || static_cast<int64_t>(idx.size()) != rv.size(0))
    throw std::invalid_argument("select_columns shape mismatch");
  int64_t r = rv.size(0), k = rv.size(1);
  Tensor out({r});
  for (int64_t i = 0; i < r; ++i) {
    int j = idx[static_cast<size_t>(i)];
    if (j < 0 || j >= k) throw std::out_of_range("select_columns index");
    out[i] = rv.at(i, j);
  }
  NodePtr rn = rows.node();
  return make_op(std::move(out), {rows}, [rn, idx, r, k](const Tensor& gout) {
    Tensor g({r, k});
    for (int64_t i = 0; i < r; ++i)
      g.at(i, idx[static_cast<size_t>(i)]) = gout[i];
    acc(rn, g);
  });
}

std::pair<Var, Var> discretize(const Var& delta, const Var& a, const Var& b) {
  const Tensor& dv = delta.val();
  for (int64_t i = 0; i < dv.numel(); ++i)
    if (!(dv[i] > 0.0))
      throw std::invalid_argument("discretize requires delta > 0");
  Var a_bar = exp(mul(delta, a));
  Var b_bar = mul(delta, b);
  return {a_bar, b_bar};
}

Var selective_scan(const Var& x, const Var& delta, const Var& a,
                   const Var& bmat, const Var& cmat, const Var& dskip) {
  const Tensor& xv = x.val();
  const Tensor& dtv = delta.val();
  const Tensor& av = a.val();
  const Tensor& bv = bmat.val();
  const Tensor& cv = cmat.val();
  const Tensor& dv = dskip.val();
  if (xv.dim() != 3) throw std::invalid_argument("scan input must be (B,C,L)");
  int64_t B = xv.size(0), C = xv.size(1), L = xv.size(2);
  int64_t N = av.size(1);
  if (!dtv.same_shape(xv)) throw std::invalid_argument("scan delta shape");
  if (av.dim() != 2 || av.size(0) != C)
    throw std::invalid_argument("scan a_diag shape");
  if (bv.dim() != 3 || bv.size(0) != B || bv.size(1) != N || bv.size(2) != L)
    throw std::invalid_argument("scan b_proj shape");
  if (!cv.same_shape(bv)) throw std::invalid_argument("scan c_proj shape");
  if (dv.dim() != 1 || dv.size(0) != C)
    throw std::invalid_argument("scan d_skip shape");
  if (!xv.all_finite() || !dtv.all_finite() || !bv.all_finite() ||
      !cv.all_finite())
    throw std::invalid_argument("scan received non-finite input");
  for (int64_t i = 0; i < dtv.numel(); ++i)
    if (!(dtv[i] > 0.0))
      throw std::invalid_argument("scan requires delta > 0");

  bool record = grad_enabled() &&
                (x.requires_grad() || delta.requires_grad() ||
                 a.requires_grad() || bmat.requires_grad() ||
                 cmat.requires_grad() || dskip.requires_grad());

  Tensor y({B, C, L});
  Tensor hstore;  // (B,C,L,N), only when recording
  if (record) hstore = Tensor({B, C, L, N});
  std::vector<double> h(static_cast<size_t>(N));
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t ci = 0; ci < C; ++ci) {
      std::fill(h.begin(), h.end(), 0.0);
      const double* arow = av.data() + ci * N;
      double dval = dv[ci];
      for (int64_t l = 0; l < L; ++l) {
        double dt = dtv.at(bi, ci, l);
        double xin = xv.at(bi, ci, l);
        const double* brow = bv.data() + (bi * N) * L + l;
        const double* crow = cv.data() + (bi * N) * L + l;
        double yv_ = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          double abar = std::exp(dt * arow[n]);
          h[static_cast<size_t>(n)] =
              abar * h[static_cast<size_t>(n)] + dt * brow[n * L] * xin;
          yv_ += crow[n * L] * h[static_cast<size_t>(n)];
        }
        if (record)
          std::copy(h.begin(), h.end(),
                    hstore.data() + ((bi * C + ci) * L + l) * N);
        y.at(bi, ci, l) = yv_ + dval * xin;
      }
    }

  if (!record) return Var(std::move(y), false);

  NodePtr xn = x.node(), dtn = delta.node(), an = a.node(), bn = bmat.node(),
          cn = cmat.node(), dn = dskip.node();
  Tensor hs = std::move(hstore);
  return make_op(
      std::move(y), {x, delta, a, bmat, cmat, dskip},
      [xn, dtn, an, bn, cn, dn, hs](const Tensor& gout) {
        const Tensor& xvc = xn->value;
        const Tensor& dtvc = dtn->value;
        const Tensor& avc = an->value;
        const Tensor& bvc = bn->value;
        const Tensor& cvc = cn->value;
        const Tensor& dvc = dn->value;
        int64_t Bq = xvc.size(0), Cq = xvc.size(1), Lq = xvc.size(2);
        int64_t Nq = avc.size(1);
        Tensor gx = Tensor::empty(xvc.shape());
        Tensor gdt = Tensor::empty(dtvc.shape());
        Tensor ga(avc.shape()), gb(bvc.shape()), gc(cvc.shape()),
            gd(dvc.shape());
        std::vector<double> dh(static_cast<size_t>(Nq));
        for (int64_t bi = 0; bi < Bq; ++bi)
          for (int64_t ci = 0; ci < Cq; ++ci) {
            std::fill(dh.begin(), dh.end(), 0.0);
            const double* arow = avc.data() + ci * Nq;
            double dval = dvc[ci];
            for (int64_t l = Lq - 1; l >= 0; --l) {
              double g = gout.at(bi, ci, l);
              double dt = dtvc.at(bi, ci, l);
              double xin = xvc.at(bi, ci, l);
              const double* hl = hs.data() + ((bi * Cq + ci) * Lq + l) * Nq;
              const double* hprev =
                  l > 0 ? hs.data() + ((bi * Cq + ci) * Lq + l - 1) * Nq
                        : nullptr;
              double* brow = gb.data() + (bi * Nq) * Lq + l;
              double* crow = gc.data() + (bi * Nq) * Lq + l;
              const double* bval = bvc.data() + (bi * Nq) * Lq + l;
              const double* cval = cvc.data() + (bi * Nq) * Lq + l;
              double ddt = 0.0, dxin = dval * g;
              gd[ci] += g * xin;
              for (int64_t n = 0; n < Nq; ++n) {
                double dhn = dh[static_cast<size_t>(n)] + g * cval[n * Lq];
                crow[n * Lq] += g * hl[n];
                double hp = hprev ? hprev[n] : 0.0;
                double abar = std::exp(dt * arow[n]);
                ddt += dhn * (hp * arow[n] * abar + bval[n * Lq] * xin);
                ga.at(ci, n) += dhn * hp * dt * abar;
                brow[n * Lq] += dhn * dt * xin;
                dxin += dhn * dt * bval[n * Lq];
                dh[static_cast<size_t>(n)] = dhn * abar;
              }
              gdt.at(bi, ci, l) = ddt;
              gx.at(bi, ci, l) = dxin;
            }
          }
        acc(xn, std::move(gx));
        acc(dtn, std::move(gdt));
        acc(an, std::move(ga));
        acc(bn, std::move(gb));
        acc(cn, std::move(gc));
        acc(dn, std::move(gd));
      });
}

}  // namespace damamba
