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

#include <Eigen/Dense>

#include <stdexcept>

#include "damamba/ops.hpp"

namespace damamba {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvDims {
  int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo;
  int stride, pad_h, pad_w, groups;
  int64_t cin_g, cout_g;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad_h,
                   int pad_w, int groups) {
  if (x.dim() != 4 || w.dim() != 4)
    throw std::invalid_argument("conv2d expects 4D input and weight");
  ConvDims d;
  d.B = x.size(0);
  d.Cin = x.size(1);
  d.H = x.size(2);
  d.W = x.size(3);
  d.Cout = w.size(0);
  d.kh = w.size(2);
  d.kw = w.size(3);
  d.stride = stride;
  d.pad_h = pad_h;
  d.pad_w = pad_w;
  d.groups = groups;
  if (d.Cin % groups != 0 || d.Cout % groups != 0)
    throw std::invalid_argument("conv2d channels not divisible by groups");
  d.cin_g = d.Cin / groups;
  d.cout_g = d.Cout / groups;
  if (w.size(1) != d.cin_g)
    throw std::invalid_argument("conv2d weight channel mismatch");
  d.Ho = (d.H + 2 * pad_h - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad_w - d.kw) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0)
    throw std::invalid_argument("conv2d output size non-positive");
  return d;
}

// cols: (cin_g*kh*kw, Ho*Wo) for one (image, group).
void im2col(const double* x, const ConvDims& d, int64_t g, double* cols) {
  for (int64_t c = 0; c < d.cin_g; ++c) {
    const double* xc = x + (g * d.cin_g + c) * d.H * d.W;
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        double* row = cols + ((c * d.kh + ki) * d.kw + kj) * d.Ho * d.Wo;
        for (int64_t oi = 0; oi < d.Ho; ++oi) {
          int64_t ii = oi * d.stride - d.pad_h + ki;
          if (ii < 0 || ii >= d.H) {
            std::fill(row + oi * d.Wo, row + (oi + 1) * d.Wo, 0.0);
            continue;
          }
          for (int64_t oj = 0; oj < d.Wo; ++oj) {
            int64_t jj = oj * d.stride - d.pad_w + kj;
            row[oi * d.Wo + oj] =
                (jj >= 0 && jj < d.W) ? xc[ii * d.W + jj] : 0.0;
          }
        }
      }
  }
}

void col2im_add(const double* cols, const ConvDims& d, int64_t g, double* x) {
  for (int64_t c = 0; c < d.cin_g; ++c) {
    double* xc = x + (g * d.cin_g + c) * d.H * d.W;
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const double* row = cols + ((c * d.kh + ki) * d.kw + kj) * d.Ho * d.Wo;
        for (int64_t oi = 0; oi < d.Ho; ++oi) {
          int64_t ii = oi * d.stride - d.pad_h + ki;
          if (ii < 0 || ii >= d.H) continue;
          for (int64_t oj = 0; oj < d.Wo; ++oj) {
            int64_t jj = oj * d.stride - d.pad_w + kj;
            if (jj >= 0 && jj < d.W) xc[ii * d.W + jj] += row[oi * d.Wo + oj];
          }
        }
      }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups) {
  return conv2d_hw(x, w, b, stride, pad, pad, groups);
}

Var conv2d_hw(const Var& x, const Var& w, const Var& b, int stride, int pad_h,
              int pad_w, int groups) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  ConvDims d = conv_dims(xv, wv, stride, pad_h, pad_w, groups);
  bool has_bias = b.defined();
  if (has_bias && (b.val().dim() != 1 || b.val().size(0) != d.Cout))
    throw std::invalid_argument("conv2d bias shape");

  Tensor out = Tensor::empty({d.B, d.Cout, d.Ho, d.Wo});
  int64_t krows = d.cin_g * d.kh * d.kw;
  int64_t ncols = d.Ho * d.Wo;
  std::vector<double, detail::DefaultInitAlloc<double>> cols(
      static_cast<size_t>(krows * ncols));
  for (int64_t bi = 0; bi < d.B; ++bi) {
    const double* xb = xv.data() + bi * d.Cin * d.H * d.W;
    for (int64_t g = 0; g < d.groups; ++g) {
      im2col(xb, d, g, cols.data());
      ConstMatMap W(wv.data() + g * d.cout_g * krows, d.cout_g, krows);
      ConstMatMap Cm(cols.data(), krows, ncols);
      MatMap O(out.data() + (bi * d.Cout + g * d.cout_g) * ncols, d.cout_g,
               ncols);
      O = W * Cm;
    }
    if (has_bias) {
      const Tensor& bt = b.val();
      for (int64_t c = 0; c < d.Cout; ++c) {
        double* oc = out.data() + (bi * d.Cout + c) * ncols;
        for (int64_t i = 0; i < ncols; ++i) oc[i] += bt[c];
      }
    }
  }

  NodePtr xn = x.node(), wn = w.node();
  NodePtr bnode = has_bias ? b.node() : nullptr;
  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_op(
      std::move(out), parents,
      [xn, wn, bnode, d, krows, ncols](const Tensor& gout) {
        const Tensor& xvc = xn->value;
        const Tensor& wvc = wn->value;
        bool need_x = xn->requires_grad;
        bool need_w = wn->requires_grad;
        bool need_b = bnode && bnode->requires_grad;
        Tensor gx, gw, gb;
        if (need_x) gx = Tensor(xvc.shape());
        if (need_w) gw = Tensor(wvc.shape());
        if (need_b) gb = Tensor({d.Cout});
        std::vector<double, detail::DefaultInitAlloc<double>> cols(
            static_cast<size_t>(krows * ncols));
        std::vector<double, detail::DefaultInitAlloc<double>> gcols(
            static_cast<size_t>(krows * ncols));
        for (int64_t bi = 0; bi < d.B; ++bi) {
          const double* xb = xvc.data() + bi * d.Cin * d.H * d.W;
          for (int64_t g = 0; g < d.groups; ++g) {
            ConstMatMap G(gout.data() + (bi * d.Cout + g * d.cout_g) * ncols,
                          d.cout_g, ncols);
            if (need_w) {
              im2col(xb, d, g, cols.data());
              ConstMatMap Cm(cols.data(), krows, ncols);
              MatMap GW(gw.data() + g * d.cout_g * krows, d.cout_g, krows);
              GW += G * Cm.transpose();
            }
            if (need_x) {
              ConstMatMap W(wvc.data() + g * d.cout_g * krows, d.cout_g,
                            krows);
              MatMap GC(gcols.data(), krows, ncols);
              GC = W.transpose() * G;
              col2im_add(gcols.data(), d, g,
                         gx.data() + bi * d.Cin * d.H * d.W);
            }
          }
          if (need_b)
            for (int64_t c = 0; c < d.Cout; ++c) {
              const double* oc = gout.data() + (bi * d.Cout + c) * ncols;
              for (int64_t i = 0; i < ncols; ++i) gb[c] += oc[i];
            }
        }
        if (need_x) xn->accumulate(std::move(gx));
        if (need_w) wn->accumulate(std::move(gw));
        if (need_b) bnode->accumulate(std::move(gb));
      });
}

}  // namespace damamba
