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

#include "damamba/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace damamba {

namespace {
constexpr double kVarCenter = 0.1;
constexpr double kVarSize = 0.2;
}  // namespace

double iou(const Box& a, const Box& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) return 0.0;
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::vector<Box> generate_anchors(const AnchorConfig& cfg) {
  if (cfg.scales.size() != cfg.stages.size())
    throw std::invalid_argument("generate_anchors: one scale per stage");
  std::vector<Box> anchors;
  const double img = cfg.image_size;
  for (size_t si = 0; si < cfg.stages.size(); ++si) {
    int fs = cfg.feature_size(cfg.stages[si]);
    double cell = img / fs;
    double base = cfg.scales[si] * img;
    for (int y = 0; y < fs; ++y)
      for (int x = 0; x < fs; ++x) {
        double cx = (x + 0.5) * cell, cy = (y + 0.5) * cell;
        for (double r : cfg.ratios) {
          double w = base * std::sqrt(r), h = base / std::sqrt(r);
          Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
          b.x1 = std::clamp(b.x1, 0.0, img);
          b.y1 = std::clamp(b.y1, 0.0, img);
          b.x2 = std::clamp(b.x2, 0.0, img);
          b.y2 = std::clamp(b.y2, 0.0, img);
          anchors.push_back(b);
        }
      }
  }
  return anchors;
}

std::array<double, 4> encode_box(const Box& anchor, const Box& gt) {
  return {(gt.cx() - anchor.cx()) / (anchor.w() * kVarCenter),
          (gt.cy() - anchor.cy()) / (anchor.h() * kVarCenter),
          std::log(gt.w() / anchor.w()) / kVarSize,
          std::log(gt.h() / anchor.h()) / kVarSize};
}

Box decode_box(const Box& anchor, const std::array<double, 4>& off,
               int image_size) {
  double cx = anchor.cx() + off[0] * kVarCenter * anchor.w();
  double cy = anchor.cy() + off[1] * kVarCenter * anchor.h();
  double w = anchor.w() * std::exp(off[2] * kVarSize);
  double h = anchor.h() * std::exp(off[3] * kVarSize);
  Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  double img = image_size;
  b.x1 = std::clamp(b.x1, 0.0, img);
  b.y1 = std::clamp(b.y1, 0.0, img);
  b.x2 = std::clamp(b.x2, 0.0, img);
  b.y2 = std::clamp(b.y2, 0.0, img);
  return b;
}

std::vector<BoxTarget> match_anchors(const std::vector<Box>& anchors,
                                     const std::vector<Box>& gt_boxes,
                                     const std::vector<int>& gt_classes,
                                     double iou_thresh) {
  const size_t A = anchors.size(), G = gt_boxes.size();
  std::vector<BoxTarget> targets(A);
  if (G == 0) return targets;

  std::vector<std::vector<double>> ious(A, std::vector<double>(G));
  for (size_t a = 0; a < A; ++a)
    for (size_t g = 0; g < G; ++g) ious[a][g] = iou(anchors[a], gt_boxes[g]);

  // threshold matches: each anchor takes its best GT if above threshold
  for (size_t a = 0; a < A; ++a) {
    size_t best = 0;
    for (size_t g = 1; g < G; ++g)
      if (ious[a][g] > ious[a][best]) best = g;
    if (ious[a][best] >= iou_thresh) {
      targets[a].matched_gt = static_cast<int>(best);
      targets[a].class_id = gt_classes[best] + 1;
      targets[a].offsets = encode_box(anchors[a], gt_boxes[best]);
    }
  }
  // forced matches: each GT claims its best anchor regardless of threshold
  for (size_t g = 0; g < G; ++g) {
    size_t best = 0;
    for (size_t a = 1; a < A; ++a)
      if (ious[a][g] > ious[best][g]) best = a;
    targets[best].matched_gt = static_cast<int>(g);
    targets[best].class_id = gt_classes[g] + 1;
    targets[best].offsets = encode_box(anchors[best], gt_boxes[g]);
  }
  return targets;
}

Var det_loss_single(const Var& cls_logits, const Var& loc_preds,
                    const std::vector<BoxTarget>& targets, double neg_ratio) {
  const int64_t A = cls_logits.shape()[0];
  if (static_cast<int64_t>(targets.size()) != A ||
      loc_preds.shape()[0] != A)
    throw std::invalid_argument("det_loss_single: anchor count mismatch");

  std::vector<int> labels(targets.size());
  int64_t npos = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    labels[i] = targets[i].class_id;
    if (targets[i].class_id > 0) ++npos;
  }
  Var ls = log_softmax(cls_logits, 1);
  Var ce_all = neg(select_columns(ls, labels));  // (A)

  // hard-negative mining on the detached CE values
  Tensor mask = Tensor::zeros({A});
  std::vector<std::pair<double, int64_t>> negs;
  for (int64_t i = 0; i < A; ++i) {
    if (labels[static_cast<size_t>(i)] > 0)
      mask[i] = 1.0;
    else
      negs.emplace_back(-ce_all.val()[i], i);  // sort hardest first
  }
  std::sort(negs.begin(), negs.end());
  int64_t keep = std::min<int64_t>(
      static_cast<int64_t>(negs.size()),
      static_cast<int64_t>(neg_ratio * static_cast<double>(npos)));
  for (int64_t i = 0; i < keep; ++i) mask[negs[static_cast<size_t>(i)].second] = 1.0;

  double norm = 1.0 / static_cast<double>(std::max<int64_t>(1, npos));
  Var cls_loss = mul_scalar(sum(mul(ce_all, constant(mask))), norm);

  if (npos == 0) return cls_loss;

  Tensor offsets = Tensor::zeros({A, 4});
  Tensor pos_mask = Tensor::zeros({A, 1});
  for (int64_t i = 0; i < A; ++i) {
    const auto& t = targets[static_cast<size_t>(i)];
    if (t.class_id > 0) {
      pos_mask.at(i, 0) = 1.0;
      for (int64_t k = 0; k < 4; ++k) offsets.at(i, k) = t.offsets[static_cast<size_t>(k)];
    }
  }
  Var resid = sub(loc_preds, constant(offsets));
  Var loc_loss = mul_scalar(sum(mul(huber(resid), constant(pos_mask))), norm);
  return add(cls_loss, loc_loss);
}

Var det_loss(const Var& cls_logits, const Var& loc_preds,
             const std::vector<std::vector<BoxTarget>>& targets,
             double neg_ratio) {
  const int64_t B = cls_logits.shape()[0];
  if (static_cast<int64_t>(targets.size()) != B)
    throw std::invalid_argument("det_loss: batch size mismatch");
  const int64_t A = cls_logits.shape()[1], K = cls_logits.shape()[2];
  Var total;
  for (int64_t b = 0; b < B; ++b) {
    Var cl = reshape(slice(cls_logits, 0, b, 1), {A, K});
    Var lc = reshape(slice(loc_preds, 0, b, 1), {A, 4});
    Var term = det_loss_single(cl, lc, targets[static_cast<size_t>(b)],
                               neg_ratio);
    total = total.defined() ? add(total, term) : term;
  }
  return mul_scalar(total, 1.0 / static_cast<double>(B));
}

std::vector<DetPrediction> decode_and_nms(const Tensor& cls_logits,
                                          const Tensor& loc_preds,
                                          const std::vector<Box>& anchors,
                                          int image_size, double score_thresh,
                                          double nms_iou, int topk) {
  const int64_t A = cls_logits.size(0), K = cls_logits.size(1);
  if (anchors.size() != static_cast<size_t>(A))
    throw std::invalid_argument("decode_and_nms: anchor count mismatch");

  std::vector<DetPrediction> out;
  for (int64_t c = 1; c < K; ++c) {
    struct Cand {
      double score;
      int64_t idx;
      Box box;
    };
    std::vector<Cand> cands;
    for (int64_t a = 0; a < A; ++a) {
      // per-row softmax
      double mx = cls_logits.at(a, 0);
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, cls_logits.at(a, k));
      double denom = 0;
      for (int64_t k = 0; k < K; ++k)
        denom += std::exp(cls_logits.at(a, k) - mx);
      double score = std::exp(cls_logits.at(a, c) - mx) / denom;
      if (score < score_thresh) continue;
      std::array<double, 4> off = {loc_preds.at(a, 0), loc_preds.at(a, 1),
                                   loc_preds.at(a, 2), loc_preds.at(a, 3)};
      Box b = decode_box(anchors[static_cast<size_t>(a)], off, image_size);
      if (b.w() <= 0 || b.h() <= 0) continue;
      cands.push_back({score, a, b});
    }
    // ties broken by lower anchor index for determinism
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
      if (x.score != y.score) return x.score > y.score;
      return x.idx < y.idx;
    });
    std::vector<bool> dead(cands.size(), false);
    for (size_t i = 0; i < cands.size(); ++i) {
      if (dead[i]) continue;
      DetPrediction p;
      p.box = cands[i].box;
      p.class_id = static_cast<int>(c - 1);
      p.score = cands[i].score;
      out.push_back(p);
      for (size_t j = i + 1; j < cands.size(); ++j)
        if (!dead[j] && iou(cands[i].box, cands[j].box) >= nms_iou)
          dead[j] = true;
    }
  }
  std::sort(out.begin(), out.end(),
            [](const DetPrediction& a, const DetPrediction& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.class_id != b.class_id) return a.class_id < b.class_id;
              return a.box.x1 < b.box.x1;
            });
  if (static_cast<int>(out.size()) > topk) out.resize(static_cast<size_t>(topk));
  return out;
}

EvalResult evaluate_map(const std::vector<DetPrediction>& predictions,
                        const std::map<std::string, GroundTruth>& gt,
                        double iou_thresh) {
  // classes present in the ground truth
  std::map<int, int> gt_count;
  for (const auto& [id, g] : gt)
    for (int c : g.classes) gt_count[c]++;

  EvalResult res;
  if (gt_count.empty()) return res;

  for (const auto& [cls, total_gt] : gt_count) {
    std::vector<const DetPrediction*> preds;
    for (const auto& p : predictions)
      if (p.class_id == cls) preds.push_back(&p);
    std::sort(preds.begin(), preds.end(),
              [](const DetPrediction* a, const DetPrediction* b) {
                if (a->score != b->score) return a->score > b->score;
                if (a->image_id != b->image_id)
                  return a->image_id < b->image_id;
                return a->box.x1 < b->box.x1;
              });

    std::map<std::string, std::vector<bool>> used;
    std::vector<int> tp(preds.size(), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
      auto it = gt.find(preds[i]->image_id);
      if (it == gt.end()) continue;
      const GroundTruth& g = it->second;
      auto& flags = used[preds[i]->image_id];
      if (flags.empty()) flags.assign(g.boxes.size(), false);
      double best = iou_thresh;
      int best_g = -1;
      for (size_t k = 0; k < g.boxes.size(); ++k) {
        if (g.classes[k] != cls || flags[k]) continue;
        double v = iou(preds[i]->box, g.boxes[k]);
        if (v >= best) {
          best = v;
          best_g = static_cast<int>(k);
        }
      }
      if (best_g >= 0) {
        tp[i] = 1;
        flags[static_cast<size_t>(best_g)] = true;
      }
    }
    // all-point interpolated AP over the PR staircase
    std::vector<double> prec(preds.size()), rec(preds.size());
    int cum_tp = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
      cum_tp += tp[i];
      prec[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
      rec[i] = static_cast<double>(cum_tp) / total_gt;
    }
    double ap = 0, prev_rec = 0, max_prec = 0;
    for (size_t i = preds.size(); i-- > 0;) {
      max_prec = std::max(max_prec, prec[i]);
      prec[i] = max_prec;  // precision envelope
    }
    for (size_t i = 0; i < preds.size(); ++i) {
      ap += (rec[i] - prev_rec) * prec[i];
      prev_rec = rec[i];
    }
    res.per_class_ap[cls] = ap;
  }
  double sum_ap = 0;
  for (const auto& [c, ap] : res.per_class_ap) sum_ap += ap;
  res.map = sum_ap / static_cast<double>(res.per_class_ap.size());
  return res;
}

DetectionHead::DetectionHead(const std::vector<int64_t>& in_channels,
                             int num_classes, int anchors_per_loc,
                             std::mt19937_64& rng)
    : num_classes_(num_classes), anchors_per_loc_(anchors_per_loc) {
  for (size_t i = 0; i < in_channels.size(); ++i) {
    cls_.push_back(std::make_shared<Conv2dLayer>(
        in_channels[i], anchors_per_loc * (num_classes + 1), 3, 1, 1, rng));
    loc_.push_back(std::make_shared<Conv2dLayer>(
        in_channels[i], anchors_per_loc * 4, 3, 1, 1, rng));
    // near-zero head init keeps initial logits small regardless of the
    // magnitude of the incoming feature pyramid
    cls_.back()->weight.val_mut().scale_(0.05);
    loc_.back()->weight.val_mut().scale_(0.05);
    register_module("cls" + std::to_string(i), cls_.back());
    register_module("loc" + std::to_string(i), loc_.back());
  }
}

std::pair<Var, Var> DetectionHead::forward(
    const std::vector<Var>& feats) const {
  if (feats.size() != cls_.size())
    throw std::invalid_argument("DetectionHead: stage count mismatch");
  std::vector<Var> cls_parts, loc_parts;
  for (size_t i = 0; i < feats.size(); ++i) {
    const auto& s = feats[i].shape();  // (B,C,H,W)
    int64_t B = s[0], H = s[2], W = s[3];
    Var c = cls_[i]->forward(feats[i]);
    Var l = loc_[i]->forward(feats[i]);
    // channel blocks are anchor-major: (B, n*(K+1), H, W) -> (B, HWn, K+1)
    cls_parts.push_back(reshape(permute(c, {0, 2, 3, 1}),
                                {B, H * W * anchors_per_loc_,
                                 static_cast<int64_t>(num_classes_ + 1)}));
    loc_parts.push_back(reshape(permute(l, {0, 2, 3, 1}),
                                {B, H * W * anchors_per_loc_, 4}));
  }
  return {concat(cls_parts, 1), concat(loc_parts, 1)};
}

}  // namespace damamba
