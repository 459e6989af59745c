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

#include <array>
#include <map>
#include <string>
#include <vector>

#include "damamba/nn.hpp"

namespace damamba {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
};

/// Intersection over union; degenerate boxes give 0.
double iou(const Box& a, const Box& b);

struct AnchorConfig {
  std::vector<int> stages = {4, 5, 6};
  std::vector<double> scales = {0.25, 0.45, 0.7};  // fraction of image size
  std::vector<double> ratios = {1.0, 2.0, 0.5};
  int image_size = 128;

  int anchors_per_location() const { return static_cast<int>(ratios.size()); }
  /// Feature map side length of a stage (image halves once per stage).
  int feature_size(int stage) const { return image_size >> stage; }
};

/// All anchors in evaluation order (stage-major, then row, column, ratio),
/// clipped to the image.
std::vector<Box> generate_anchors(const AnchorConfig& cfg);

/// Center-size offset encoding with variances (0.1, 0.2).
std::array<double, 4> encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const std::array<double, 4>& offsets,
               int image_size);

struct BoxTarget {
  int class_id = 0;  // 0 = background, 1..K = object classes
  std::array<double, 4> offsets{};
  int matched_gt = -1;
};

/// SSD matching: per-GT forced best anchor plus every anchor with
/// IoU >= iou_thresh. gt_classes are 0-based object classes; stored targets
/// shift them by +1 so 0 stays background.
std::vector<BoxTarget> match_anchors(const std::vector<Box>& anchors,
                                     const std::vector<Box>& gt_boxes,
                                     const std::vector<int>& gt_classes,
                                     double iou_thresh = 0.5);

/// Per-image supervised loss: softmax CE with 3:1 hard-negative mining plus
/// smooth-L1 over positive offsets, normalized by max(1, #positives).
/// cls_logits: (A, K+1); loc_preds: (A, 4).
Var det_loss_single(const Var& cls_logits, const Var& loc_preds,
                    const std::vector<BoxTarget>& targets,
                    double neg_ratio = 3.0);

/// Batch mean of the per-image loss. cls: (B,A,K+1); loc: (B,A,4).
Var det_loss(const Var& cls_logits, const Var& loc_preds,
             const std::vector<std::vector<BoxTarget>>& targets,
             double neg_ratio = 3.0);

struct DetPrediction {
  std::string image_id;
  Box box;
  int class_id = 0;  // 0-based object class
  double score = 0;
};

/// Decode one image's head outputs, apply per-class NMS (score ties broken
/// by lower anchor index) and global top-k.
std::vector<DetPrediction> decode_and_nms(
    const Tensor& cls_logits, const Tensor& loc_preds,
    const std::vector<Box>& anchors, int image_size,
    double score_thresh = 0.05, double nms_iou = 0.45, int topk = 200);

struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<int> classes;  // 0-based
};

struct EvalResult {
  std::map<int, double> per_class_ap;
  double map = 0;
};

/// All-point interpolated AP at the given IoU threshold; mAP averages over
/// classes present in the ground truth.
EvalResult evaluate_map(const std::vector<DetPrediction>& predictions,
                        const std::map<std::string, GroundTruth>& gt,
                        double iou_thresh = 0.5);

/// Multi-scale SSD head over the stage-4..6 pyramid.
class DetectionHead : public Module {
 public:
  DetectionHead(const std::vector<int64_t>& in_channels, int num_classes,
                int anchors_per_loc, std::mt19937_64& rng);
  /// feats: one map per stage -> (B, A, K+1) logits and (B, A, 4) offsets.
  std::pair<Var, Var> forward(const std::vector<Var>& feats) const;
  int num_classes() const { return num_classes_; }

 private:
  int num_classes_, anchors_per_loc_;
  std::vector<std::shared_ptr<Conv2dLayer>> cls_, loc_;
};

}  // namespace damamba
