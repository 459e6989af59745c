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

#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "damamba/detection.hpp"

namespace damamba {

enum class Domain { source, target };

constexpr int kNumShapeClasses = 6;
const char* shape_class_name(int class_id);  // circle..ring

struct DomainSpec {
  Domain domain = Domain::source;
  int num_images = 100;
  int image_size = 128;
  int min_objects = 1;
  int max_objects = 3;
  uint64_t seed = 0;
};

struct Sample {
  cv::Mat image;  // 8UC3, BGR
  std::vector<Box> boxes;
  std::vector<int> classes;  // 0-based
};

/// Deterministic render: the object layout depends only on (seed, index) so
/// the two domains share geometry; the style stream additionally depends on
/// the domain.
Sample render_sample(const DomainSpec& spec, int index);

struct ImageRecord {
  std::string image_id;
  std::string path;
  std::vector<Box> boxes;
  std::vector<int> classes;
};

struct DatasetManifest {
  DomainSpec spec;
  std::vector<ImageRecord> images;
  std::vector<size_t> train_indices, test_indices;  // 80/20 by index
};

/// Renders all images to <out_dir>/images/*.png and writes manifest.json
/// plus train.txt / test.txt id lists.
DatasetManifest generate_dataset(const DomainSpec& spec,
                                 const std::string& out_dir);
DatasetManifest load_manifest(const std::string& dir);

/// Manifest restricted to its train or test split.
DatasetManifest manifest_split(const DatasetManifest& m, bool train);

/// PNG -> (3,H,W) tensor scaled to [0,1], RGB order.
Tensor load_image(const std::string& path);
Tensor mat_to_tensor(const cv::Mat& bgr);

/// Unpaired source/target batch stream: labels travel only with the source.
class PairedLoader {
 public:
  PairedLoader(const DatasetManifest& source, const DatasetManifest& target,
               int batch_size, uint64_t seed);

  struct Batch {
    Tensor x_s, x_t;  // (B,3,H,W)
    std::vector<GroundTruth> y_s;
    std::vector<std::string> source_ids, target_ids;
  };

  Batch next();
  int64_t steps_per_epoch() const;

  /// Snapshot of the shuffle state, enough to resume a run exactly.
  struct State {
    std::vector<size_t> src_order, tgt_order;
    size_t src_cursor = 0, tgt_cursor = 0;
    std::string rng;
  };
  State state() const;
  void restore(const State& s);

 private:
  struct Side {
    std::vector<Tensor> images;
    std::vector<GroundTruth> labels;
    std::vector<std::string> ids;
    std::vector<size_t> order;
    size_t cursor = 0;
  };
  size_t draw(Side& side);

  Side src_, tgt_;
  int batch_size_;
  std::mt19937_64 rng_;
};

}  // namespace damamba
