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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "damamba/data.hpp"

using namespace damamba;
namespace fs = std::filesystem;

namespace {
DomainSpec spec_of(Domain d, int n = 20, uint64_t seed = 7, int size = 128) {
  DomainSpec s;
  s.domain = d;
  s.num_images = n;
  s.image_size = size;
  s.seed = seed;
  return s;
}

std::string tmp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("damamba_test_" + tag);
  fs::remove_all(p);
  return p.string();
}
}  // namespace

TEST_CASE("rendering is bitwise deterministic") {
  for (Domain d : {Domain::source, Domain::target}) {
    DomainSpec s = spec_of(d);
    Sample a = render_sample(s, 3);
    Sample b = render_sample(s, 3);
    REQUIRE(a.image.size() == b.image.size());
    CHECK(std::equal(a.image.datastart, a.image.dataend, b.image.datastart));
    CHECK(a.boxes.size() == b.boxes.size());
  }
}

TEST_CASE("the two domains share layout but not pixels") {
  DomainSpec src = spec_of(Domain::source), tgt = spec_of(Domain::target);
  for (int i = 0; i < 8; ++i) {
    Sample a = render_sample(src, i);
    Sample b = render_sample(tgt, i);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (size_t k = 0; k < a.boxes.size(); ++k) {
      CHECK(a.boxes[k].x1 == b.boxes[k].x1);
      CHECK(a.boxes[k].y1 == b.boxes[k].y1);
      CHECK(a.boxes[k].x2 == b.boxes[k].x2);
      CHECK(a.boxes[k].y2 == b.boxes[k].y2);
      CHECK(a.classes[k] == b.classes[k]);
    }
    CHECK_FALSE(
        std::equal(a.image.datastart, a.image.dataend, b.image.datastart));
  }
}

TEST_CASE("boxes are in bounds, big enough, and tight on the source domain") {
  DomainSpec s = spec_of(Domain::source, 30);
  for (int i = 0; i < s.num_images; ++i) {
    Sample smp = render_sample(s, i);
    REQUIRE(!smp.boxes.empty());
    for (size_t k = 0; k < smp.boxes.size(); ++k) {
      const Box& b = smp.boxes[k];
      CHECK(b.x1 >= 0);
      CHECK(b.y1 >= 0);
      CHECK(b.x2 <= s.image_size);
      CHECK(b.y2 <= s.image_size);
      CHECK(b.area() >= 64.0);
      CHECK(smp.classes[k] >= 0);
      CHECK(smp.classes[k] < kNumShapeClasses);
    }
  }

  // tightness: on the plain source background the shape pixels inside the
  // recorded box neighborhood must reach the box edges within 1 px
  for (int i = 0; i < 10; ++i) {
    Sample smp = render_sample(s, i);
    if (smp.boxes.size() != 1) continue;  // isolate single-object scenes
    const Box& b = smp.boxes[0];
    double minx = 1e9, miny = 1e9, maxx = -1e9, maxy = -1e9;
    for (int y = 0; y < s.image_size; ++y)
      for (int x = 0; x < s.image_size; ++x) {
        cv::Vec3b px = smp.image.at<cv::Vec3b>(y, x);
        // saturated shape colors differ strongly from the gray background
        int spread = std::abs(px[0] - px[1]) + std::abs(px[1] - px[2]) +
                     std::abs(px[0] - px[2]);
        if (spread > 150) {
          minx = std::min(minx, static_cast<double>(x));
          maxx = std::max(maxx, static_cast<double>(x));
          miny = std::min(miny, static_cast<double>(y));
          maxy = std::max(maxy, static_cast<double>(y));
        }
      }
    REQUIRE(maxx >= minx);
    CHECK(std::abs(minx - b.x1) <= 1.0);
    CHECK(std::abs(miny - b.y1) <= 1.0);
    CHECK(std::abs(maxx - b.x2) <= 1.0);
    CHECK(std::abs(maxy - b.y2) <= 1.0);
  }
}

TEST_CASE("generation writes a reloadable 80/20 manifest deterministically") {
  DomainSpec s = spec_of(Domain::source, 20, 11, 64);
  std::string d1 = tmp_dir("gen1"), d2 = tmp_dir("gen2");
  DatasetManifest m1 = generate_dataset(s, d1);
  DatasetManifest m2 = generate_dataset(s, d2);
  CHECK(m1.train_indices.size() == 16);
  CHECK(m1.test_indices.size() == 4);
  REQUIRE(m1.images.size() == m2.images.size());
  for (size_t i = 0; i < m1.images.size(); ++i) {
    CHECK(m1.images[i].image_id == m2.images[i].image_id);
    REQUIRE(m1.images[i].boxes.size() == m2.images[i].boxes.size());
    for (size_t k = 0; k < m1.images[i].boxes.size(); ++k)
      CHECK(m1.images[i].boxes[k].x1 == m2.images[i].boxes[k].x1);
    CHECK(m1.images[i].classes == m2.images[i].classes);
  }

  DatasetManifest loaded = load_manifest(d1);
  CHECK(loaded.images.size() == m1.images.size());
  CHECK(loaded.spec.seed == s.seed);
  CHECK(loaded.images[3].classes == m1.images[3].classes);
  CHECK(fs::exists(fs::path(d1) / "train.txt"));
  CHECK(fs::exists(fs::path(d1) / "test.txt"));

  DatasetManifest train = manifest_split(loaded, true);
  DatasetManifest test = manifest_split(loaded, false);
  CHECK(train.images.size() == 16);
  CHECK(test.images.size() == 4);

  Tensor img = load_image(loaded.images[0].path);
  CHECK(img.shape() == Shape{3, 64, 64});
  for (int64_t i = 0; i < img.numel(); ++i) {
    CHECK(img[i] >= 0.0);
    CHECK(img[i] <= 1.0);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("class histogram is close to uniform") {
  DomainSpec s = spec_of(Domain::source, 1000, 99, 64);
  std::vector<int> counts(kNumShapeClasses, 0);
  int total = 0;
  for (int i = 0; i < s.num_images; ++i) {
    Sample smp = render_sample(s, i);
    for (int c : smp.classes) {
      counts[static_cast<size_t>(c)]++;
      ++total;
    }
  }
  double expect = static_cast<double>(total) / kNumShapeClasses;
  for (int c = 0; c < kNumShapeClasses; ++c) {
    CHECK(counts[static_cast<size_t>(c)] >= 0.9 * expect);
    CHECK(counts[static_cast<size_t>(c)] <= 1.1 * expect);
  }
}

TEST_CASE("paired loader is seeded, unpaired, and label-hygienic") {
  std::string ds = tmp_dir("loader_s"), dt = tmp_dir("loader_t");
  DatasetManifest ms =
      generate_dataset(spec_of(Domain::source, 20, 5, 64), ds);
  DatasetManifest mt =
      generate_dataset(spec_of(Domain::target, 10, 5, 64), dt);

  PairedLoader l1(ms, mt, 4, 123), l2(ms, mt, 4, 123);
  for (int step = 0; step < 6; ++step) {
    auto b1 = l1.next();
    auto b2 = l2.next();
    CHECK(b1.source_ids == b2.source_ids);
    CHECK(b1.target_ids == b2.target_ids);
    CHECK(b1.x_s.shape() == Shape{4, 3, 64, 64});
    CHECK(b1.y_s.size() == 4);
    for (int64_t i = 0; i < 16; ++i)
      CHECK(b1.x_s[i] == b2.x_s[i]);
  }

  // one epoch over the larger (source) side visits every source image
  PairedLoader l3(ms, mt, 4, 77);
  CHECK(l3.steps_per_epoch() == 5);
  std::set<std::string> seen;
  for (int step = 0; step < l3.steps_per_epoch(); ++step) {
    auto b = l3.next();
    for (const auto& id : b.source_ids) seen.insert(id);
    // target records expose no annotations at all: only ids and pixels
    CHECK(b.target_ids.size() == 4);
  }
  CHECK(seen.size() == 20);
  fs::remove_all(ds);
  fs::remove_all(dt);
}

TEST_CASE("a small conv classifier separates the domains") {
  // 100 train + 50 held-out per domain at 32 px; a real gap should be
  // nearly linearly separable for a tiny convnet
  const int n_train = 100, n_test = 50, S = 32;
  DomainSpec ss = spec_of(Domain::source, n_train + n_test, 21, S);
  DomainSpec ts = spec_of(Domain::target, n_train + n_test, 22, S);

  std::vector<Tensor> xs, xt;
  for (int i = 0; i < n_train + n_test; ++i) {
    xs.push_back(mat_to_tensor(render_sample(ss, i).image));
    xt.push_back(mat_to_tensor(render_sample(ts, i).image));
  }

  std::mt19937_64 rng(1);
  Conv2dLayer c1(3, 8, 3, 2, 1, rng);
  Conv2dLayer c2(8, 16, 3, 2, 1, rng);
  Linear fc(16, 1, rng);
  auto logit_of = [&](const Tensor& img) {
    Var x(img.reshaped({1, 3, S, S}));
    Var h = relu(c1.forward(x));
    h = relu(c2.forward(h));
    Var pooled = mean_axes(h, {2, 3}, false);
    return fc.forward(pooled);
  };
  auto params = [&]() {
    std::vector<Var> ps;
    for (auto& [n, p] : c1.named_parameters()) ps.push_back(p);
    for (auto& [n, p] : c2.named_parameters()) ps.push_back(p);
    for (auto& [n, p] : fc.named_parameters()) ps.push_back(p);
    return ps;
  }();

  std::uniform_int_distribution<int> pick(0, n_train - 1);
  const double lr = 0.05;
  for (int step = 0; step < 300; ++step) {
    int i = pick(rng), j = pick(rng);
    // logistic loss on one image per domain
    Var loss = add(softplus(logit_of(xs[static_cast<size_t>(i)])),
                   softplus(neg(logit_of(xt[static_cast<size_t>(j)]))));
    for (auto& p : params) p.zero_grad();
    backward(loss);
    for (auto& p : params)
      if (p.has_grad()) p.val_mut().add_(p.grad(), -lr);
  }

  NoGradGuard ng;
  int correct = 0;
  for (int i = n_train; i < n_train + n_test; ++i) {
    if (logit_of(xs[static_cast<size_t>(i)]).val().item() < 0.0) ++correct;
    if (logit_of(xt[static_cast<size_t>(i)]).val().item() > 0.0) ++correct;
  }
  double acc = correct / (2.0 * n_test);
  CHECK(acc >= 0.9);
}
