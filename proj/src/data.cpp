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

#include "damamba/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace damamba {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(uint64_t seed, uint64_t index, uint64_t salt) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ salt) + index));
}

cv::Scalar random_color(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> hue(0, 179);
  cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(hue(rng), 200, 220));
  cv::Mat bgr;
  cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
  cv::Vec3b v = bgr.at<cv::Vec3b>(0, 0);
  return cv::Scalar(v[0], v[1], v[2]);
}

struct ShapeGeom {
  std::vector<cv::Point> poly;  // empty for circle/ring
  Box box;
};

ShapeGeom shape_geometry(int cls, int cx, int cy, int r) {
  ShapeGeom g;
  auto box_of = [](const std::vector<cv::Point>& pts) {
    Box b{1e9, 1e9, -1e9, -1e9};
    for (const auto& p : pts) {
      b.x1 = std::min(b.x1, static_cast<double>(p.x));
      b.y1 = std::min(b.y1, static_cast<double>(p.y));
      b.x2 = std::max(b.x2, static_cast<double>(p.x));
      b.y2 = std::max(b.y2, static_cast<double>(p.y));
    }
    return b;
  };
  switch (cls) {
    case 0:  // circle
    case 5:  // ring
      g.box = Box{static_cast<double>(cx - r), static_cast<double>(cy - r),
                  static_cast<double>(cx + r), static_cast<double>(cy + r)};
      break;
    case 1:  // square
      g.poly = {{cx - r, cy - r}, {cx + r, cy - r}, {cx + r, cy + r},
                {cx - r, cy + r}};
      g.box = box_of(g.poly);
      break;
    case 2:  // triangle
      g.poly = {{cx, cy - r},
                {cx - r, cy + static_cast<int>(0.8 * r)},
                {cx + r, cy + static_cast<int>(0.8 * r)}};
      g.box = box_of(g.poly);
      break;
    case 3: {  // five-point star
      for (int k = 0; k < 10; ++k) {
        double rad = (k % 2 == 0) ? r : 0.45 * r;
        double ang = -M_PI / 2 + k * M_PI / 5;
        g.poly.push_back({cx + static_cast<int>(std::round(rad * std::cos(ang))),
                          cy + static_cast<int>(std::round(rad * std::sin(ang)))});
      }
      g.box = box_of(g.poly);
      break;
    }
    case 4: {  // cross
      int t = std::max(2, static_cast<int>(0.3 * r));
      g.poly = {{cx - t, cy - r}, {cx + t, cy - r}, {cx + t, cy - t},
                {cx + r, cy - t}, {cx + r, cy + t}, {cx + t, cy + t},
                {cx + t, cy + r}, {cx - t, cy + r}, {cx - t, cy + t},
                {cx - r, cy + t}, {cx - r, cy - t}, {cx - t, cy - t}};
      g.box = box_of(g.poly);
      break;
    }
    default:
      throw std::invalid_argument("shape_geometry: bad class");
  }
  return g;
}

void draw_shape(cv::Mat& img, int cls, int cx, int cy, int r,
                const cv::Scalar& color, bool outline,
                const ShapeGeom& geom) {
  if (cls == 0) {
    cv::circle(img, {cx, cy}, r, color, outline ? 2 : cv::FILLED,
               cv::LINE_8);
  } else if (cls == 5) {
    if (outline) {
      cv::circle(img, {cx, cy}, r, color, 2, cv::LINE_8);
      cv::circle(img, {cx, cy}, static_cast<int>(0.55 * r), color, 2,
                 cv::LINE_8);
    } else {
      cv::circle(img, {cx, cy}, r, color, std::max(3, r / 3), cv::LINE_8);
    }
  } else {
    std::vector<std::vector<cv::Point>> pts = {geom.poly};
    if (outline)
      cv::polylines(img, pts, true, color, 2, cv::LINE_8);
    else
      cv::fillPoly(img, pts, color, cv::LINE_8);
  }
}

}  // namespace

const char* shape_class_name(int class_id) {
  static const char* names[kNumShapeClasses] = {"circle", "square",
                                                "triangle", "star",
                                                "cross",  "ring"};
  if (class_id < 0 || class_id >= kNumShapeClasses)
    throw std::out_of_range("shape_class_name");
  return names[class_id];
}

Sample render_sample(const DomainSpec& spec, int index) {
  if (index < 0 || index >= spec.num_images)
    throw std::out_of_range("render_sample: index");
  const int S = spec.image_size;
  const bool target = spec.domain == Domain::target;
  // layout is domain independent; style is not
  auto layout = stream(spec.seed, static_cast<uint64_t>(index), 0xA11CEULL);
  auto style = stream(spec.seed, static_cast<uint64_t>(index),
                      target ? 0x7A46E7ULL : 0x50u);

  Sample s;
  s.image = cv::Mat(S, S, CV_8UC3);

  // background
  if (!target) {
    std::uniform_int_distribution<int> base(185, 215);
    int g = base(style);
    std::normal_distribution<double> noise(0.0, 8.0);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        auto& px = s.image.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c)
          px[c] = cv::saturate_cast<uchar>(g + noise(style));
      }
  } else {
    std::uniform_int_distribution<int> base(90, 140);
    s.image.setTo(cv::Scalar(base(style), base(style), base(style)));
    std::uniform_int_distribution<int> coord(0, S - 1), shade(40, 220),
        rad(2, 6);
    for (int i = 0; i < 25; ++i)  // clutter lines
      cv::line(s.image, {coord(style), coord(style)},
               {coord(style), coord(style)},
               cv::Scalar(shade(style), shade(style), shade(style)), 1);
    for (int i = 0; i < 10; ++i)  // clutter blobs
      cv::circle(s.image, {coord(style), coord(style)}, rad(style),
                 cv::Scalar(shade(style), shade(style), shade(style)),
                 cv::FILLED);
  }

  // objects
  std::uniform_int_distribution<int> count(spec.min_objects,
                                           spec.max_objects);
  std::uniform_int_distribution<int> klass(0, kNumShapeClasses - 1);
  std::uniform_int_distribution<int> radius(12, std::max(13, S / 5));
  int n = count(layout);
  for (int obj = 0; obj < n; ++obj) {
    int cls = klass(layout);
    for (int attempt = 0; attempt < 50; ++attempt) {
      int r = radius(layout);
      std::uniform_int_distribution<int> center(r + 2, S - r - 3);
      int cx = center(layout), cy = center(layout);
      ShapeGeom geom = shape_geometry(cls, cx, cy, r);
      bool clash = false;
      for (const auto& b : s.boxes)
        if (iou(b, geom.box) > 0.3) clash = true;
      if (clash) continue;
      draw_shape(s.image, cls, cx, cy, r, random_color(style), target, geom);
      s.boxes.push_back(geom.box);
      s.classes.push_back(cls);
      break;
    }
  }

  // target style: global hue rotation after drawing
  if (target) {
    std::uniform_int_distribution<int> rot(40, 140);
    int shift = rot(style);
    cv::Mat hsv;
    cv::cvtColor(s.image, hsv, cv::COLOR_BGR2HSV);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        auto& px = hsv.at<cv::Vec3b>(y, x);
        px[0] = static_cast<uchar>((px[0] + shift) % 180);
      }
    cv::cvtColor(hsv, s.image, cv::COLOR_HSV2BGR);
  }
  return s;
}

DatasetManifest generate_dataset(const DomainSpec& spec,
                                 const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  DatasetManifest m;
  m.spec = spec;
  const std::string dom =
      spec.domain == Domain::source ? "source" : "target";
  json jimages = json::array();
  for (int i = 0; i < spec.num_images; ++i) {
    Sample s = render_sample(spec, i);
    ImageRecord rec;
    rec.image_id = dom + "_" + std::to_string(i);
    std::string rel = "images/" + rec.image_id + ".png";
    rec.path = (fs::path(out_dir) / rel).string();
    if (!cv::imwrite(rec.path, s.image))
      throw std::runtime_error("generate_dataset: failed to write " +
                               rec.path);
    rec.boxes = s.boxes;
    rec.classes = s.classes;
    json jb = json::array();
    for (const auto& b : rec.boxes) jb.push_back({b.x1, b.y1, b.x2, b.y2});
    jimages.push_back({{"image_id", rec.image_id},
                       {"path", rel},
                       {"boxes", jb},
                       {"classes", rec.classes}});
    m.images.push_back(std::move(rec));
  }
  size_t n_train = (m.images.size() * 8) / 10;
  for (size_t i = 0; i < m.images.size(); ++i)
    (i < n_train ? m.train_indices : m.test_indices).push_back(i);

  json j = {{"spec",
             {{"domain", dom},
              {"num_images", spec.num_images},
              {"image_size", spec.image_size},
              {"min_objects", spec.min_objects},
              {"max_objects", spec.max_objects},
              {"seed", spec.seed}}},
            {"images", jimages}};
  // write-then-rename keeps readers from seeing a torn manifest
  fs::path tmp = fs::path(out_dir) / "manifest.json.tmp";
  std::ofstream(tmp) << j.dump(2) << "\n";
  fs::rename(tmp, fs::path(out_dir) / "manifest.json");
  {
    std::ofstream tr(fs::path(out_dir) / "train.txt");
    for (size_t i : m.train_indices) tr << m.images[i].image_id << "\n";
    std::ofstream te(fs::path(out_dir) / "test.txt");
    for (size_t i : m.test_indices) te << m.images[i].image_id << "\n";
  }
  return m;
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_manifest: cannot open " + dir);
  json j;
  in >> j;
  DatasetManifest m;
  const auto& js = j.at("spec");
  m.spec.domain = js.at("domain").get<std::string>() == "target"
                      ? Domain::target
                      : Domain::source;
  m.spec.num_images = js.at("num_images").get<int>();
  m.spec.image_size = js.at("image_size").get<int>();
  m.spec.min_objects = js.at("min_objects").get<int>();
  m.spec.max_objects = js.at("max_objects").get<int>();
  m.spec.seed = js.at("seed").get<uint64_t>();
  for (const auto& ji : j.at("images")) {
    ImageRecord rec;
    rec.image_id = ji.at("image_id").get<std::string>();
    rec.path = (fs::path(dir) / ji.at("path").get<std::string>()).string();
    for (const auto& jb : ji.at("boxes"))
      rec.boxes.push_back(
          {jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(),
           jb[3].get<double>()});
    rec.classes = ji.at("classes").get<std::vector<int>>();
    m.images.push_back(std::move(rec));
  }
  size_t n_train = (m.images.size() * 8) / 10;
  for (size_t i = 0; i < m.images.size(); ++i)
    (i < n_train ? m.train_indices : m.test_indices).push_back(i);
  return m;
}

DatasetManifest manifest_split(const DatasetManifest& m, bool train) {
  DatasetManifest out;
  out.spec = m.spec;
  for (size_t i : (train ? m.train_indices : m.test_indices))
    out.images.push_back(m.images[i]);
  for (size_t i = 0; i < out.images.size(); ++i)
    out.train_indices.push_back(i);
  return out;
}

Tensor mat_to_tensor(const cv::Mat& bgr) {
  const int H = bgr.rows, W = bgr.cols;
  Tensor t = Tensor::zeros({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto& px = bgr.at<cv::Vec3b>(y, x);
      t.at(0, y, x) = px[2] / 255.0;  // R
      t.at(1, y, x) = px[1] / 255.0;  // G
      t.at(2, y, x) = px[0] / 255.0;  // B
    }
  return t;
}

Tensor load_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty())
    throw std::runtime_error("load_image: cannot read " + path);
  return mat_to_tensor(img);
}

PairedLoader::PairedLoader(const DatasetManifest& source,
                           const DatasetManifest& target, int batch_size,
                           uint64_t seed)
    : batch_size_(batch_size), rng_(splitmix64(seed ^ 0x10adULL)) {
  if (source.images.empty() || target.images.empty())
    throw std::invalid_argument("PairedLoader: empty manifest");
  for (const auto& rec : source.images) {
    src_.images.push_back(load_image(rec.path));
    GroundTruth g;
    g.boxes = rec.boxes;
    g.classes = rec.classes;
    src_.labels.push_back(std::move(g));
    src_.ids.push_back(rec.image_id);
  }
  for (const auto& rec : target.images) {
    tgt_.images.push_back(load_image(rec.path));
    // target annotations are withheld from the training stream
    tgt_.ids.push_back(rec.image_id);
  }
  for (auto* side : {&src_, &tgt_}) {
    side->order.resize(side->images.size());
    std::iota(side->order.begin(), side->order.end(), 0);
    std::shuffle(side->order.begin(), side->order.end(), rng_);
  }
}

int64_t PairedLoader::steps_per_epoch() const {
  int64_t larger = static_cast<int64_t>(
      std::max(src_.images.size(), tgt_.images.size()));
  return (larger + batch_size_ - 1) / batch_size_;
}

size_t PairedLoader::draw(Side& side) {
  if (side.cursor >= side.order.size()) {
    std::shuffle(side.order.begin(), side.order.end(), rng_);
    side.cursor = 0;
  }
  return side.order[side.cursor++];
}

PairedLoader::State PairedLoader::state() const {
  State s;
  s.src_order = src_.order;
  s.tgt_order = tgt_.order;
  s.src_cursor = src_.cursor;
  s.tgt_cursor = tgt_.cursor;
  std::ostringstream os;
  os << rng_;
  s.rng = os.str();
  return s;
}

void PairedLoader::restore(const State& s) {
  if (s.src_order.size() != src_.order.size() ||
      s.tgt_order.size() != tgt_.order.size()) {
    throw std::invalid_argument("loader state does not match dataset");
  }
  src_.order = s.src_order;
  tgt_.order = s.tgt_order;
  src_.cursor = s.src_cursor;
  tgt_.cursor = s.tgt_cursor;
  std::istringstream is(s.rng);
  is >> rng_;
}

PairedLoader::Batch PairedLoader::next() {
  const auto& shape = src_.images[0].shape();
  int64_t H = shape[1], W = shape[2];
  Batch b;
  b.x_s = Tensor::zeros({batch_size_, 3, H, W});
  b.x_t = Tensor::zeros({batch_size_, 3, H, W});
  for (int i = 0; i < batch_size_; ++i) {
    size_t si = draw(src_), ti = draw(tgt_);
    const Tensor& xs = src_.images[si];
    const Tensor& xt = tgt_.images[ti];
    for (int64_t k = 0; k < xs.numel(); ++k)
      b.x_s[i * xs.numel() + k] = xs[k];
    for (int64_t k = 0; k < xt.numel(); ++k)
      b.x_t[i * xt.numel() + k] = xt[k];
    b.y_s.push_back(src_.labels[si]);
    b.source_ids.push_back(src_.ids[si]);
    b.target_ids.push_back(tgt_.ids[ti]);
  }
  return b;
}

}  // namespace damamba
