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

#include "damamba/plot.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <stdexcept>

namespace damamba {

std::vector<EntropySeries> read_entropy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  std::map<int, EntropySeries> by_stage;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    double fields[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error(
          "malformed entropy.csv row: " + line);
      fields[i] = std::stod(cell);
    }
    const int stage = static_cast<int>(fields[1]);
    EntropySeries& s = by_stage[stage];
    s.stage = stage;
    s.steps.push_back(fields[0]);
    s.values.push_back(fields[2] + fields[3]);
  }
  std::vector<EntropySeries> out;
  for (auto& [stage, s] : by_stage) out.push_back(std::move(s));
  return out;
}

void plot_entropy(const std::vector<EntropySeries>& series,
                  const std::string& out_png, int width, int height) {
  if (series.empty()) throw std::invalid_argument("plot_entropy: no series");

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double x : s.steps) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    for (double y : s.values) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;

  const int ml = 70, mr = 20, mt = 20, mb = 50;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double x) {
    return ml + static_cast<int>((x - xmin) / (xmax - xmin) *
                                 (width - ml - mr));
  };
  auto py = [&](double y) {
    return height - mb -
           static_cast<int>((y - ymin) / (ymax - ymin) * (height - mt - mb));
  };

  cv::line(img, {ml, mt}, {ml, height - mb}, {0, 0, 0}, 1);
  cv::line(img, {ml, height - mb}, {width - mr, height - mb}, {0, 0, 0}, 1);
  cv::putText(img, "step", {width / 2 - 20, height - 12},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1);
  cv::putText(img, "entropy", {8, mt + 14}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              {0, 0, 0}, 1);
  char buf[64];
  snprintf(buf, sizeof(buf), "%.3f", ymax);
  cv::putText(img, buf, {6, mt + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              {80, 80, 80}, 1);
  snprintf(buf, sizeof(buf), "%.3f", ymin);
  cv::putText(img, buf, {6, height - mb + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
              {80, 80, 80}, 1);

  const cv::Scalar palette[] = {{180, 60, 20}, {30, 140, 30}, {40, 40, 210}};
  for (size_t k = 0; k < series.size(); ++k) {
    const EntropySeries& s = series[k];
    const cv::Scalar color = palette[k % 3];
    for (size_t i = 1; i < s.steps.size(); ++i) {
      cv::line(img, {px(s.steps[i - 1]), py(s.values[i - 1])},
               {px(s.steps[i]), py(s.values[i])}, color, 2, cv::LINE_AA);
    }
    const std::string label = "stage " + std::to_string(s.stage);
    const int lx = width - mr - 120, ly = mt + 22 * (static_cast<int>(k) + 1);
    cv::line(img, {lx, ly - 4}, {lx + 24, ly - 4}, color, 2);
    cv::putText(img, label, {lx + 32, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                {0, 0, 0}, 1);
  }

  if (!cv::imwrite(out_png, img))
    throw std::runtime_error("cannot write " + out_png);
}

}  // namespace damamba
