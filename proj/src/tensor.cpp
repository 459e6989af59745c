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

#include "damamba/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace damamba {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
    throw std::invalid_argument("tensor data size mismatch for shape " +
                                shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> vals) {
  return Tensor(std::move(shape), std::vector<double>(vals));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     double mean) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                            double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

int64_t Tensor::size(int axis) const {
  int64_t d = dim();
  int64_t a = axis < 0 ? axis + d : axis;
  if (a < 0 || a >= d)
    throw std::out_of_range("axis " + std::to_string(axis) + " for shape " +
                            shape_str(shape_));
  return shape_[static_cast<size_t>(a)];
}

double& Tensor::at(int64_t i, int64_t j) {
  return data_[static_cast<size_t>(i * shape_[1] + j)];
}
double Tensor::at(int64_t i, int64_t j) const {
  return data_[static_cast<size_t>(i * shape_[1] + j)];
}
double& Tensor::at(int64_t i, int64_t j, int64_t k) {
  return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}
double Tensor::at(int64_t i, int64_t j, int64_t k) const {
  return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}
double& Tensor::at(int64_t i, int64_t j, int64_t k, int64_t l) {
  return data_[static_cast<size_t>(
      ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
}
double Tensor::at(int64_t i, int64_t j, int64_t k, int64_t l) const {
  return data_[static_cast<size_t>(
      ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("reshape numel mismatch: " + shape_str(shape_) +
                                " -> " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on non-scalar tensor");
  return data_[0];
}

void Tensor::add_(const Tensor& o, double scale) {
  if (!same_shape(o)) throw std::invalid_argument("add_ shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o.data_[i];
}

void Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

}  // namespace damamba
