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

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <new>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace damamba {

using Shape = std::vector<int64_t>;

namespace detail {

/// Allocator whose default construct leaves trivial types uninitialized, so
/// resize() skips the zero-fill pass for buffers that are written in full.
template <class T>
class DefaultInitAlloc : public std::allocator<T> {
 public:
  template <class U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  using std::allocator<T>::allocator;
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major double tensor with value semantics. Rank up to 5.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
  }
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Allocates without zero-filling. Every element must be written before
  /// it is read.
  static Tensor empty(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<size_t>(shape_numel(t.shape_)));
    return t;
  }
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return full({}, v); }
  static Tensor from(Shape shape, std::initializer_list<double> vals);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      double mean = 0.0);
  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo,
                             double hi);

  const Shape& shape() const { return shape_; }
  int64_t dim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t size(int axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j);
  double at(int64_t i, int64_t j) const;
  double& at(int64_t i, int64_t j, int64_t k);
  double at(int64_t i, int64_t j, int64_t k) const;
  double& at(int64_t i, int64_t j, int64_t k, int64_t l);
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const;

  /// Returns a copy with a new shape (same numel).
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double item() const;

  void fill(double v) { data_.assign(data_.size(), v); }
  void add_(const Tensor& o, double scale = 1.0);
  void scale_(double s);

 private:
  Shape shape_;
  std::vector<double, detail::DefaultInitAlloc<double>> data_;
};

}  // namespace damamba
