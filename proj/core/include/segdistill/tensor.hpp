// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace segdistill {

/// Ordered list of positive extents. Images are channel-last: [N, H, W, C].
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::vector<int> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  int operator[](std::size_t axis) const { return dims_.at(axis); }
  int back() const { return dims_.back(); }
  const std::vector<int>& dims() const noexcept { return dims_; }

  /// Product of the extents; 1 for a scalar (rank 0).
  std::size_t numel() const noexcept;

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;

 private:
  std::vector<int> dims_;
};

/// Dense row-major float32 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  float item() const;

  /// 4-D accessor for [N, H, W, C] tensors.
  float at(int n, int h, int w, int c) const;
  float& at(int n, int h, int w, int c);

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool all_finite() const noexcept;

  /// Same data, different extents; the element count must match.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
};

}  // namespace segdistill
