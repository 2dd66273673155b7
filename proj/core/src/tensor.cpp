// SPDX-License-Identifier: Apache-2.0
#include "segdistill/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "segdistill/error.hpp"

namespace segdistill {

namespace {

void check_extents(const std::vector<int>& dims) {
  for (int d : dims) {
    if (d < 0) throw ShapeError("negative extent in shape");
  }
}

}  // namespace

Shape::Shape(std::initializer_list<int> dims) : dims_(dims) { check_extents(dims_); }

Shape::Shape(std::vector<int> dims) : dims_(std::move(dims)) { check_extents(dims_); }

std::size_t Shape::numel() const noexcept {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string Shape::str() const {
  std::string out = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims_[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.numel() != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

float Tensor::at(int n, int h, int w, int c) const {
  const auto& d = shape_.dims();
  return data_[((static_cast<std::size_t>(n) * d[1] + h) * d[2] + w) * d[3] + c];
}

float& Tensor::at(int n, int h, int w, int c) {
  const auto& d = shape_.dims();
  return data_[((static_cast<std::size_t>(n) * d[1] + h) * d[2] + w) * d[3] + c];
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out(std::move(shape), data_);
  out.requires_grad_ = requires_grad_;
  return out;
}

}  // namespace segdistill
