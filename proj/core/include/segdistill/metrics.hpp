// SPDX-License-Identifier: Apache-2.0
// Identification and segmentation metrics over plain arrays.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace segdistill::train {

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const float> row);

/// Fraction of rows of `probs` ([n, classes], row-major) whose argmax equals the label.
double id_accuracy(std::span<const float> probs, int classes, std::span<const std::int32_t> labels);

struct SegMetrics {
  double pixel_accuracy = 0.0;
  /// Mean over classes whose prediction/truth union is non-empty.
  double mean_iou = 0.0;
  /// Per-class IoU; empty when the class is absent from both maps.
  std::vector<std::optional<double>> class_iou;
};

/// Accumulates confusion counts over any number of label maps.
class SegAccumulator {
 public:
  explicit SegAccumulator(int classes);

  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  SegMetrics result() const;
  std::size_t pixels() const noexcept { return pixels_; }

 private:
  int classes_;
  std::size_t pixels_ = 0;
  std::size_t correct_ = 0;
  std::vector<std::size_t> intersection_;
  std::vector<std::size_t> predicted_;
  std::vector<std::size_t> truth_;
};

SegMetrics seg_metrics(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth, int classes);

}  // namespace segdistill::train
