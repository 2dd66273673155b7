// SPDX-License-Identifier: Apache-2.0
#include "segdistill/metrics.hpp"

#include <string>

#include "segdistill/error.hpp"

namespace segdistill::train {

int argmax(std::span<const float> row) {
  if (row.empty()) throw ValueError("argmax of an empty row");
  int best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = static_cast<int>(i);
  }
  return best;
}

double id_accuracy(std::span<const float> probs, int classes, std::span<const std::int32_t> labels) {
  if (classes < 1 || probs.size() != labels.size() * static_cast<std::size_t>(classes)) {
    throw ShapeError("id_accuracy: " + std::to_string(probs.size()) + " probabilities for " +
                     std::to_string(labels.size()) + " labels of " + std::to_string(classes) + " classes");
  }
  if (labels.empty()) throw ValueError("id_accuracy over an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(probs.subspan(i * classes, classes)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

SegAccumulator::SegAccumulator(int classes)
    : classes_(classes), intersection_(classes, 0), predicted_(classes, 0), truth_(classes, 0) {
  if (classes < 1) throw ValueError("segmentation metrics need at least one class");
}

void SegAccumulator::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("predicted and true label maps differ in size");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p >= classes_ || t >= classes_) throw ValueError("label map entry outside class range");
    ++predicted_[p];
    ++truth_[t];
    if (p == t) {
      ++intersection_[p];
      ++correct_;
    }
  }
  pixels_ += truth.size();
}

SegMetrics SegAccumulator::result() const {
  if (pixels_ == 0) throw ValueError("segmentation metrics over zero pixels");
  SegMetrics m;
  m.pixel_accuracy = static_cast<double>(correct_) / static_cast<double>(pixels_);
  m.class_iou.resize(classes_);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < classes_; ++c) {
    const std::size_t uni = predicted_[c] + truth_[c] - intersection_[c];
    if (uni == 0) continue;
    const double iou = static_cast<double>(intersection_[c]) / static_cast<double>(uni);
    m.class_iou[c] = iou;
    sum += iou;
    ++counted;
  }
  m.mean_iou = counted > 0 ? sum / counted : 0.0;
  return m;
}

SegMetrics seg_metrics(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth, int classes) {
  SegAccumulator acc(classes);
  acc.add(predicted, truth);
  return acc.result();
}

}  // namespace segdistill::train
