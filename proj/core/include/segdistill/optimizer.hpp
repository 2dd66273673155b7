// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace segdistill {

struct AdamHyperparameters {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// One trainable parameter as seen by the optimizer.
struct ParamSlot {
  std::string name;
  std::span<float> value;
  std::span<const float> grad;
};

/// Adaptive-moment optimizer with bias correction. Moments are keyed by slot
/// position, so callers must pass the same parameter list on every step.
class Adam {
 public:
  explicit Adam(AdamHyperparameters hyper = {}) : hyper_(hyper) {}

  /// Applies one update to every slot. Rejects (without touching any value)
  /// if a gradient holds a non-finite entry or a shape changed.
  void step(std::span<const ParamSlot> slots);

  std::int64_t step_count() const noexcept { return steps_; }
  const AdamHyperparameters& hyperparameters() const noexcept { return hyper_; }
  const std::vector<std::vector<float>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<float>>& second_moments() const noexcept { return v_; }

 private:
  AdamHyperparameters hyper_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace segdistill
