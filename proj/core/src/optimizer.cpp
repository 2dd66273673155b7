// SPDX-License-Identifier: Apache-2.0
#include "segdistill/optimizer.hpp"

#include <cmath>

#include "segdistill/error.hpp"

namespace segdistill {

void Adam::step(std::span<const ParamSlot> slots) {
  if (m_.empty()) {
    m_.reserve(slots.size());
    v_.reserve(slots.size());
    for (const auto& s : slots) {
      m_.emplace_back(s.value.size(), 0.0f);
      v_.emplace_back(s.value.size(), 0.0f);
    }
  }
  if (slots.size() != m_.size()) {
    throw ShapeError("optimizer: expected " + std::to_string(m_.size()) + " parameters, got " +
                     std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    if (s.grad.size() != s.value.size() || s.value.size() != m_[i].size()) {
      throw ShapeError("optimizer: gradient/state shape mismatch for parameter '" + s.name + "'");
    }
    for (std::size_t j = 0; j < s.grad.size(); ++j) {
      if (!std::isfinite(s.grad[j])) {
        throw ValueError("optimizer: non-finite gradient in parameter '" + s.name + "' at element " +
                         std::to_string(j));
      }
    }
  }

  ++steps_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < s.value.size(); ++j) {
      const double g = s.grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = hyper_.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + hyper_.epsilon);
      s.value[j] = static_cast<float>(s.value[j] - update);
    }
  }
}

}  // namespace segdistill
