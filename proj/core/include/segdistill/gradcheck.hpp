// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "segdistill/tape.hpp"

namespace segdistill {

struct GradCheckOptions {
  /// Central-difference step; must lie in [1e-4, 1e-2] for float32.
  double epsilon = 1e-3;
  /// Coordinates sampled across all inputs (all of them if fewer exist).
  std::size_t samples = 20;
  std::uint64_t seed = 0;
  /// Below this gradient magnitude the absolute error is reported instead.
  double absolute_threshold = 0.1;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t coordinates = 0;
};

/// Scalar function of tape values, evaluated freshly for every probe.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central finite differences on a
/// seeded subsample of coordinates and reports the worst error.
GradCheckResult fd_gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options = {});

}  // namespace segdistill
