// SPDX-License-Identifier: Apache-2.0
#include "segdistill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "segdistill/error.hpp"
#include "segdistill/rng.hpp"

namespace segdistill {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape(/*record=*/false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("gradient check needs a scalar function, got " + out.shape().str());
  return out.value().item();
}

}  // namespace

GradCheckResult fd_gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options) {
  if (options.epsilon < 1e-4 || options.epsilon > 1e-2) {
    throw ValueError("gradient check epsilon must lie in [1e-4, 1e-2]");
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    if (out.value().size() != 1) {
      throw ShapeError("gradient check needs a scalar function, got " + out.shape().str());
    }
    if (out.requires_grad()) tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.gradient(v));
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  }
  if (coords.size() > options.samples) {
    Rng rng(mix_seed(options.seed, 0x6772616463686b));
    for (std::size_t i = 0; i < options.samples; ++i) {
      const std::size_t pick = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[pick]);
    }
    coords.resize(options.samples);
  }

  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (auto [i, j] : coords) {
    const float orig = probe[i][j];
    probe[i][j] = static_cast<float>(orig + options.epsilon);
    const double up = evaluate(f, probe);
    probe[i][j] = static_cast<float>(orig - options.epsilon);
    const double down = evaluate(f, probe);
    probe[i][j] = orig;
    // Use the step actually representable in float32.
    const double h = static_cast<double>(static_cast<float>(orig + options.epsilon)) -
                     static_cast<double>(static_cast<float>(orig - options.epsilon));
    const double numeric = (up - down) / h;
    const double exact = analytic[i][j];
    const double diff = std::abs(numeric - exact);
    const double magnitude = std::max(std::abs(numeric), std::abs(exact));
    const double err = magnitude < options.absolute_threshold ? diff : diff / magnitude;
    result.max_error = std::max(result.max_error, err);
    ++result.coordinates;
  }
  return result;
}

}  // namespace segdistill
