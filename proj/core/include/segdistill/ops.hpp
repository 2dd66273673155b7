// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "segdistill/tape.hpp"

namespace segdistill {

enum class Padding { kSame, kValid };
enum class Activation { kLinear, kRelu, kRelu6 };
enum class Mode { kTrain, kInfer };

/// Probability floor applied inside cross-entropy before the log.
inline constexpr float kProbabilityFloor = 1e-7f;

/// Output spatial extent of a strided window along one axis.
int conv_output_extent(int input, int kernel, int stride, Padding padding);

/// Leading pad of TF-style "same" padding along one axis.
int same_pad_before(int input, int kernel, int stride);

/// Input [N,H,W,Cin], kernel [kh,kw,Cin,Cout], optional bias [Cout].
Var conv2d(Var input, Var kernel, Var bias, int stride, Padding padding);
Var conv2d(Var input, Var kernel, int stride, Padding padding);

/// Input [N,H,W,C], kernel [kh,kw,C]; output channel c reads input channel c only.
Var depthwise_conv2d(Var input, Var kernel, int stride, Padding padding);

/// Input [N,H,W,Cin], kernel [kh,kw,Cout,Cin], optional bias [Cout].
/// Output is exactly [N, H*stride, W*stride, Cout]; input pixel (i, j) lands
/// at (i*stride + ki - pad, j*stride + kj - pad) with pad = max(k - stride, 0) / 2.
Var transpose_conv2d(Var input, Var kernel, Var bias, int stride);
Var transpose_conv2d(Var input, Var kernel, int stride);

/// ReLU has subgradient 0 at 0; ReLU6 has subgradient 0 at 0 and at 6.
Var activation(Var input, Activation kind);

/// Running statistics of one batch-normalisation layer.
struct BatchNormStats {
  Tensor& mean;
  Tensor& variance;
  float momentum = 0.9f;
  float epsilon = 1e-5f;
};

/// Normalises over every axis but the last. Train mode uses batch statistics
/// and updates `stats` in place; infer mode reads `stats` only.
Var batch_norm(Var input, Var scale, Var shift, BatchNormStats stats, Mode mode);

/// input [N,Din] x weights [Din,Dout] + bias [Dout].
Var dense(Var input, Var weights, Var bias);

/// [N,H,W,C] -> [N,C], mean over the spatial positions.
Var global_avg_pool(Var input);

Var concat_channels(Var a, Var b);
Var residual_add(Var a, Var b);

Var sum(Var input);
Var scale(Var input, float factor);
Var multiply(Var a, Var b);
/// wa * a + wb * b for scalars a, b.
Var weighted_sum(Var a, float wa, Var b, float wb);

/// Rows along the last axis that are non-negative and sum to one.
class PredictionDistribution {
 public:
  /// Wraps externally supplied probabilities after checking the row contract.
  static PredictionDistribution validate(Var probs, float tolerance = 1e-5f);

  Var probs() const { return probs_; }
  const Shape& shape() const { return probs_.shape(); }

 private:
  friend PredictionDistribution softmax(Var logits);
  explicit PredictionDistribution(Var probs) : probs_(probs) {}

  Var probs_;
};

/// Exp-normalised along the last axis, with max subtraction.
PredictionDistribution softmax(Var logits);

/// One-hot labels shaped like the prediction they score.
class OneHotTarget {
 public:
  /// Checks that every class-axis slice holds exactly one 1 and zeros elsewhere.
  explicit OneHotTarget(Tensor labels);
  /// Builds the one-hot tensor of shape `leading` + [classes].
  static OneHotTarget from_indices(const std::vector<int>& leading_shape,
                                   std::span<const std::int32_t> indices, int classes);

  const Tensor& labels() const noexcept { return labels_; }
  const std::vector<std::int32_t>& indices() const noexcept { return indices_; }
  const Shape& shape() const noexcept { return labels_.shape(); }

 private:
  OneHotTarget() = default;

  Tensor labels_;
  std::vector<std::int32_t> indices_;
};

/// -sum_c y_c log max(p_c, floor), averaged over all rows (batch and pixels).
Var categorical_cross_entropy(const PredictionDistribution& probs, const OneHotTarget& target,
                              float floor = kProbabilityFloor);

}  // namespace segdistill
