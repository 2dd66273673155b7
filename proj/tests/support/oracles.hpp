// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations used as test oracles. Written for
// clarity, not speed; they share no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <random>
#include <vector>

#include "segdistill/tensor.hpp"

namespace oracle {

using segdistill::Shape;
using segdistill::Tensor;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(gen);
  return t;
}

/// Values with |x| >= margin, keeping finite-difference probes off ReLU kinks.
inline Tensor random_off_kink(Shape shape, std::uint64_t seed, float margin = 0.05f) {
  Tensor t = random_tensor(shape, seed);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin - 0.01f : margin + 0.01f;
  }
  return t;
}

inline int pad_before(int in, int k, int stride, bool same) {
  if (!same) return 0;
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;
}

inline int out_extent(int in, int k, int stride, bool same) {
  return same ? (in + stride - 1) / stride : (in - k) / stride + 1;
}

/// Direct summation: out[n,y,x,o] = b[o] + sum_{i,j,c} in[n, y*s+i-p, x*s+j-p, c] * k[i,j,c,o].
inline Tensor conv2d(const Tensor& in, const Tensor& k, const Tensor* bias, int stride, bool same) {
  const int N = in.shape()[0], H = in.shape()[1], W = in.shape()[2], C = in.shape()[3];
  const int KH = k.shape()[0], KW = k.shape()[1], O = k.shape()[3];
  const int OH = out_extent(H, KH, stride, same), OW = out_extent(W, KW, stride, same);
  const int ph = pad_before(H, KH, stride, same), pw = pad_before(W, KW, stride, same);
  Tensor out(Shape{N, OH, OW, O});
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x)
        for (int o = 0; o < O; ++o) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int i = 0; i < KH; ++i)
            for (int j = 0; j < KW; ++j)
              for (int c = 0; c < C; ++c) {
                const int iy = y * stride + i - ph, ix = x * stride + j - pw;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(in.at(n, iy, ix, c)) * k[((i * KW + j) * C + c) * O + o];
              }
          out.at(n, y, x, o) = static_cast<float>(acc);
        }
  return out;
}

inline Tensor depthwise(const Tensor& in, const Tensor& k, int stride, bool same) {
  const int N = in.shape()[0], H = in.shape()[1], W = in.shape()[2], C = in.shape()[3];
  const int KH = k.shape()[0], KW = k.shape()[1];
  const int OH = out_extent(H, KH, stride, same), OW = out_extent(W, KW, stride, same);
  const int ph = pad_before(H, KH, stride, same), pw = pad_before(W, KW, stride, same);
  Tensor out(Shape{N, OH, OW, C});
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int i = 0; i < KH; ++i)
            for (int j = 0; j < KW; ++j) {
              const int iy = y * stride + i - ph, ix = x * stride + j - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += static_cast<double>(in.at(n, iy, ix, c)) * k[(i * KW + j) * C + c];
            }
          out.at(n, y, x, c) = static_cast<float>(acc);
        }
  return out;
}

/// Scatter-add: every input pixel stamps v * kernel at its strided offset,
/// overlaps summed, then the stride-multiple window is cropped.
inline Tensor transpose_conv(const Tensor& in, const Tensor& k, int stride) {
  const int N = in.shape()[0], H = in.shape()[1], W = in.shape()[2], C = in.shape()[3];
  const int KH = k.shape()[0], KW = k.shape()[1], O = k.shape()[2];
  const int ph = std::max(KH - stride, 0) / 2, pw = std::max(KW - stride, 0) / 2;
  // Full (uncropped) canvas.
  const int FH = (H - 1) * stride + KH, FW = (W - 1) * stride + KW;
  std::vector<double> canvas(static_cast<std::size_t>(N) * FH * FW * O, 0.0);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) {
          const double v = in.at(n, y, x, c);
          for (int i = 0; i < KH; ++i)
            for (int j = 0; j < KW; ++j)
              for (int o = 0; o < O; ++o) {
                canvas[((static_cast<std::size_t>(n) * FH + y * stride + i) * FW + x * stride + j) * O + o] +=
                    v * k[((i * KW + j) * O + o) * C + c];
              }
        }
  const int OH = H * stride, OW = W * stride;
  Tensor out(Shape{N, OH, OW, O});
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x)
        for (int o = 0; o < O; ++o) {
          const int cy = y + ph, cx = x + pw;
          double v = 0.0;
          if (cy < FH && cx < FW) v = canvas[((static_cast<std::size_t>(n) * FH + cy) * FW + cx) * O + o];
          out.at(n, y, x, o) = static_cast<float>(v);
        }
  return out;
}

inline Tensor matmul_bias(const Tensor& a, const Tensor& w, const Tensor& b) {
  const int N = a.shape()[0], D = a.shape()[1], O = w.shape()[1];
  Tensor out(Shape{N, O});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = b[o];
      for (int d = 0; d < D; ++d) acc += static_cast<double>(a[n * D + d]) * w[d * O + o];
      out[n * O + o] = static_cast<float>(acc);
    }
  return out;
}

inline Tensor gap(const Tensor& in) {
  const int N = in.shape()[0], H = in.shape()[1], W = in.shape()[2], C = in.shape()[3];
  Tensor out(Shape{N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) acc += in.at(n, y, x, c);
      out[n * C + c] = static_cast<float>(acc / (H * W));
    }
  return out;
}

/// Norm-wise relative difference: max|a - b| / max(max|b|, floor). Entry-wise
/// ratios are meaningless for outputs that land near zero by cancellation.
inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-3) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / scale;
}

}  // namespace oracle
