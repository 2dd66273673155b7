// SPDX-License-Identifier: Apache-2.0
#include "segdistill/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "linalg.hpp"
#include "segdistill/error.hpp"

namespace segdistill {

using detail::CMapRM;
using detail::MapRM;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

Var activation(Var input, Activation kind) {
  const auto x = input.value().data();
  Tensor out(input.shape());
  auto y = out.data();
  switch (kind) {
    case Activation::kLinear:
      std::copy(x.begin(), x.end(), y.begin());
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case Activation::kRelu6:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::min(std::max(x[i], 0.0f), 6.0f);
      break;
  }
  const int xid = input.id();
  return input.tape().push(std::move(out), {xid}, [xid, kind](Tape& tape, int self) {
    const auto g = tape.grad(self);
    const auto x = tape.value(xid).data();
    auto dx = tape.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      bool pass = true;
      if (kind == Activation::kRelu) pass = x[i] > 0.0f;
      if (kind == Activation::kRelu6) pass = x[i] > 0.0f && x[i] < 6.0f;
      if (pass) dx[i] += g[i];
    }
  });
}

Var batch_norm(Var input, Var scale, Var shift, BatchNormStats stats, Mode mode) {
  const Shape& xs = input.shape();
  if (xs.rank() < 2) throw ShapeError("batch_norm: input must have rank >= 2, got " + xs.str());
  const int c = xs.back();
  const Shape cs{c};
  if (scale.shape() != cs || shift.shape() != cs || stats.mean.shape() != cs ||
      stats.variance.shape() != cs) {
    throw ShapeError("batch_norm: channel parameters must be " + cs.str() + " for input " + xs.str());
  }
  if (!(stats.epsilon > 0.0f)) throw ValueError("batch_norm: epsilon must be positive");

  const std::size_t rows = xs.numel() / static_cast<std::size_t>(c);
  const auto x = input.value().data();
  std::vector<float> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    std::vector<double> s(c, 0.0), ss(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = x.data() + r * c;
      for (int j = 0; j < c; ++j) s[j] += row[j];
    }
    for (int j = 0; j < c; ++j) s[j] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = x.data() + r * c;
      for (int j = 0; j < c; ++j) {
        const double d = row[j] - s[j];
        ss[j] += d * d;
      }
    }
    auto rm = stats.mean.data();
    auto rv = stats.variance.data();
    for (int j = 0; j < c; ++j) {
      const double var = ss[j] / static_cast<double>(rows);
      mean[j] = static_cast<float>(s[j]);
      inv_std[j] = static_cast<float>(1.0 / std::sqrt(var + stats.epsilon));
      rm[j] = stats.momentum * rm[j] + (1.0f - stats.momentum) * mean[j];
      rv[j] = stats.momentum * rv[j] + (1.0f - stats.momentum) * static_cast<float>(var);
    }
  } else {
    const auto rm = stats.mean.data();
    const auto rv = stats.variance.data();
    for (int j = 0; j < c; ++j) {
      mean[j] = rm[j];
      inv_std[j] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[j]) + stats.epsilon));
    }
  }

  Tensor out(xs);
  auto y = out.data();
  const auto gamma = scale.value().data();
  const auto beta = shift.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * c;
    float* yr = y.data() + r * c;
    for (int j = 0; j < c; ++j) yr[j] = (xr[j] - mean[j]) * inv_std[j] * gamma[j] + beta[j];
  }

  const int xid = input.id(), sid = scale.id(), bid = shift.id();
  const bool train = mode == Mode::kTrain;
  return input.tape().push(
      std::move(out), {xid, sid, bid},
      [xid, sid, bid, c, rows, train, mean = std::move(mean), inv_std = std::move(inv_std)](Tape& tape,
                                                                                            int self) {
        const auto g = tape.grad(self);
        const auto x = tape.value(xid).data();
        const auto gamma = tape.value(sid).data();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * c;
          const float* xr = x.data() + r * c;
          for (int j = 0; j < c; ++j) {
            const double xhat = (xr[j] - mean[j]) * inv_std[j];
            sum_g[j] += gr[j];
            sum_gx[j] += gr[j] * xhat;
          }
        }
        if (tape.requires_grad(sid)) {
          auto ds = tape.grad(sid);
          for (int j = 0; j < c; ++j) ds[j] += static_cast<float>(sum_gx[j]);
        }
        if (tape.requires_grad(bid)) {
          auto db = tape.grad(bid);
          for (int j = 0; j < c; ++j) db[j] += static_cast<float>(sum_g[j]);
        }
        if (!tape.requires_grad(xid)) return;
        auto dx = tape.grad(xid);
        const double m = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * c;
          const float* xr = x.data() + r * c;
          float* dr = dx.data() + r * c;
          for (int j = 0; j < c; ++j) {
            if (train) {
              const double xhat = (xr[j] - mean[j]) * inv_std[j];
              const double v = gamma[j] * inv_std[j] * (gr[j] - sum_g[j] / m - xhat * sum_gx[j] / m);
              dr[j] += static_cast<float>(v);
            } else {
              dr[j] += gr[j] * gamma[j] * inv_std[j];
            }
          }
        }
      });
}

Var dense(Var input, Var weights, Var bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  if (xs.rank() != 2 || ws.rank() != 2 || xs[1] != ws[0]) {
    throw ShapeError("dense: input " + xs.str() + " incompatible with weights " + ws.str());
  }
  if (bias.shape() != Shape{ws[1]}) {
    throw ShapeError("dense: bias " + bias.shape().str() + " incompatible with weights " + ws.str());
  }
  const int n = xs[0], din = ws[0], dout = ws[1];
  Tensor out(Shape{n, dout});
  MapRM o(out.data().data(), n, dout);
  o.noalias() = CMapRM(input.value().data().data(), n, din) * CMapRM(weights.value().data().data(), din, dout);
  const auto b = bias.value().data();
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < dout; ++j) o(r, j) += b[j];
  }
  const int xid = input.id(), wid = weights.id(), bid = bias.id();
  return input.tape().push(std::move(out), {xid, wid, bid}, [=](Tape& tape, int self) {
    CMapRM g(tape.grad(self).data(), n, dout);
    if (tape.requires_grad(wid)) {
      MapRM(tape.grad(wid).data(), din, dout).noalias() +=
          CMapRM(tape.value(xid).data().data(), n, din).transpose() * g;
    }
    if (tape.requires_grad(bid)) {
      auto db = tape.grad(bid);
      for (int r = 0; r < n; ++r) {
        for (int j = 0; j < dout; ++j) db[j] += g(r, j);
      }
    }
    if (tape.requires_grad(xid)) {
      MapRM(tape.grad(xid).data(), n, din).noalias() +=
          g * CMapRM(tape.value(wid).data().data(), din, dout).transpose();
    }
  });
}

Var global_avg_pool(Var input) {
  const Shape& xs = input.shape();
  if (xs.rank() != 4) throw ShapeError("global_avg_pool: input must be [N,H,W,C], got " + xs.str());
  if (xs[1] < 1 || xs[2] < 1) throw ShapeError("global_avg_pool: empty spatial extent " + xs.str());
  const int n = xs[0], c = xs[3];
  const std::size_t hw = static_cast<std::size_t>(xs[1]) * xs[2];
  const auto x = input.value().data();
  Tensor out(Shape{n, c});
  for (int b = 0; b < n; ++b) {
    std::vector<double> acc(c, 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
      const float* row = x.data() + (b * hw + p) * c;
      for (int j = 0; j < c; ++j) acc[j] += row[j];
    }
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(b) * c + j] = static_cast<float>(acc[j] / hw);
  }
  const int xid = input.id();
  return input.tape().push(std::move(out), {xid}, [=](Tape& tape, int self) {
    const auto g = tape.grad(self);
    auto dx = tape.grad(xid);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int b = 0; b < n; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        float* row = dx.data() + (b * hw + p) * c;
        for (int j = 0; j < c; ++j) row[j] += g[static_cast<std::size_t>(b) * c + j] * inv;
      }
    }
  });
}

Var concat_channels(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.rank() != 4 || bs.rank() != 4 || as[0] != bs[0] || as[1] != bs[1] || as[2] != bs[2]) {
    throw ShapeError("concat_channels: spatial mismatch " + as.str() + " vs " + bs.str());
  }
  const int ca = as[3], cb = bs[3], cc = ca + cb;
  const std::size_t rows = static_cast<std::size_t>(as[0]) * as[1] * as[2];
  Tensor out(Shape{as[0], as[1], as[2], cc});
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, o.data() + r * cc);
    std::copy_n(bv.data() + r * cb, cb, o.data() + r * cc + ca);
  }
  const int aid = a.id(), bid = b.id();
  return a.tape().push(std::move(out), {aid, bid}, [=](Tape& tape, int self) {
    const auto g = tape.grad(self);
    if (tape.requires_grad(aid)) {
      auto da = tape.grad(aid);
      for (std::size_t r = 0; r < rows; ++r) {
        for (int j = 0; j < ca; ++j) da[r * ca + j] += g[r * cc + j];
      }
    }
    if (tape.requires_grad(bid)) {
      auto db = tape.grad(bid);
      for (std::size_t r = 0; r < rows; ++r) {
        for (int j = 0; j < cb; ++j) db[r * cb + j] += g[r * cc + ca + j];
      }
    }
  });
}

Var residual_add(Var a, Var b) { return weighted_sum(a, 1.0f, b, 1.0f); }

Var weighted_sum(Var a, float wa, Var b, float wb) {
  require_same_shape(a, b, "weighted_sum");
  const auto av = a.value().data();
  const auto bv = b.value().data();
  Tensor out(a.shape());
  auto o = out.data();
  if (wa == 1.0f && wb == 1.0f) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = wa * av[i] + wb * bv[i];
  }
  const int aid = a.id(), bid = b.id();
  return a.tape().push(std::move(out), {aid, bid}, [=](Tape& tape, int self) {
    const auto g = tape.grad(self);
    if (tape.requires_grad(aid)) {
      auto da = tape.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += wa * g[i];
    }
    if (tape.requires_grad(bid)) {
      auto db = tape.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += wb * g[i];
    }
  });
}

Var sum(Var input) {
  double acc = 0.0;
  for (float v : input.value().data()) acc += v;
  const int xid = input.id();
  return input.tape().push(Tensor::scalar(static_cast<float>(acc)), {xid}, [xid](Tape& tape, int self) {
    const float g = tape.grad(self)[0];
    for (float& d : tape.grad(xid)) d += g;
  });
}

Var scale(Var input, float factor) {
  const auto x = input.value().data();
  Tensor out(input.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x[i];
  const int xid = input.id();
  return input.tape().push(std::move(out), {xid}, [xid, factor](Tape& tape, int self) {
    const auto g = tape.grad(self);
    auto dx = tape.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var multiply(Var a, Var b) {
  require_same_shape(a, b, "multiply");
  const auto av = a.value().data();
  const auto bv = b.value().data();
  Tensor out(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  const int aid = a.id(), bid = b.id();
  return a.tape().push(std::move(out), {aid, bid}, [aid, bid](Tape& tape, int self) {
    const auto g = tape.grad(self);
    const auto av = tape.value(aid).data();
    const auto bv = tape.value(bid).data();
    // Read both operands before writing, since a and b may be the same node.
    if (tape.requires_grad(aid)) {
      auto da = tape.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(bid)) {
      auto db = tape.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

PredictionDistribution PredictionDistribution::validate(Var probs, float tolerance) {
  const Shape& s = probs.shape();
  if (s.rank() < 1 || s.back() < 1) throw ShapeError("distribution must have a class axis, got " + s.str());
  const int m = s.back();
  const auto p = probs.value().data();
  for (std::size_t r = 0; r < p.size() / m; ++r) {
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      const float v = p[r * m + j];
      if (!(v >= 0.0f)) throw ValueError("distribution row " + std::to_string(r) + " has a negative entry");
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) {
      throw ValueError("distribution row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
  return PredictionDistribution(probs);
}

PredictionDistribution softmax(Var logits) {
  const Shape& s = logits.shape();
  if (s.rank() < 1 || s.back() < 2) throw ShapeError("softmax: need at least 2 classes, got " + s.str());
  const int m = s.back();
  const auto z = logits.value().data();
  const std::size_t rows = z.size() / m;
  Tensor out(s);
  auto p = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* zr = z.data() + r * m;
    float* pr = p.data() + r * m;
    const float mx = *std::max_element(zr, zr + m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      total += pr[j];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (int j = 0; j < m; ++j) pr[j] *= inv;
  }
  const int zid = logits.id();
  Var probs = logits.tape().push(std::move(out), {zid}, [zid, m, rows](Tape& tape, int self) {
    const auto g = tape.grad(self);
    const auto p = tape.value(self).data();
    auto dz = tape.grad(zid);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* gr = g.data() + r * m;
      const float* pr = p.data() + r * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += static_cast<double>(gr[j]) * pr[j];
      for (int j = 0; j < m; ++j) dz[r * m + j] += pr[j] * static_cast<float>(gr[j] - dot);
    }
  });
  return PredictionDistribution(probs);
}

OneHotTarget::OneHotTarget(Tensor labels) : labels_(std::move(labels)) {
  const Shape& s = labels_.shape();
  if (s.rank() < 1 || s.back() < 1) throw ShapeError("one-hot target needs a class axis, got " + s.str());
  const int m = s.back();
  const auto v = labels_.data();
  indices_.resize(v.size() / m);
  for (std::size_t r = 0; r < indices_.size(); ++r) {
    int hot = -1;
    for (int j = 0; j < m; ++j) {
      const float x = v[r * m + j];
      if (x == 1.0f && hot < 0) {
        hot = j;
      } else if (x != 0.0f) {
        hot = -2;
        break;
      }
    }
    if (hot < 0) throw ValueError("target row " + std::to_string(r) + " is not one-hot");
    indices_[r] = hot;
  }
}

OneHotTarget OneHotTarget::from_indices(const std::vector<int>& leading_shape,
                                        std::span<const std::int32_t> indices, int classes) {
  std::vector<int> dims = leading_shape;
  dims.push_back(classes);
  Shape shape(dims);
  if (shape.numel() != indices.size() * static_cast<std::size_t>(classes)) {
    throw ShapeError("one-hot target: " + std::to_string(indices.size()) + " labels for shape " + shape.str());
  }
  OneHotTarget t;
  t.labels_ = Tensor(shape, 0.0f);
  t.indices_.assign(indices.begin(), indices.end());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= classes) {
      throw ValueError("label " + std::to_string(indices[r]) + " outside [0, " + std::to_string(classes) + ")");
    }
    t.labels_[r * classes + indices[r]] = 1.0f;
  }
  return t;
}

Var categorical_cross_entropy(const PredictionDistribution& probs, const OneHotTarget& target, float floor) {
  if (probs.shape() != target.shape()) {
    throw ShapeError("categorical_cross_entropy: prediction " + probs.shape().str() + " vs target " +
                     target.shape().str());
  }
  Var pv = probs.probs();
  const int m = probs.shape().back();
  const auto p = pv.value().data();
  const auto& idx = target.indices();
  const std::size_t rows = idx.size();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    acc -= std::log(static_cast<double>(std::max(p[r * m + idx[r]], floor)));
  }
  const double loss = acc / static_cast<double>(rows);
  const int pid = pv.id();
  return pv.tape().push(Tensor::scalar(static_cast<float>(loss)), {pid},
                        [pid, m, rows, floor, idx](Tape& tape, int self) {
                          const double g = tape.grad(self)[0] / static_cast<double>(rows);
                          const auto p = tape.value(pid).data();
                          auto dp = tape.grad(pid);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t k = r * m + idx[r];
                            if (p[k] > floor) dp[k] += static_cast<float>(-g / p[k]);
                          }
                        });
}

}  // namespace segdistill
