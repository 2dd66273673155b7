// SPDX-License-Identifier: Apache-2.0
// Convolution family: standard, depthwise and transposed, all channel-last.
#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <string>

#include "linalg.hpp"
#include "segdistill/error.hpp"
#include "segdistill/ops.hpp"

namespace segdistill {

using detail::CMapRM;
using detail::MapRM;

int conv_output_extent(int input, int kernel, int stride, Padding padding) {
  if (stride < 1) throw ValueError("stride must be >= 1, got " + std::to_string(stride));
  if (padding == Padding::kSame) return (input + stride - 1) / stride;
  return (input - kernel) / stride + 1;
}

int same_pad_before(int input, int kernel, int stride) {
  const int out = (input + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + kernel - input, 0);
  return total / 2;
}

namespace {

struct WindowGeometry {
  int n, h, w, cin;
  int kh, kw, cout;
  int stride;
  int oh, ow;
  int pad_top, pad_left;

  std::size_t rows() const { return static_cast<std::size_t>(n) * oh * ow; }
  std::size_t patch() const { return static_cast<std::size_t>(kh) * kw * cin; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + s.str());
  }
}

WindowGeometry window_geometry(const Shape& in, int kh, int kw, int cout, int stride, Padding padding,
                               const char* op) {
  if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1, got " + std::to_string(stride));
  WindowGeometry g{in[0], in[1], in[2], in[3], kh, kw, cout, stride, 0, 0, 0, 0};
  const int padded_h = padding == Padding::kSame ? std::max(in[1], kh) : in[1];
  const int padded_w = padding == Padding::kSame ? std::max(in[2], kw) : in[2];
  if (kh > padded_h || kw > padded_w) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " exceeds input " + in.str());
  }
  g.oh = conv_output_extent(g.h, kh, stride, padding);
  g.ow = conv_output_extent(g.w, kw, stride, padding);
  if (padding == Padding::kSame) {
    g.pad_top = same_pad_before(g.h, kh, stride);
    g.pad_left = same_pad_before(g.w, kw, stride);
  }
  return g;
}

std::vector<float> im2col(std::span<const float> x, const WindowGeometry& g) {
  std::vector<float> col(g.rows() * g.patch(), 0.0f);
  float* dst = col.data();
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow) {
        for (int ki = 0; ki < g.kh; ++ki) {
          const int ih = oh * g.stride + ki - g.pad_top;
          for (int kj = 0; kj < g.kw; ++kj, dst += g.cin) {
            const int iw = ow * g.stride + kj - g.pad_left;
            if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
            const float* src = x.data() + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(std::span<const float> col, const WindowGeometry& g, std::span<float> dx) {
  const float* src = col.data();
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow) {
        for (int ki = 0; ki < g.kh; ++ki) {
          const int ih = oh * g.stride + ki - g.pad_top;
          for (int kj = 0; kj < g.kw; ++kj, src += g.cin) {
            const int iw = ow * g.stride + kj - g.pad_left;
            if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
            float* dst = dx.data() + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * g.cin;
            for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

void add_bias_rows(std::span<float> out, std::span<const float> bias) {
  const std::size_t c = bias.size();
  for (std::size_t r = 0; r < out.size() / c; ++r) {
    float* row = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) row[j] += bias[j];
  }
}

void accumulate_bias_grad(std::span<const float> gout, std::span<float> gbias) {
  const std::size_t c = gbias.size();
  for (std::size_t r = 0; r < gout.size() / c; ++r) {
    const float* row = gout.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) gbias[j] += row[j];
  }
}

void check_bias(Var bias, int channels, const char* op) {
  if (!bias.valid()) return;
  if (bias.shape() != Shape{channels}) {
    throw ShapeError(std::string(op) + ": bias shape " + bias.shape().str() + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, int stride, Padding padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "conv2d", "input");
  require_rank(ks, 4, "conv2d", "kernel");
  if (ks[2] != xs[3]) {
    throw ShapeError("conv2d: input channels of " + xs.str() + " do not match kernel " + ks.str());
  }
  check_bias(bias, ks[3], "conv2d");
  const WindowGeometry g = window_geometry(xs, ks[0], ks[1], ks[3], stride, padding, "conv2d");

  std::shared_ptr<std::vector<float>> col;
  if (!g.pointwise()) col = std::make_shared<std::vector<float>>(im2col(input.value().data(), g));
  const float* colp = col ? col->data() : input.value().data().data();

  Tensor out(Shape{g.n, g.oh, g.ow, g.cout});
  const auto m = static_cast<Eigen::Index>(g.rows());
  const auto k = static_cast<Eigen::Index>(g.patch());
  MapRM(out.data().data(), m, g.cout).noalias() =
      CMapRM(colp, m, k) * CMapRM(kernel.value().data().data(), k, g.cout);
  if (bias.valid()) add_bias_rows(out.data(), bias.value().data());

  std::vector<int> inputs{input.id(), kernel.id()};
  if (bias.valid()) inputs.push_back(bias.id());
  const int xid = input.id(), kid = kernel.id(), bid = bias.valid() ? bias.id() : -1;
  return input.tape().push(std::move(out), std::move(inputs), [g, col, xid, kid, bid](Tape& tape, int self) {
    const auto m = static_cast<Eigen::Index>(g.rows());
    const auto k = static_cast<Eigen::Index>(g.patch());
    auto gout_span = tape.grad(self);
    CMapRM gout(gout_span.data(), m, g.cout);
    const float* colp = col ? col->data() : tape.value(xid).data().data();
    if (tape.requires_grad(kid)) {
      MapRM(tape.grad(kid).data(), k, g.cout).noalias() += CMapRM(colp, m, k).transpose() * gout;
    }
    if (bid >= 0 && tape.requires_grad(bid)) accumulate_bias_grad(gout_span, tape.grad(bid));
    if (tape.requires_grad(xid)) {
      CMapRM w(tape.value(kid).data().data(), k, g.cout);
      if (g.pointwise()) {
        MapRM(tape.grad(xid).data(), m, k).noalias() += gout * w.transpose();
      } else {
        std::vector<float> dcol(g.rows() * g.patch());
        MapRM(dcol.data(), m, k).noalias() = gout * w.transpose();
        col2im_add(dcol, g, tape.grad(xid));
      }
    }
  });
}

Var conv2d(Var input, Var kernel, int stride, Padding padding) {
  return conv2d(input, kernel, Var{}, stride, padding);
}

Var depthwise_conv2d(Var input, Var kernel, int stride, Padding padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "depthwise_conv2d", "input");
  require_rank(ks, 3, "depthwise_conv2d", "kernel");
  if (ks[2] != xs[3]) {
    throw ShapeError("depthwise_conv2d: input channels of " + xs.str() + " do not match kernel " +
                     ks.str());
  }
  const WindowGeometry g = window_geometry(xs, ks[0], ks[1], ks[2], stride, padding, "depthwise_conv2d");
  const int c = g.cin;

  Tensor out(Shape{g.n, g.oh, g.ow, c});
  const float* x = input.value().data().data();
  const float* kw = kernel.value().data().data();
  float* o = out.data().data();
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow, o += c) {
        for (int ki = 0; ki < g.kh; ++ki) {
          const int ih = oh * g.stride + ki - g.pad_top;
          if (ih < 0 || ih >= g.h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            const int iw = ow * g.stride + kj - g.pad_left;
            if (iw < 0 || iw >= g.w) continue;
            const float* xi = x + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * c;
            const float* kk = kw + (static_cast<std::size_t>(ki) * g.kw + kj) * c;
            for (int ch = 0; ch < c; ++ch) o[ch] += xi[ch] * kk[ch];
          }
        }
      }
    }
  }

  const int xid = input.id(), kid = kernel.id();
  return input.tape().push(std::move(out), {xid, kid}, [g, xid, kid](Tape& tape, int self) {
    const int c = g.cin;
    const float* go = tape.grad(self).data();
    const float* x = tape.value(xid).data().data();
    const float* kw = tape.value(kid).data().data();
    float* dx = tape.requires_grad(xid) ? tape.grad(xid).data() : nullptr;
    float* dk = tape.requires_grad(kid) ? tape.grad(kid).data() : nullptr;
    for (int n = 0; n < g.n; ++n) {
      for (int oh = 0; oh < g.oh; ++oh) {
        for (int ow = 0; ow < g.ow; ++ow, go += c) {
          for (int ki = 0; ki < g.kh; ++ki) {
            const int ih = oh * g.stride + ki - g.pad_top;
            if (ih < 0 || ih >= g.h) continue;
            for (int kj = 0; kj < g.kw; ++kj) {
              const int iw = ow * g.stride + kj - g.pad_left;
              if (iw < 0 || iw >= g.w) continue;
              const std::size_t xoff = ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * c;
              const std::size_t koff = (static_cast<std::size_t>(ki) * g.kw + kj) * c;
              if (dx) {
                for (int ch = 0; ch < c; ++ch) dx[xoff + ch] += go[ch] * kw[koff + ch];
              }
              if (dk) {
                for (int ch = 0; ch < c; ++ch) dk[koff + ch] += go[ch] * x[xoff + ch];
              }
            }
          }
        }
      }
    }
  });
}

namespace {

struct TransposeGeometry {
  int n, h, w, cin;
  int kh, kw, cout;
  int stride;
  int pad_top, pad_left;

  int oh() const { return h * stride; }
  int ow() const { return w * stride; }
  std::size_t rows() const { return static_cast<std::size_t>(n) * h * w; }
  std::size_t patch() const { return static_cast<std::size_t>(kh) * kw * cout; }
};

// cols row (n,i,j) holds the kh x kw x Cout contribution of input pixel (i, j).
template <typename Fn>
void for_each_scatter(const TransposeGeometry& g, Fn&& fn) {
  const int oh = g.oh(), ow = g.ow();
  std::size_t row = 0;
  for (int n = 0; n < g.n; ++n) {
    for (int i = 0; i < g.h; ++i) {
      for (int j = 0; j < g.w; ++j, ++row) {
        for (int ki = 0; ki < g.kh; ++ki) {
          const int y = i * g.stride + ki - g.pad_top;
          if (y < 0 || y >= oh) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            const int x = j * g.stride + kj - g.pad_left;
            if (x < 0 || x >= ow) continue;
            const std::size_t col_off = row * g.patch() + (static_cast<std::size_t>(ki) * g.kw + kj) * g.cout;
            const std::size_t out_off = ((static_cast<std::size_t>(n) * oh + y) * ow + x) * g.cout;
            fn(col_off, out_off);
          }
        }
      }
    }
  }
}

}  // namespace

Var transpose_conv2d(Var input, Var kernel, Var bias, int stride) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "transpose_conv2d", "input");
  require_rank(ks, 4, "transpose_conv2d", "kernel");
  if (stride < 1) throw ValueError("transpose_conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (ks[3] != xs[3]) {
    throw ShapeError("transpose_conv2d: input channels of " + xs.str() + " do not match kernel " +
                     ks.str());
  }
  check_bias(bias, ks[2], "transpose_conv2d");
  const TransposeGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[1], ks[2], stride,
                            std::max(ks[0] - stride, 0) / 2, std::max(ks[1] - stride, 0) / 2};

  const auto m = static_cast<Eigen::Index>(g.rows());
  const auto p = static_cast<Eigen::Index>(g.patch());
  std::vector<float> cols(g.rows() * g.patch());
  MapRM(cols.data(), m, p).noalias() =
      CMapRM(input.value().data().data(), m, g.cin) *
      CMapRM(kernel.value().data().data(), p, g.cin).transpose();

  Tensor out(Shape{g.n, g.oh(), g.ow(), g.cout});
  float* o = out.data().data();
  for_each_scatter(g, [&](std::size_t col_off, std::size_t out_off) {
    for (int c = 0; c < g.cout; ++c) o[out_off + c] += cols[col_off + c];
  });
  if (bias.valid()) add_bias_rows(out.data(), bias.value().data());

  std::vector<int> inputs{input.id(), kernel.id()};
  if (bias.valid()) inputs.push_back(bias.id());
  const int xid = input.id(), kid = kernel.id(), bid = bias.valid() ? bias.id() : -1;
  return input.tape().push(std::move(out), std::move(inputs), [g, xid, kid, bid](Tape& tape, int self) {
    const auto m = static_cast<Eigen::Index>(g.rows());
    const auto p = static_cast<Eigen::Index>(g.patch());
    auto gout = tape.grad(self);
    if (bid >= 0 && tape.requires_grad(bid)) accumulate_bias_grad(gout, tape.grad(bid));
    std::vector<float> dcols(g.rows() * g.patch(), 0.0f);
    for_each_scatter(g, [&](std::size_t col_off, std::size_t out_off) {
      for (int c = 0; c < g.cout; ++c) dcols[col_off + c] = gout[out_off + c];
    });
    CMapRM dc(dcols.data(), m, p);
    if (tape.requires_grad(xid)) {
      MapRM(tape.grad(xid).data(), m, g.cin).noalias() += dc * CMapRM(tape.value(kid).data().data(), p, g.cin);
    }
    if (tape.requires_grad(kid)) {
      MapRM(tape.grad(kid).data(), p, g.cin).noalias() +=
          dc.transpose() * CMapRM(tape.value(xid).data().data(), m, g.cin);
    }
  });
}

Var transpose_conv2d(Var input, Var kernel, int stride) { return transpose_conv2d(input, kernel, Var{}, stride); }

}  // namespace segdistill
