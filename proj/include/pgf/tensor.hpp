// Copyright 2026 The PGF Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// \file tensor.hpp
/// Dense (channels, height, width) tensors of doubles and the numeric kernels
/// used by the fusion, guidance and detection stages. Every kernel is a pure
/// function; kernels on the supervised path also expose an analytic backward.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pgf {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream oss;
    oss << channels << "x" << height << "x" << width;
    return oss.str();
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : shape_{channels, height, width}, data_(channels * height * width, fill) {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : Tensor(shape.channels, shape.height, shape.width, fill) {}
  Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    require(data_.size() == shape_.size(),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> channel(std::size_t c) {
    return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
}

// ---------------------------------------------------------------------------
// Parameters

/// Convolution kernel, weights laid out (out_ch, in_ch, kh, kw). An empty bias
/// means the convolution is bias-free.
struct ConvParams {
  std::size_t out_ch = 0;
  std::size_t in_ch = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  static ConvParams zeros(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                          bool with_bias = true, std::size_t stride = 1,
                          std::size_t dilation = 1, std::size_t padding = 0) {
    ConvParams p;
    p.out_ch = out_ch;
    p.in_ch = in_ch;
    p.kh = k;
    p.kw = k;
    p.weights.assign(out_ch * in_ch * k * k, 0.0);
    if (with_bias) p.bias.assign(out_ch, 0.0);
    p.stride = stride;
    p.dilation = dilation;
    p.padding = padding;
    return p;
  }

  /// Stride-1 kernel padded so the output keeps the input's spatial size.
  static ConvParams same(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                         bool with_bias = true, std::size_t dilation = 1) {
    require(k % 2 == 1, "same-size convolution needs an odd kernel, got " + std::to_string(k));
    return zeros(out_ch, in_ch, k, with_bias, 1, dilation, dilation * (k - 1) / 2);
  }

  double& w(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return weights[((o * in_ch + i) * kh + y) * kw + x];
  }
  double w(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return weights[((o * in_ch + i) * kh + y) * kw + x];
  }
  bool has_bias() const { return !bias.empty(); }

  void validate() const {
    require(out_ch > 0 && in_ch > 0 && kh > 0 && kw > 0, "conv: empty kernel");
    require(stride >= 1 && dilation >= 1, "conv: stride and dilation must be >= 1");
    require(weights.size() == out_ch * in_ch * kh * kw,
            "conv: weight count " + std::to_string(weights.size()) + " != out_ch*in_ch*kh*kw");
    require(bias.empty() || bias.size() == out_ch,
            "conv: bias length " + std::to_string(bias.size()) + " != out_ch " +
                std::to_string(out_ch));
  }
};

struct MlpParams {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;
  std::vector<double> w1;  // (hidden, in)
  std::vector<double> b1;  // (hidden)
  std::vector<double> w2;  // (out, hidden)
  std::vector<double> b2;  // (out)

  static MlpParams zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    MlpParams p;
    p.in = in;
    p.hidden = hidden;
    p.out = out;
    p.w1.assign(hidden * in, 0.0);
    p.b1.assign(hidden, 0.0);
    p.w2.assign(out * hidden, 0.0);
    p.b2.assign(out, 0.0);
    return p;
  }

  void validate() const {
    require(w1.size() == hidden * in && b1.size() == hidden && w2.size() == out * hidden &&
                b2.size() == out,
            "mlp: inconsistent shape chain " + std::to_string(in) + " -> " +
                std::to_string(hidden) + " -> " + std::to_string(out));
  }
};

// ---------------------------------------------------------------------------
// Convolution

inline std::size_t conv_output_extent(std::size_t extent, std::size_t k, std::size_t stride,
                                      std::size_t dilation, std::size_t padding) {
  const std::size_t span = dilation * (k - 1) + 1;
  require(extent + 2 * padding >= span, "conv: kernel span " + std::to_string(span) +
                                            " exceeds padded extent " +
                                            std::to_string(extent + 2 * padding));
  return (extent + 2 * padding - span) / stride + 1;
}

namespace detail {

// Range of output positions o with 0 <= o*stride - pad + offset < extent.
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t out_extent,
                                                             std::ptrdiff_t in_extent,
                                                             std::ptrdiff_t stride,
                                                             std::ptrdiff_t shift) {
  // need o*stride + shift in [0, in_extent)
  std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  std::ptrdiff_t hi_excl = in_extent - shift <= 0 ? 0 : (in_extent - shift - 1) / stride + 1;
  hi_excl = std::min(hi_excl, out_extent);
  return {lo, std::max(lo, hi_excl)};
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const ConvParams& p) {
  p.validate();
  require(x.channels() == p.in_ch, "conv2d: input has " + std::to_string(x.channels()) +
                                       " channels, kernel expects in_ch=" +
                                       std::to_string(p.in_ch));
  const std::size_t ho = conv_output_extent(x.height(), p.kh, p.stride, p.dilation, p.padding);
  const std::size_t wo = conv_output_extent(x.width(), p.kw, p.stride, p.dilation, p.padding);
  Tensor out(p.out_ch, ho, wo);
  const auto s = static_cast<std::ptrdiff_t>(p.stride);
  const auto d = static_cast<std::ptrdiff_t>(p.dilation);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const std::size_t win = x.width();
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> x_ranges(p.kw);
  for (std::size_t kx = 0; kx < p.kw; ++kx)
    x_ranges[kx] = detail::valid_range(static_cast<std::ptrdiff_t>(wo), static_cast<std::ptrdiff_t>(win), s,
                                       static_cast<std::ptrdiff_t>(kx) * d - pad);
  // Output channels are processed in blocks of 4 so every input load feeds
  // four accumulators; the block's output rows stay cache resident.
  constexpr std::size_t kBlock = 4;
  for (std::size_t o0 = 0; o0 < p.out_ch; o0 += kBlock) {
    const std::size_t nb = std::min(kBlock, p.out_ch - o0);
    for (std::size_t b = 0; b < nb; ++b) {
      auto oc = out.channel(o0 + b);
      if (p.has_bias()) std::fill(oc.begin(), oc.end(), p.bias[o0 + b]);
    }
    for (std::ptrdiff_t oy = 0; oy < static_cast<std::ptrdiff_t>(ho); ++oy) {
      double* rows[kBlock];
      for (std::size_t b = 0; b < kBlock; ++b)
        rows[b] = out.channel(o0 + std::min(b, nb - 1)).data() + oy * static_cast<std::ptrdiff_t>(wo);
      for (std::size_t i = 0; i < p.in_ch; ++i) {
        const double* ic = x.channel(i).data();
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
          const std::ptrdiff_t iy = oy * s + static_cast<std::ptrdiff_t>(ky) * d - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.height())) continue;
          const double* irow = ic + iy * static_cast<std::ptrdiff_t>(win);
          for (std::size_t kx = 0; kx < p.kw; ++kx) {
            const std::ptrdiff_t shift_x = static_cast<std::ptrdiff_t>(kx) * d - pad;
            const auto [x0, x1] = x_ranges[kx];
            if (nb == kBlock && s == 1) {
              const double w0 = p.w(o0, i, ky, kx);
              const double w1 = p.w(o0 + 1, i, ky, kx);
              const double w2 = p.w(o0 + 2, i, ky, kx);
              const double w3 = p.w(o0 + 3, i, ky, kx);
              double* __restrict r0 = rows[0];
              double* __restrict r1 = rows[1];
              double* __restrict r2 = rows[2];
              double* __restrict r3 = rows[3];
              const double* __restrict in = irow + shift_x;
              for (std::ptrdiff_t ox = x0; ox < x1; ++ox) {
                const double v = in[ox];
                r0[ox] += w0 * v;
                r1[ox] += w1 * v;
                r2[ox] += w2 * v;
                r3[ox] += w3 * v;
              }
            } else {
              for (std::size_t b = 0; b < nb; ++b) {
                const double wv = p.w(o0 + b, i, ky, kx);
                double* orow = rows[b];
                for (std::ptrdiff_t ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox * s + shift_x];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  std::vector<double> weights;
  std::vector<double> bias;
};

inline ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  p.validate();
  require(x.channels() == p.in_ch, "conv2d_backward: input channel mismatch");
  const std::size_t ho = conv_output_extent(x.height(), p.kh, p.stride, p.dilation, p.padding);
  const std::size_t wo = conv_output_extent(x.width(), p.kw, p.stride, p.dilation, p.padding);
  require(grad_out.shape() == Shape{p.out_ch, ho, wo},
          "conv2d_backward: grad_out shape " + grad_out.shape().str() + " != " +
              Shape{p.out_ch, ho, wo}.str());
  ConvGrads g{Tensor(x.shape()), std::vector<double>(p.weights.size(), 0.0),
              std::vector<double>(p.bias.size(), 0.0)};
  const auto s = static_cast<std::ptrdiff_t>(p.stride);
  const auto d = static_cast<std::ptrdiff_t>(p.dilation);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const auto win = static_cast<std::ptrdiff_t>(x.width());
  for (std::size_t o = 0; o < p.out_ch; ++o) {
    const auto go = grad_out.channel(o);
    if (p.has_bias()) {
      double acc = 0.0;
      for (double v : go) acc += v;
      g.bias[o] = acc;
    }
    for (std::size_t i = 0; i < p.in_ch; ++i) {
      const auto ic = x.channel(i);
      auto gi = g.input.channel(i);
      for (std::size_t ky = 0; ky < p.kh; ++ky) {
        const auto [y0, y1] = detail::valid_range(static_cast<std::ptrdiff_t>(ho),
                                                  static_cast<std::ptrdiff_t>(x.height()), s,
                                                  static_cast<std::ptrdiff_t>(ky) * d - pad);
        for (std::size_t kx = 0; kx < p.kw; ++kx) {
          const std::ptrdiff_t shift_x = static_cast<std::ptrdiff_t>(kx) * d - pad;
          const auto [x0, x1] =
              detail::valid_range(static_cast<std::ptrdiff_t>(wo), win, s, shift_x);
          const double wv = p.w(o, i, ky, kx);
          double gw = 0.0;
          for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
            const std::ptrdiff_t iy = oy * s + static_cast<std::ptrdiff_t>(ky) * d - pad;
            const double* grow = go.data() + oy * static_cast<std::ptrdiff_t>(wo);
            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) {
              const std::ptrdiff_t idx = iy * win + ox * s + shift_x;
              gw += grow[ox] * ic[static_cast<std::size_t>(idx)];
              gi[static_cast<std::size_t>(idx)] += wv * grow[ox];
            }
          }
          g.weights[((o * p.in_ch + i) * p.kh + ky) * p.kw + kx] = gw;
        }
      }
    }
  }
  return g;
}

/// 3x3 stride-2 transposed convolution producing exactly (2H, 2W).
/// Convention: padding 1, output padding 1, weights (out_ch, in_ch, 3, 3).
/// Input pixel (y, x) scatters w(ky, kx) to output (2y - 1 + ky, 2x - 1 + kx),
/// and taps landing outside [0, 2H) x [0, 2W) are cropped.
inline Tensor conv_transpose2d_x2(const Tensor& x, const ConvParams& p) {
  p.validate();
  require(p.stride == 2, "conv_transpose2d_x2: stride must be 2, got " + std::to_string(p.stride));
  require(p.kh == 3 && p.kw == 3, "conv_transpose2d_x2: kernel must be 3x3, got " +
                                      std::to_string(p.kh) + "x" + std::to_string(p.kw));
  require(p.dilation == 1 && p.padding == 1,
          "conv_transpose2d_x2: requires dilation 1 and padding 1");
  require(x.channels() == p.in_ch, "conv_transpose2d_x2: input has " +
                                       std::to_string(x.channels()) + " channels, kernel expects " +
                                       std::to_string(p.in_ch));
  const std::size_t ho = 2 * x.height();
  const std::size_t wo = 2 * x.width();
  Tensor out(p.out_ch, ho, wo);
  for (std::size_t o = 0; o < p.out_ch; ++o) {
    auto oc = out.channel(o);
    if (p.has_bias()) std::fill(oc.begin(), oc.end(), p.bias[o]);
    for (std::size_t i = 0; i < p.in_ch; ++i) {
      for (std::size_t y = 0; y < x.height(); ++y) {
        for (std::size_t xx = 0; xx < x.width(); ++xx) {
          const double v = x(i, y, xx);
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t oy = 2 * static_cast<std::ptrdiff_t>(y) - 1 + ky;
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(ho)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ox = 2 * static_cast<std::ptrdiff_t>(xx) - 1 + kx;
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(wo)) continue;
              oc[static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)] +=
                  p.w(o, i, ky, kx) * v;
            }
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Space/depth rearrangement.
//
// space2depth maps x(c, 2y + dy, 2x + dx) to out(4c + 2dy + dx, y, x).

inline Tensor space2depth(const Tensor& x) {
  require(x.height() % 2 == 0 && x.width() % 2 == 0,
          "space2depth: spatial dims must be even, got " + x.shape().str());
  const std::size_t h = x.height() / 2;
  const std::size_t w = x.width() / 2;
  Tensor out(4 * x.channels(), h, w);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            out(4 * c + 2 * dy + dx, y, xx) = x(c, 2 * y + dy, 2 * xx + dx);
  return out;
}

inline Tensor depth2space(const Tensor& x) {
  require(x.channels() % 4 == 0,
          "depth2space: channel count must be a multiple of 4, got " + x.shape().str());
  const std::size_t c_out = x.channels() / 4;
  Tensor out(c_out, 2 * x.height(), 2 * x.width());
  for (std::size_t c = 0; c < c_out; ++c)
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx)
        for (std::size_t y = 0; y < x.height(); ++y)
          for (std::size_t xx = 0; xx < x.width(); ++xx)
            out(c, 2 * y + dy, 2 * xx + dx) = x(4 * c + 2 * dy + dx, y, xx);
  return out;
}

// ---------------------------------------------------------------------------
// Pooling

enum class PoolMode { kMax, kAvg };

inline std::vector<double> pool_spatial(const Tensor& x, PoolMode mode) {
  require(!x.empty(), "pool_spatial: empty tensor");
  std::vector<double> out(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto ch = x.channel(c);
    if (mode == PoolMode::kMax) {
      out[c] = *std::max_element(ch.begin(), ch.end());
    } else {
      double acc = 0.0;
      for (double v : ch) acc += v;
      out[c] = acc / static_cast<double>(ch.size());
    }
  }
  return out;
}

inline Tensor pool_spatial_backward(const Tensor& x, std::span<const double> grad_out,
                                    PoolMode mode) {
  require(grad_out.size() == x.channels(), "pool_spatial_backward: grad length mismatch");
  Tensor g(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto ch = x.channel(c);
    auto gc = g.channel(c);
    if (mode == PoolMode::kMax) {
      // max_element returns the first maximum in row-major order.
      const auto it = std::max_element(ch.begin(), ch.end());
      gc[static_cast<std::size_t>(it - ch.begin())] = grad_out[c];
    } else {
      const double share = grad_out[c] / static_cast<double>(ch.size());
      std::fill(gc.begin(), gc.end(), share);
    }
  }
  return g;
}

inline Tensor pool_channel(const Tensor& x, PoolMode mode) {
  require(!x.empty(), "pool_channel: empty tensor");
  Tensor out(1, x.height(), x.width());
  auto oc = out.channel(0);
  const auto first = x.channel(0);
  std::copy(first.begin(), first.end(), oc.begin());
  for (std::size_t c = 1; c < x.channels(); ++c) {
    const auto ch = x.channel(c);
    for (std::size_t i = 0; i < oc.size(); ++i)
      oc[i] = mode == PoolMode::kMax ? std::max(oc[i], ch[i]) : oc[i] + ch[i];
  }
  if (mode == PoolMode::kAvg) {
    const double n = static_cast<double>(x.channels());
    for (double& v : oc) v /= n;
  }
  return out;
}

inline Tensor pool_channel_backward(const Tensor& x, const Tensor& grad_out, PoolMode mode) {
  require(grad_out.shape() == Shape{1, x.height(), x.width()},
          "pool_channel_backward: grad shape mismatch");
  Tensor g(x.shape());
  const std::size_t plane = x.shape().plane();
  const auto go = grad_out.channel(0);
  for (std::size_t i = 0; i < plane; ++i) {
    if (mode == PoolMode::kMax) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < x.channels(); ++c)
        if (x.channel(c)[i] > x.channel(best)[i]) best = c;
      g.channel(best)[i] = go[i];
    } else {
      const double share = go[i] / static_cast<double>(x.channels());
      for (std::size_t c = 0; c < x.channels(); ++c) g.channel(c)[i] = share;
    }
  }
  return g;
}

inline Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  require(k >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  require(k <= x.height() && k <= x.width(),
          "maxpool2d: window " + std::to_string(k) + " larger than input " + x.shape().str());
  const std::size_t ho = (x.height() - k) / stride + 1;
  const std::size_t wo = (x.width() - k) / stride + 1;
  Tensor out(x.channels(), ho, wo);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            best = std::max(best, x(c, oy * stride + dy, ox * stride + dx));
        out(c, oy, ox) = best;
      }
  return out;
}

/// Gradient goes to the first maximal element of each window in row-major order.
inline Tensor maxpool2d_backward(const Tensor& x, std::size_t k, std::size_t stride,
                                 const Tensor& grad_out) {
  const std::size_t ho = (x.height() - k) / stride + 1;
  const std::size_t wo = (x.width() - k) / stride + 1;
  require(grad_out.shape() == Shape{x.channels(), ho, wo}, "maxpool2d_backward: grad mismatch");
  Tensor g(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t by = oy * stride, bx = ox * stride;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            if (x(c, oy * stride + dy, ox * stride + dx) > x(c, by, bx)) {
              by = oy * stride + dy;
              bx = ox * stride + dx;
            }
        g(c, by, bx) += grad_out(c, oy, ox);
      }
  return g;
}

// ---------------------------------------------------------------------------
// MLP

inline std::vector<double> mlp(std::span<const double> v, const MlpParams& p) {
  p.validate();
  require(v.size() == p.in, "mlp: input length " + std::to_string(v.size()) +
                                " != in " + std::to_string(p.in));
  std::vector<double> hidden(p.hidden);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double acc = p.b1[h];
    for (std::size_t i = 0; i < p.in; ++i) acc += p.w1[h * p.in + i] * v[i];
    hidden[h] = std::max(acc, 0.0);
  }
  std::vector<double> out(p.out);
  for (std::size_t o = 0; o < p.out; ++o) {
    double acc = p.b2[o];
    for (std::size_t h = 0; h < p.hidden; ++h) acc += p.w2[o * p.hidden + h] * hidden[h];
    out[o] = acc;
  }
  return out;
}

struct MlpGrads {
  std::vector<double> input;
  MlpParams params;
};

inline MlpGrads mlp_backward(std::span<const double> v, const MlpParams& p,
                             std::span<const double> grad_out) {
  p.validate();
  require(v.size() == p.in && grad_out.size() == p.out, "mlp_backward: shape mismatch");
  std::vector<double> pre(p.hidden);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double acc = p.b1[h];
    for (std::size_t i = 0; i < p.in; ++i) acc += p.w1[h * p.in + i] * v[i];
    pre[h] = acc;
  }
  MlpGrads g{std::vector<double>(p.in, 0.0), MlpParams::zeros(p.in, p.hidden, p.out)};
  std::vector<double> g_hidden(p.hidden, 0.0);
  for (std::size_t o = 0; o < p.out; ++o) {
    g.params.b2[o] = grad_out[o];
    for (std::size_t h = 0; h < p.hidden; ++h) {
      g.params.w2[o * p.hidden + h] = grad_out[o] * std::max(pre[h], 0.0);
      g_hidden[h] += grad_out[o] * p.w2[o * p.hidden + h];
    }
  }
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double gh = pre[h] > 0.0 ? g_hidden[h] : 0.0;
    g.params.b1[h] = gh;
    for (std::size_t i = 0; i < p.in; ++i) {
      g.params.w1[h * p.in + i] = gh * v[i];
      g.input[i] += gh * p.w1[h * p.in + i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise maps

enum class Activation { kSigmoid, kTanh, kRelu };

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double apply_activation(double v, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid: return sigmoid(v);
    case Activation::kTanh: return std::tanh(v);
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
  }
  return v;
}

inline Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape());
  auto o = out.data();
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = apply_activation(in[i], kind);
  return out;
}

inline Tensor activation_backward(const Tensor& x, const Tensor& grad_out, Activation kind) {
  require_same_shape(x, grad_out, "activation_backward");
  Tensor g(x.shape());
  auto gd = g.data();
  const auto in = x.data();
  const auto go = grad_out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    double d = 0.0;
    switch (kind) {
      case Activation::kSigmoid: {
        const double s = sigmoid(in[i]);
        d = s * (1.0 - s);
        break;
      }
      case Activation::kTanh: {
        const double t = std::tanh(in[i]);
        d = 1.0 - t * t;
        break;
      }
      case Activation::kRelu: d = in[i] > 0.0 ? 1.0 : 0.0; break;
    }
    gd[i] = go[i] * d;
  }
  return g;
}

inline Tensor log1p_map(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    require(in[i] >= 0.0, "log1p_map: negative input " + std::to_string(in[i]));
    o[i] = std::log1p(in[i]);
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  return out;
}

/// Gradients of mul with respect to (a, b).
inline std::pair<Tensor, Tensor> mul_backward(const Tensor& a, const Tensor& b,
                                              const Tensor& grad_out) {
  return {mul(grad_out, b), mul(grad_out, a)};
}

inline Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * factor;
  return out;
}

/// out(c, y, x) = x(c, y, x) * factors[c]
inline Tensor mul_channelwise(const Tensor& x, std::span<const double> factors) {
  require(factors.size() == x.channels(), "mul_channelwise: factor count mismatch");
  Tensor out(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto in = x.channel(c);
    auto o = out.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * factors[c];
  }
  return out;
}

/// out(c, y, x) = x(c, y, x) * map(0, y, x)
inline Tensor mul_spatial(const Tensor& x, const Tensor& map) {
  require(map.shape() == Shape{1, x.height(), x.width()},
          "mul_spatial: map " + map.shape().str() + " does not broadcast over " +
              x.shape().str());
  Tensor out(x.shape());
  const auto m = map.channel(0);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto in = x.channel(c);
    auto o = out.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * m[i];
  }
  return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.height() == b.height() && a.width() == b.width(),
          "concat_channels: spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require(begin + count <= x.channels(), "slice_channels: range out of bounds");
  Tensor out(count, x.height(), x.width());
  const auto src = x.data().subspan(begin * x.shape().plane(), count * x.shape().plane());
  std::copy(src.begin(), src.end(), out.data().begin());
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace pgf
