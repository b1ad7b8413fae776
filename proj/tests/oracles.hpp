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

// Straightforward reference implementations used to check the library. They
// favor directness over speed and avoid sharing code paths with it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "pgf/fusion.hpp"
#include "pgf/metrics.hpp"
#include "pgf/projection.hpp"
#include "pgf/rng.hpp"
#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace oracle {

using pgf::Box7;
using pgf::ConvParams;
using pgf::MlpParams;
using pgf::Point;
using pgf::Tensor;

/// Direct definition of a strided, dilated, zero-padded cross-correlation.
inline Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const long span_h = static_cast<long>(p.dilation * (p.kh - 1) + 1);
  const long span_w = static_cast<long>(p.dilation * (p.kw - 1) + 1);
  const long ho = (static_cast<long>(x.height()) + 2 * static_cast<long>(p.padding) - span_h) /
                      static_cast<long>(p.stride) + 1;
  const long wo = (static_cast<long>(x.width()) + 2 * static_cast<long>(p.padding) - span_w) /
                      static_cast<long>(p.stride) + 1;
  Tensor out(p.out_ch, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo));
  for (std::size_t o = 0; o < p.out_ch; ++o)
    for (long y = 0; y < ho; ++y)
      for (long xx = 0; xx < wo; ++xx) {
        double acc = p.bias.empty() ? 0.0 : p.bias[o];
        for (std::size_t i = 0; i < p.in_ch; ++i)
          for (std::size_t ky = 0; ky < p.kh; ++ky)
            for (std::size_t kx = 0; kx < p.kw; ++kx) {
              const long iy = y * static_cast<long>(p.stride) +
                              static_cast<long>(ky * p.dilation) - static_cast<long>(p.padding);
              const long ix = xx * static_cast<long>(p.stride) +
                              static_cast<long>(kx * p.dilation) - static_cast<long>(p.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.height()) ||
                  ix >= static_cast<long>(x.width()))
                continue;
              acc += p.weights[((o * p.in_ch + i) * p.kh + ky) * p.kw + kx] *
                     x(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
        out(o, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) = acc;
      }
  return out;
}

/// x2 transposed convolution (3x3, padding 1, output padding 1) written as
/// zero insertion, asymmetric padding and a stride-1 conv with the flipped
/// kernel.
inline Tensor conv_transpose2d_x2(const Tensor& x, const ConvParams& p) {
  const std::size_t h = x.height();
  const std::size_t w = x.width();
  Tensor padded(x.channels(), 2 * h + 2, 2 * w + 2);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) padded(c, 2 * y + 1, 2 * xx + 1) = x(c, y, xx);
  ConvParams flipped = ConvParams::zeros(p.out_ch, p.in_ch, 3, !p.bias.empty());
  flipped.bias = p.bias;
  for (std::size_t o = 0; o < p.out_ch; ++o)
    for (std::size_t i = 0; i < p.in_ch; ++i)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) flipped.w(o, i, ky, kx) = p.w(o, i, 2 - ky, 2 - kx);
  return oracle::conv2d(padded, flipped);
}

inline std::vector<double> mlp(const std::vector<double>& v, const MlpParams& p) {
  std::vector<double> hidden(p.hidden, 0.0);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double acc = p.b1[h];
    for (std::size_t i = 0; i < p.in; ++i) acc += p.w1[h * p.in + i] * v[i];
    hidden[h] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> out(p.out, 0.0);
  for (std::size_t o = 0; o < p.out; ++o) {
    double acc = p.b2[o];
    for (std::size_t h = 0; h < p.hidden; ++h) acc += p.w2[o * p.hidden + h] * hidden[h];
    out[o] = acc;
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Channel attention then spatial attention, each from its textbook formula.
inline Tensor cbam(const Tensor& x, const pgf::CbamParams& p) {
  const std::size_t c = x.channels();
  const std::size_t n = x.height() * x.width();
  std::vector<double> mx(c, -std::numeric_limits<double>::infinity());
  std::vector<double> avg(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t xx = 0; xx < x.width(); ++xx) {
        mx[ch] = std::max(mx[ch], x(ch, y, xx));
        avg[ch] += x(ch, y, xx);
      }
    avg[ch] /= static_cast<double>(n);
  }
  const auto a = oracle::mlp(mx, p.channel_mlp);
  const auto b = oracle::mlp(avg, p.channel_mlp);
  Tensor refined(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t xx = 0; xx < x.width(); ++xx)
        refined(ch, y, xx) = x(ch, y, xx) * oracle::sigmoid(a[ch] + b[ch]);
  Tensor pooled(2, x.height(), x.width());
  for (std::size_t y = 0; y < x.height(); ++y)
    for (std::size_t xx = 0; xx < x.width(); ++xx) {
      double m = -std::numeric_limits<double>::infinity();
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        m = std::max(m, refined(ch, y, xx));
        s += refined(ch, y, xx);
      }
      pooled(0, y, xx) = m;
      pooled(1, y, xx) = s / static_cast<double>(c);
    }
  const Tensor logits = oracle::conv2d(pooled, p.spatial_conv);
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t xx = 0; xx < x.width(); ++xx)
        out(ch, y, xx) = refined(ch, y, xx) * oracle::sigmoid(logits(0, y, xx));
  return out;
}

inline bool in_cell(double px, double py, const pgf::BevSpec& g, std::size_t row, std::size_t col) {
  const double x0 = g.x_min + static_cast<double>(col) * g.cell;
  const double y0 = g.y_min + static_cast<double>(row) * g.cell;
  return px >= x0 && px < x0 + g.cell && py >= y0 && py < y0 + g.cell;
}

/// Scans every point for every cell.
inline Tensor pillarize(const std::vector<Point>& pts, const pgf::BevSpec& g) {
  Tensor out(4, g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) {
      std::vector<double> zs;
      std::vector<double> is;
      for (const Point& p : pts)
        if (in_cell(p.x, p.y, g, r, c)) {
          zs.push_back(p.z);
          is.push_back(p.intensity);
        }
      if (zs.empty()) continue;
      std::sort(zs.begin(), zs.end());
      std::sort(is.begin(), is.end());
      double sz = 0.0;
      double si = 0.0;
      for (double v : zs) sz += v;
      for (double v : is) si += v;
      const double n = static_cast<double>(zs.size());
      out(0, r, c) = std::log(1.0 + n);
      out(1, r, c) = sz / n;
      out(2, r, c) = zs.back();
      out(3, r, c) = si / n;
    }
  return out;
}

/// Scans every point for every cell, reading each point's feature at its own
/// pixel (scaled to the feature resolution).
inline Tensor rv_to_bev(const Tensor& feats, const pgf::RangeImage& img, const std::vector<Point>& pts,
                        const pgf::BevSpec& g, pgf::Reduce reduce) {
  const std::size_t rh = img.spec.height / feats.height();
  const std::size_t rw = img.spec.width / feats.width();
  Tensor out(feats.channels(), g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      for (std::size_t ch = 0; ch < feats.channels(); ++ch) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (!img.pixel_of_point[i] || !in_cell(pts[i].x, pts[i].y, g, r, c)) continue;
          vals.push_back(feats(ch, img.pixel_of_point[i]->row / rh, img.pixel_of_point[i]->col / rw));
        }
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        if (reduce == pgf::Reduce::kMax) {
          out(ch, r, c) = vals.back();
        } else {
          double s = 0.0;
          for (double v : vals) s += v;
          out(ch, r, c) = s / static_cast<double>(vals.size());
        }
      }
  return out;
}

/// AP for one class and threshold. Every prefix of the score ranking is
/// re-matched from scratch to get its (precision, recall) point, and precision
/// at each recall sample is found by a linear scan.
inline double average_precision(std::vector<Box7> dets, const std::vector<Box7>& gts, int cls,
                                double thr) {
  std::vector<Box7> d;
  for (const Box7& b : dets)
    if (b.class_id == cls) d.push_back(b);
  // Documented tie rule: equal scores are ordered by (cx, cy, cz, l, w, h, yaw).
  std::sort(d.begin(), d.end(), [](const Box7& a, const Box7& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cx != b.cx) return a.cx < b.cx;
    if (a.cy != b.cy) return a.cy < b.cy;
    if (a.cz != b.cz) return a.cz < b.cz;
    if (a.l != b.l) return a.l < b.l;
    if (a.w != b.w) return a.w < b.w;
    if (a.h != b.h) return a.h < b.h;
    return a.yaw < b.yaw;
  });
  std::vector<Box7> g;
  for (const Box7& b : gts)
    if (b.class_id == cls) g.push_back(b);
  if (g.empty() || d.empty()) return 0.0;
  std::vector<double> prec;
  std::vector<double> rec;
  for (std::size_t k = 1; k <= d.size(); ++k) {
    std::vector<bool> used(g.size(), false);
    int tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      int best = -1;
      double best_d = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (used[j]) continue;
        const double dist = std::sqrt((d[i].cx - g[j].cx) * (d[i].cx - g[j].cx) +
                                      (d[i].cy - g[j].cy) * (d[i].cy - g[j].cy));
        if (best < 0 || dist < best_d) {
          best = static_cast<int>(j);
          best_d = dist;
        }
      }
      if (best >= 0 && best_d < thr) {
        used[static_cast<std::size_t>(best)] = true;
        ++tp;
      }
    }
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(g.size()));
  }
  double total = 0.0;
  for (int i = 11; i <= 100; ++i) {
    const double r = 0.01 * i;
    double p = 0.0;
    if (r < rec.front()) {
      p = prec.front();
    } else if (r > rec.back()) {
      p = 0.0;
    } else {
      std::size_t j = 0;
      for (std::size_t q = 0; q < rec.size(); ++q)
        if (rec[q] <= r) j = q;
      if (rec[j] == r || j + 1 == rec.size()) p = prec[j];
      else p = prec[j] + (prec[j + 1] - prec[j]) * (r - rec[j]) / (rec[j + 1] - rec[j]);
    }
    total += std::max(0.0, p - 0.1);
  }
  return total / 90.0 / 0.9;
}

/// Random small scene for AP checks: up to 6 GT and 8 detections, 2 classes,
/// detections near GT or random, scores drawn from a small set so ties occur.
struct SmallCase {
  std::vector<Box7> gts;
  std::vector<Box7> dets;
};

inline SmallCase small_case(std::uint64_t seed) {
  pgf::Rng rng(pgf::mix_seed(seed, "ap-case"));
  std::uniform_int_distribution<int> n_gt(0, 6);
  std::uniform_int_distribution<int> n_det(0, 8);
  std::uniform_int_distribution<int> cls(1, 2);
  std::uniform_int_distribution<int> score_level(1, 5);
  SmallCase s;
  const int ng = n_gt(rng);
  for (int i = 0; i < ng; ++i) {
    Box7 b;
    b.cx = pgf::uniform(rng, -10, 10);
    b.cy = pgf::uniform(rng, -10, 10);
    b.class_id = cls(rng);
    s.gts.push_back(b);
  }
  const int nd = n_det(rng);
  for (int i = 0; i < nd; ++i) {
    Box7 b;
    if (!s.gts.empty() && pgf::uniform(rng, 0, 1) < 0.7) {
      const Box7& g = s.gts[static_cast<std::size_t>(pgf::uniform(rng, 0, 1) * s.gts.size()) % s.gts.size()];
      const double r = pgf::uniform(rng, 0, 5);
      const double a = pgf::uniform(rng, 0, 2 * std::numbers::pi);
      b.cx = g.cx + r * std::cos(a);
      b.cy = g.cy + r * std::sin(a);
      b.class_id = pgf::uniform(rng, 0, 1) < 0.85 ? g.class_id : cls(rng);
    } else {
      b.cx = pgf::uniform(rng, -10, 10);
      b.cy = pgf::uniform(rng, -10, 10);
      b.class_id = cls(rng);
    }
    b.score = 0.2 * score_level(rng);
    s.dets.push_back(b);
  }
  std::stable_sort(s.dets.begin(), s.dets.end(), [](const Box7& a, const Box7& b) { return a.score > b.score; });
  return s;
}

}  // namespace oracle
