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

/// \file detection.hpp
/// Anchor-free center detection on the BEV grid: a small fixed-seed backbone,
/// Gaussian center targets, dense regression encoding, and peak decoding.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pgf/projection.hpp"
#include "pgf/rng.hpp"
#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

// ---------------------------------------------------------------------------
// Backbone

struct BackboneParams {
  std::vector<ConvParams> layers;  // 3x3 same-size, relu after each

  static BackboneParams random(std::size_t in_channels, std::size_t width, std::uint64_t seed,
                               std::size_t depth = 3) {
    Rng rng(mix_seed(seed, "mini-backbone"));
    BackboneParams p;
    std::size_t in = in_channels;
    for (std::size_t i = 0; i < depth; ++i) {
      ConvParams c = ConvParams::same(width, in, 3);
      init_he(c, rng);
      p.layers.push_back(std::move(c));
      in = width;
    }
    return p;
  }
};

inline Tensor mini_backbone(const Tensor& bev_in, const BackboneParams& p) {
  require(!p.layers.empty(), "mini_backbone: no layers");
  require(bev_in.channels() == p.layers.front().in_ch,
          "mini_backbone: input has " + std::to_string(bev_in.channels()) +
              " channels, backbone expects " + std::to_string(p.layers.front().in_ch));
  Tensor x = bev_in;
  for (const ConvParams& layer : p.layers) x = activation(conv2d(x, layer), Activation::kRelu);
  return x;
}

// ---------------------------------------------------------------------------
// Targets

struct TargetConfig {
  double min_overlap = 0.1;
  int min_radius = 2;
};

/// CenterNet radius: the largest center displacement (in cells) that keeps
/// IoU >= min_overlap for a det_h x det_w box, taking the most restrictive of
/// the three corner cases.
inline double gaussian_radius(double det_h, double det_w, double min_overlap) {
  const double b1 = det_h + det_w;
  const double c1 = det_w * det_h * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;
  const double b2 = 2.0 * (det_h + det_w);
  const double c2 = (1.0 - min_overlap) * det_w * det_h;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16.0 * c2)) / 2.0;
  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (det_h + det_w);
  const double c3 = (min_overlap - 1.0) * det_w * det_h;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

inline int target_radius(const Box7& b, const BevSpec& grid, const TargetConfig& cfg) {
  const double r = gaussian_radius(b.l / grid.cell, b.w / grid.cell, cfg.min_overlap);
  return std::max(cfg.min_radius, static_cast<int>(r));
}

/// Splats exp(-d^2 / (2 sigma^2)), sigma = (2r + 1) / 6, into `channel` with
/// elementwise max. Values below machine epsilon of the peak are dropped.
inline void draw_gaussian(std::span<double> channel, std::size_t rows, std::size_t cols, Cell center,
                          int radius) {
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto cy = static_cast<std::ptrdiff_t>(center.row);
  const auto cx = static_cast<std::ptrdiff_t>(center.col);
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
    const std::ptrdiff_t y = cy + dy;
    if (y < 0 || y >= static_cast<std::ptrdiff_t>(rows)) continue;
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
      const std::ptrdiff_t x = cx + dx;
      if (x < 0 || x >= static_cast<std::ptrdiff_t>(cols)) continue;
      double g = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      if (g < std::numeric_limits<double>::epsilon()) g = 0.0;
      double& cell = channel[static_cast<std::size_t>(y) * cols + static_cast<std::size_t>(x)];
      cell = std::max(cell, g);
    }
  }
}

struct TargetMaps {
  Tensor heatmap;  // (K, rows, cols)
  std::size_t skipped = 0;
};

inline TargetMaps gaussian_targets(std::span<const Box7> boxes, const BevSpec& grid,
                                   std::size_t num_classes, const TargetConfig& cfg = {}) {
  grid.validate();
  TargetMaps t{Tensor(num_classes, grid.rows(), grid.cols()), 0};
  for (const Box7& b : boxes) {
    const auto cell = bev_cell(b.cx, b.cy, grid);
    if (!cell || b.class_id < 1 || static_cast<std::size_t>(b.class_id) > num_classes) {
      ++t.skipped;
      continue;
    }
    draw_gaussian(t.heatmap.channel(static_cast<std::size_t>(b.class_id - 1)), grid.rows(),
                  grid.cols(), *cell, target_radius(b, grid, cfg));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Head encoding and decoding

/// Regression channels of HeadOutput::regression.
enum RegChannel : std::size_t { kRegDx = 0, kRegDy, kRegLogL, kRegLogW, kRegSin, kRegCos, kRegChannels };

struct HeadOutput {
  Tensor heatmaps;    // (K, rows, cols), post-sigmoid scores
  Tensor regression;  // (6, rows, cols): dx, dy (cells), log l, log w, sin yaw, cos yaw
  Tensor z_logh;      // (2, rows, cols): z, log h
};

struct RegressionTargets {
  Tensor regression;
  Tensor z_logh;
  Tensor mask;  // (1, rows, cols), 1 at encoded center cells
};

/// Exact regression values at every in-grid box's center cell.
inline RegressionTargets encode_regression(std::span<const Box7> boxes, const BevSpec& grid) {
  grid.validate();
  const std::size_t rows = grid.rows();
  const std::size_t cols = grid.cols();
  RegressionTargets t{Tensor(kRegChannels, rows, cols), Tensor(2, rows, cols), Tensor(1, rows, cols)};
  for (const Box7& b : boxes) {
    const auto cell = bev_cell(b.cx, b.cy, grid);
    if (!cell) continue;
    const std::size_t r = cell->row;
    const std::size_t c = cell->col;
    t.regression(kRegDx, r, c) = (b.cx - grid.col_center(c)) / grid.cell;
    t.regression(kRegDy, r, c) = (b.cy - grid.row_center(r)) / grid.cell;
    t.regression(kRegLogL, r, c) = std::log(b.l);
    t.regression(kRegLogW, r, c) = std::log(b.w);
    t.regression(kRegSin, r, c) = std::sin(b.yaw);
    t.regression(kRegCos, r, c) = std::cos(b.yaw);
    t.z_logh(0, r, c) = b.cz;
    t.z_logh(1, r, c) = std::log(b.h);
    t.mask(0, r, c) = 1.0;
  }
  return t;
}

struct Detection {
  Box7 box;
  Cell cell;
};

/// Sorted by descending score.
struct DetectionSet {
  std::vector<Detection> detections;

  std::vector<Box7> boxes() const {
    std::vector<Box7> out;
    out.reserve(detections.size());
    for (const auto& d : detections) out.push_back(d.box);
    return out;
  }
};

/// A cell is a peak when its score is >= every 3x3 neighbor, ties going to the
/// first cell in row-major order. Peaks scoring >= score_min are ranked by
/// score (then class, then cell index) and the top k_max are returned.
inline DetectionSet decode(const HeadOutput& head, const BevSpec& grid, std::size_t k_max,
                           double score_min) {
  const std::size_t rows = head.heatmaps.height();
  const std::size_t cols = head.heatmaps.width();
  require(rows == grid.rows() && cols == grid.cols(), "decode: heatmap does not match the grid");
  require(head.regression.shape() == Shape{kRegChannels, rows, cols} &&
              head.z_logh.shape() == Shape{2, rows, cols},
          "decode: regression maps do not match the heatmap");
  struct Candidate {
    double score;
    std::size_t cls;
    std::size_t index;
  };
  std::vector<Candidate> cands;
  for (std::size_t k = 0; k < head.heatmaps.channels(); ++k) {
    const auto hm = head.heatmaps.channel(k);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t idx = r * cols + c;
        const double v = hm[idx];
        if (!(v >= score_min)) continue;
        bool peak = true;
        for (std::ptrdiff_t dy = -1; dy <= 1 && peak; ++dy) {
          for (std::ptrdiff_t dx = -1; dx <= 1 && peak; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(r) + dy;
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(c) + dx;
            if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(rows) ||
                x >= static_cast<std::ptrdiff_t>(cols))
              continue;
            const std::size_t n = static_cast<std::size_t>(y) * cols + static_cast<std::size_t>(x);
            if (hm[n] > v || (hm[n] == v && n < idx)) peak = false;
          }
        }
        if (peak) cands.push_back({v, k, idx});
      }
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.index < b.index;
  });
  if (cands.size() > k_max) cands.resize(k_max);
  DetectionSet out;
  out.detections.reserve(cands.size());
  for (const Candidate& cd : cands) {
    const std::size_t r = cd.index / cols;
    const std::size_t c = cd.index % cols;
    Box7 b;
    b.cx = grid.col_center(c) + head.regression(kRegDx, r, c) * grid.cell;
    b.cy = grid.row_center(r) + head.regression(kRegDy, r, c) * grid.cell;
    b.cz = head.z_logh(0, r, c);
    b.l = std::exp(head.regression(kRegLogL, r, c));
    b.w = std::exp(head.regression(kRegLogW, r, c));
    b.h = std::exp(head.z_logh(1, r, c));
    const double s = head.regression(kRegSin, r, c);
    const double co = head.regression(kRegCos, r, c);
    const double norm = std::hypot(s, co);
    // atan2(0, 0) is taken as yaw 0.
    b.yaw = norm > 0.0 ? wrap_angle(std::atan2(s / norm, co / norm)) : 0.0;
    b.class_id = static_cast<std::int32_t>(cd.cls + 1);
    b.score = cd.score;
    out.detections.push_back({b, Cell{r, c}});
  }
  return out;
}

}  // namespace pgf
