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

/// \file projection.hpp
/// Range-view (spherical) and bird's-eye-view gridding of point clouds, and
/// the gather/scatter that carries range-view features onto the BEV plane.
///
/// All scatter reductions are independent of point order: collisions in the
/// range image are won by the lexicographically smallest (range, x, y, z,
/// intensity) and per-cell means sum their contributions in sorted order.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

struct RvSpec {
  std::size_t height = 32;
  std::size_t width = 256;
  double incl_min = -30.0 * std::numbers::pi / 180.0;
  double incl_max = 15.0 * std::numbers::pi / 180.0;

  void validate() const {
    require(height >= 2 && width >= 2, "RvSpec: height and width must be >= 2");
    require(incl_min < incl_max, "RvSpec: incl_min must be below incl_max");
  }
};

struct Pixel {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const Pixel&) const = default;
};

/// Feature channels of a range image.
enum RvChannel : std::size_t { kRvX = 0, kRvY, kRvZ, kRvRange, kRvIntensity, kRvChannels };

struct RangeImage {
  RvSpec spec;
  Tensor features;                                     // (5, H, W), zero where invalid
  std::vector<std::uint8_t> valid;                     // H * W
  std::vector<std::optional<Pixel>> pixel_of_point;    // one entry per input point
  std::vector<std::optional<std::size_t>> point_of_pixel;  // H * W
  std::size_t kept = 0;
  std::size_t dropped = 0;

  bool is_valid(std::size_t row, std::size_t col) const { return valid[row * spec.width + col] != 0; }
  std::array<double, 3> xyz(std::size_t row, std::size_t col) const {
    return {features(kRvX, row, col), features(kRvY, row, col), features(kRvZ, row, col)};
  }
};

/// Pixel of a point, or nothing when it falls outside the inclination band.
inline std::optional<Pixel> rv_pixel(const Point& p, const RvSpec& spec) {
  const double r = p.range();
  const double incl = std::asin(std::clamp(p.z / r, -1.0, 1.0));
  if (incl < spec.incl_min || incl > spec.incl_max) return std::nullopt;
  const auto w = static_cast<double>(spec.width);
  const auto h = static_cast<double>(spec.height);
  const double col_f = std::floor((std::atan2(p.y, p.x) + std::numbers::pi) / (2.0 * std::numbers::pi) * w);
  const double row_f = std::floor((spec.incl_max - incl) / (spec.incl_max - spec.incl_min) * h);
  return Pixel{static_cast<std::uint32_t>(std::clamp(row_f, 0.0, h - 1.0)),
               static_cast<std::uint32_t>(std::clamp(col_f, 0.0, w - 1.0))};
}

inline RangeImage rv_project(std::span<const Point> points, const RvSpec& spec) {
  spec.validate();
  require(!points.empty(), "rv_project: empty point list");
  RangeImage img;
  img.spec = spec;
  img.features = Tensor(kRvChannels, spec.height, spec.width);
  img.valid.assign(spec.height * spec.width, 0);
  img.pixel_of_point.assign(points.size(), std::nullopt);
  img.point_of_pixel.assign(spec.height * spec.width, std::nullopt);
  const auto key = [&](std::size_t i) {
    const Point& p = points[i];
    return std::make_tuple(p.range(), p.x, p.y, p.z, p.intensity);
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    require(points[i].range() > 0.0, "rv_project: point " + std::to_string(i) + " has zero range");
    const auto px = rv_pixel(points[i], spec);
    if (!px) {
      ++img.dropped;
      continue;
    }
    ++img.kept;
    img.pixel_of_point[i] = px;
    auto& owner = img.point_of_pixel[px->row * spec.width + px->col];
    if (!owner || key(i) < key(*owner)) owner = i;
  }
  for (std::size_t pix = 0; pix < img.point_of_pixel.size(); ++pix) {
    if (!img.point_of_pixel[pix]) continue;
    const Point& p = points[*img.point_of_pixel[pix]];
    const std::size_t row = pix / spec.width;
    const std::size_t col = pix % spec.width;
    img.valid[pix] = 1;
    img.features(kRvX, row, col) = p.x;
    img.features(kRvY, row, col) = p.y;
    img.features(kRvZ, row, col) = p.z;
    img.features(kRvRange, row, col) = p.range();
    img.features(kRvIntensity, row, col) = p.intensity;
  }
  return img;
}

/// Per-pixel unit normals from neighbor differences (columns wrap in azimuth,
/// rows do not). A direction uses the central difference when both neighbors
/// are valid, else a one-sided difference with the pixel itself. Normals point
/// toward the sensor; pixels lacking either direction get the zero vector.
inline Tensor surface_normals(const RangeImage& img) {
  const std::size_t h = img.spec.height;
  const std::size_t w = img.spec.width;
  Tensor out(3, h, w);
  using V = std::array<double, 3>;
  const auto sub = [](const V& a, const V& b) { return V{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; };
  const auto diff = [&](bool has_lo, const V& lo, bool has_hi, const V& hi,
                        const V& self) -> std::optional<V> {
    if (has_lo && has_hi) return sub(hi, lo);
    if (has_hi) return sub(hi, self);
    if (has_lo) return sub(self, lo);
    return std::nullopt;
  };
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (!img.is_valid(r, c)) continue;
      const V self = img.xyz(r, c);
      const std::size_t cl = (c + w - 1) % w;
      const std::size_t cr = (c + 1) % w;
      const auto dh = diff(img.is_valid(r, cl), img.xyz(r, cl), img.is_valid(r, cr),
                           img.xyz(r, cr), self);
      const bool has_up = r > 0 && img.is_valid(r - 1, c);
      const bool has_down = r + 1 < h && img.is_valid(r + 1, c);
      const auto dv = diff(has_up, has_up ? img.xyz(r - 1, c) : self, has_down,
                           has_down ? img.xyz(r + 1, c) : self, self);
      if (!dh || !dv) continue;
      const V& a = *dh;
      const V& b = *dv;
      V n{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
      const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (!(len > 0.0)) continue;
      double sign = 1.0 / len;
      if (-(n[0] * self[0] + n[1] * self[1] + n[2] * self[2]) < 0.0) sign = -sign;
      for (std::size_t k = 0; k < 3; ++k) out(k, r, c) = n[k] * sign;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bird's-eye view

struct BevSpec {
  double x_min = -25.6;
  double x_max = 25.6;
  double y_min = -25.6;
  double y_max = 25.6;
  double cell = 0.4;

  std::size_t cols() const { return static_cast<std::size_t>(std::llround((x_max - x_min) / cell)); }
  std::size_t rows() const { return static_cast<std::size_t>(std::llround((y_max - y_min) / cell)); }

  void validate() const {
    require(cell > 0.0 && x_max > x_min && y_max > y_min, "BevSpec: empty grid");
    const auto integral = [&](double extent) {
      const double n = extent / cell;
      return std::abs(n - std::round(n)) < 1e-9 * std::max(1.0, n);
    };
    require(integral(x_max - x_min) && integral(y_max - y_min),
            "BevSpec: extents must be integer multiples of the cell size");
  }

  /// Same extent with cells `factor` times smaller.
  BevSpec refined(std::size_t factor) const {
    BevSpec s = *this;
    s.cell = cell / static_cast<double>(factor);
    return s;
  }

  double col_center(std::size_t col) const { return x_min + (static_cast<double>(col) + 0.5) * cell; }
  double row_center(std::size_t row) const { return y_min + (static_cast<double>(row) + 0.5) * cell; }
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Cell&) const = default;
};

namespace detail {

// floor((v - lo) / cell), snapping quotients within 1e-9 of an integer so that
// exact multiples of the cell size land on their nominal index.
inline double grid_coord(double v, double lo, double cell) {
  const double t = (v - lo) / cell;
  const double r = std::round(t);
  return std::floor(std::abs(t - r) < 1e-9 ? r : t);
}

}  // namespace detail

/// Half-open cells: [x_min + col*cell, x_min + (col+1)*cell).
inline std::optional<Cell> bev_cell(double x, double y, const BevSpec& spec) {
  const double cx = detail::grid_coord(x, spec.x_min, spec.cell);
  const double cy = detail::grid_coord(y, spec.y_min, spec.cell);
  if (!(cx >= 0.0 && cy >= 0.0)) return std::nullopt;
  if (cx >= static_cast<double>(spec.cols()) || cy >= static_cast<double>(spec.rows()))
    return std::nullopt;
  return Cell{static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)};
}

inline std::vector<std::optional<Cell>> bev_bin(std::span<const Point> points, const BevSpec& spec) {
  spec.validate();
  std::vector<std::optional<Cell>> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = bev_cell(points[i].x, points[i].y, spec);
  return out;
}

namespace detail {

// Contributions grouped by flat cell index: members[offsets[c] .. offsets[c+1]).
struct CellBuckets {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> members;
};

inline CellBuckets bucket(std::span<const std::optional<Cell>> cells, std::size_t cols,
                          std::size_t n_cells, std::span<const std::uint8_t> include = {}) {
  CellBuckets b;
  b.offsets.assign(n_cells + 1, 0);
  const auto use = [&](std::size_t i) { return cells[i] && (include.empty() || include[i]); };
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (use(i)) ++b.offsets[cells[i]->row * cols + cells[i]->col + 1];
  for (std::size_t c = 0; c < n_cells; ++c) b.offsets[c + 1] += b.offsets[c];
  b.members.resize(b.offsets[n_cells]);
  std::vector<std::size_t> cursor(b.offsets.begin(), b.offsets.end() - 1);
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (use(i)) b.members[cursor[cells[i]->row * cols + cells[i]->col]++] = i;
  return b;
}

inline double sorted_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

}  // namespace detail

/// Pillar features per BEV cell: (log1p(count), mean z, max z, mean intensity).
inline Tensor pillarize(std::span<const Point> points, const BevSpec& spec) {
  const auto cells = bev_bin(points, spec);
  const std::size_t rows = spec.rows();
  const std::size_t cols = spec.cols();
  Tensor out(4, rows, cols);
  const auto buckets = detail::bucket(cells, cols, rows * cols);
  std::vector<double> zs;
  std::vector<double> its;
  for (std::size_t c = 0; c < rows * cols; ++c) {
    const std::size_t begin = buckets.offsets[c];
    const std::size_t end = buckets.offsets[c + 1];
    if (begin == end) continue;
    zs.clear();
    its.clear();
    for (std::size_t k = begin; k < end; ++k) {
      zs.push_back(points[buckets.members[k]].z);
      its.push_back(points[buckets.members[k]].intensity);
    }
    const auto n = static_cast<double>(end - begin);
    const std::size_t row = c / cols;
    const std::size_t col = c % cols;
    out(0, row, col) = std::log1p(n);
    out(2, row, col) = *std::max_element(zs.begin(), zs.end());
    out(1, row, col) = detail::sorted_sum(zs) / n;
    out(3, row, col) = detail::sorted_sum(its) / n;
  }
  return out;
}

enum class Reduce { kMax, kMean };

/// Gathers each point's range-view feature vector (at its own pixel, shared
/// with the pixel's winner on collisions) and scatters it into the point's BEV
/// cell. `rv_features` may be an integer downscale of the range image; pixel
/// coordinates are divided by the ratio. Empty cells are zero.
inline Tensor rv_to_bev(const Tensor& rv_features, const RangeImage& img,
                        std::span<const Point> points, const BevSpec& spec, Reduce reduce,
                        std::span<const std::uint8_t> include = {}) {
  require(points.size() == img.pixel_of_point.size(),
          "rv_to_bev: point count does not match the range image");
  require(include.empty() || include.size() == points.size(), "rv_to_bev: include mask length");
  const std::size_t fh = rv_features.height();
  const std::size_t fw = rv_features.width();
  require(fh > 0 && fw > 0 && img.spec.height % fh == 0 && img.spec.width % fw == 0,
          "rv_to_bev: feature resolution " + rv_features.shape().str() +
              " is not an integer downscale of range image " + std::to_string(img.spec.height) +
              "x" + std::to_string(img.spec.width));
  const std::size_t ratio_h = img.spec.height / fh;
  const std::size_t ratio_w = img.spec.width / fw;
  auto cells = bev_bin(points, spec);
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!img.pixel_of_point[i]) cells[i].reset();
  const std::size_t rows = spec.rows();
  const std::size_t cols = spec.cols();
  const std::size_t channels = rv_features.channels();
  Tensor out(channels, rows, cols);
  const auto buckets = detail::bucket(cells, cols, rows * cols, include);
  std::vector<double> values;
  for (std::size_t cell = 0; cell < rows * cols; ++cell) {
    const std::size_t begin = buckets.offsets[cell];
    const std::size_t end = buckets.offsets[cell + 1];
    if (begin == end) continue;
    const std::size_t row = cell / cols;
    const std::size_t col = cell % cols;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      values.clear();
      for (std::size_t k = begin; k < end; ++k) {
        const Pixel px = *img.pixel_of_point[buckets.members[k]];
        values.push_back(rv_features(ch, px.row / ratio_h, px.col / ratio_w));
      }
      out(ch, row, col) = reduce == Reduce::kMax
                              ? *std::max_element(values.begin(), values.end())
                              : detail::sorted_sum(values) / static_cast<double>(values.size());
    }
  }
  return out;
}

}  // namespace pgf
