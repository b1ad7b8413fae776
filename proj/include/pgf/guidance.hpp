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

/// \file guidance.hpp
/// Segmentation-derived guidance for the BEV detector: view-attention over
/// concatenated BEV and range-view features, class-wise foreground attention,
/// and the center density heatmap.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pgf/panoptic.hpp"
#include "pgf/projection.hpp"
#include "pgf/rng.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

// ---------------------------------------------------------------------------
// RV-BEV feature weighting

struct RvBevAttnParams {
  std::size_t bev_channels = 0;
  std::size_t rv_channels = 0;
  MlpParams channel_mlp;    // C_total -> hidden -> C_total, shared by the 4 pooled vectors
  ConvParams spatial_conv;  // 4 -> 1, 3x3, dilation 3
  ConvParams compress;      // 1x1, C_total -> backbone width

  std::size_t total_channels() const { return bev_channels + rv_channels; }

  static RvBevAttnParams zeros(std::size_t bev_ch, std::size_t rv_ch, std::size_t out_ch,
                               std::size_t ratio = 4) {
    const std::size_t total = bev_ch + rv_ch;
    return {bev_ch, rv_ch,
            MlpParams::zeros(total, std::max<std::size_t>(1, total / ratio), total),
            ConvParams::same(1, 4, 3, true, 3), ConvParams::same(out_ch, total, 1)};
  }

  static RvBevAttnParams random(std::size_t bev_ch, std::size_t rv_ch, std::size_t out_ch,
                                std::uint64_t seed, std::size_t ratio = 4) {
    RvBevAttnParams p = zeros(bev_ch, rv_ch, out_ch, ratio);
    Rng rng(mix_seed(seed, "rv-bev-attention"));
    init_he(p.channel_mlp, rng);
    init_he(p.spatial_conv, rng);
    init_he(p.compress, rng);
    return p;
  }
};

/// Attention over concat(bev, rv), shape (C_total, H, W), values in (0, 1).
///
/// Channel stream: spatial max/avg of each view gives 4 vectors, each placed
/// at its view's channel offset in a zero C_total vector, run through the
/// shared MLP and summed. Space stream: depth-wise max/avg of each view gives
/// 4 maps, fed to the dilated 3x3 conv. Both are broadcast, summed and squashed.
inline Tensor rv_bev_attention_map(const Tensor& bev, const Tensor& rv, const RvBevAttnParams& p) {
  require(bev.height() == rv.height() && bev.width() == rv.width(),
          "rv_bev_attention: spatial mismatch bev=" + bev.shape().str() + " rv=" + rv.shape().str());
  require(bev.channels() == p.bev_channels && rv.channels() == p.rv_channels,
          "rv_bev_attention: channel counts " + std::to_string(bev.channels()) + "+" +
              std::to_string(rv.channels()) + " do not match params " +
              std::to_string(p.bev_channels) + "+" + std::to_string(p.rv_channels));
  require(p.channel_mlp.in == p.total_channels() && p.channel_mlp.out == p.total_channels(),
          "rv_bev_attention: channel mlp must map C_total -> C_total");
  const std::size_t total = p.total_channels();
  std::vector<double> channel_logits(total, 0.0);
  const auto feed = [&](const Tensor& view, std::size_t offset) {
    for (PoolMode mode : {PoolMode::kMax, PoolMode::kAvg}) {
      const auto pooled = pool_spatial(view, mode);
      std::vector<double> padded(total, 0.0);
      std::copy(pooled.begin(), pooled.end(), padded.begin() + static_cast<std::ptrdiff_t>(offset));
      const auto out = mlp(padded, p.channel_mlp);
      for (std::size_t c = 0; c < total; ++c) channel_logits[c] += out[c];
    }
  };
  feed(bev, 0);
  feed(rv, p.bev_channels);

  const Tensor maps = concat_channels(
      concat_channels(pool_channel(bev, PoolMode::kMax), pool_channel(bev, PoolMode::kAvg)),
      concat_channels(pool_channel(rv, PoolMode::kMax), pool_channel(rv, PoolMode::kAvg)));
  const Tensor spatial_logits = conv2d(maps, p.spatial_conv);
  require(spatial_logits.height() == bev.height() && spatial_logits.width() == bev.width(),
          "rv_bev_attention: spatial conv must preserve resolution");

  Tensor att(total, bev.height(), bev.width());
  const auto s = spatial_logits.channel(0);
  for (std::size_t c = 0; c < total; ++c) {
    auto a = att.channel(c);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = sigmoid(channel_logits[c] + s[i]);
  }
  return att;
}

/// attention * concat(bev, rv), before channel compression.
inline Tensor rv_bev_weighted(const Tensor& bev, const Tensor& rv, const RvBevAttnParams& p) {
  return mul(rv_bev_attention_map(bev, rv, p), concat_channels(bev, rv));
}

inline Tensor rv_bev_attention(const Tensor& bev, const Tensor& rv, const RvBevAttnParams& p) {
  return conv2d(rv_bev_weighted(bev, rv, p), p.compress);
}

// ---------------------------------------------------------------------------
// Class-wise foreground attention

/// All convolutions are bias-free 1x1, so all-zero probability maps make the
/// module an exact identity.
struct ClassAttnParams {
  std::vector<ConvParams> branches;  // per class: C -> C_k
  ConvParams merge;                  // K * C_k -> C

  static ClassAttnParams random(std::size_t channels, std::size_t classes,
                                std::size_t branch_channels, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "class-attention"));
    ClassAttnParams p;
    for (std::size_t k = 0; k < classes; ++k) {
      ConvParams b = ConvParams::same(branch_channels, channels, 1, false);
      init_he(b, rng);
      p.branches.push_back(std::move(b));
    }
    p.merge = ConvParams::same(channels, classes * branch_channels, 1, false);
    init_he(p.merge, rng);
    return p;
  }
};

inline Tensor class_foreground_attention(const Tensor& x, std::span<const Tensor> probs,
                                         const ClassAttnParams& p) {
  require(probs.size() == p.branches.size(),
          "class_foreground_attention: " + std::to_string(probs.size()) +
              " probability maps for " + std::to_string(p.branches.size()) + " class branches");
  require(!p.branches.empty(), "class_foreground_attention: no class branches");
  require(!p.merge.has_bias(), "class_foreground_attention: merge conv must be bias-free");
  Tensor gathered;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    require(probs[k].shape() == Shape{1, x.height(), x.width()},
            "class_foreground_attention: probability map " + std::to_string(k) + " is " +
                probs[k].shape().str() + ", features are " + x.shape().str());
    require(!p.branches[k].has_bias(), "class_foreground_attention: branch convs must be bias-free");
    Tensor branch = conv2d(mul_spatial(x, probs[k]), p.branches[k]);
    gathered = k == 0 ? std::move(branch) : concat_channels(gathered, branch);
  }
  const Tensor merged = conv2d(gathered, p.merge);
  require_same_shape(merged, x, "class_foreground_attention merge");
  return add(x, merged);
}

// ---------------------------------------------------------------------------
// Center density heatmap

/// tanh(ln(n + 1)) for an integer count n, evaluated through the identity
/// tanh(ln m) = (m^2 - 1) / (m^2 + 1) = n(n + 2) / (n(n + 2) + 2). Exact
/// integers in the numerator and denominator up to n ~ 9e7, so the result is
/// the correctly rounded value of the closed form.
inline double density_value(std::uint64_t n) {
  const auto a = static_cast<double>(n) * static_cast<double>(n + 2);
  return a / (a + 2.0);
}

struct DensityHeatmap {
  BevSpec grid;
  Tensor counts;  // (1, rows, cols)
  Tensor values;  // (1, rows, cols), density_value(counts)
};

inline DensityHeatmap density_from_counts(const BevSpec& grid, Tensor counts) {
  require(counts.shape() == Shape{1, grid.rows(), grid.cols()}, "density: count map shape");
  DensityHeatmap h{grid, std::move(counts), Tensor(1, grid.rows(), grid.cols())};
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double c = h.counts.data()[i];
    require(c >= 0.0 && c == std::floor(c), "density: counts must be non-negative integers");
    h.values.data()[i] = density_value(static_cast<std::uint64_t>(c));
  }
  return h;
}

/// Counts foreground-masked points after shifting each by its predicted
/// center offset; shifted points off the grid are dropped.
inline DensityHeatmap center_density(std::span<const Point> points, const PanopticEstimate& est,
                                     const BevSpec& grid) {
  grid.validate();
  require(est.foreground_mask.size() == points.size() && est.center_offsets.size() == points.size(),
          "center_density: panoptic arrays not aligned with points");
  Tensor counts(1, grid.rows(), grid.cols());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!est.foreground_mask[i]) continue;
    const auto& off = est.center_offsets[i];
    const auto cell = bev_cell(points[i].x + off[0], points[i].y + off[1], grid);
    if (cell) counts(0, cell->row, cell->col) += 1.0;
  }
  return density_from_counts(grid, std::move(counts));
}

/// x + x * h, broadcast over channels.
inline Tensor apply_density(const Tensor& x, const DensityHeatmap& h) {
  require(h.values.height() == x.height() && h.values.width() == x.width(),
          "apply_density: heatmap " + h.values.shape().str() + " vs features " + x.shape().str());
  return add(x, mul_spatial(x, h.values));
}

}  // namespace pgf
