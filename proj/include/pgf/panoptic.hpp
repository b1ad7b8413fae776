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

/// \file panoptic.hpp
/// Oracle panoptic segmentation: class probabilities, foreground mask and
/// box-center offsets synthesized from ground truth under controlled noise,
/// plus multi-scale range-view encoder features from a fixed-seed encoder.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pgf/projection.hpp"
#include "pgf/rng.hpp"
#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

struct NoiseConfig {
  double label_flip = 0.0;    // probability of a uniform flip to another class
  double offset_sigma = 0.0;  // isotropic Gaussian offset noise, meters per axis
  double mask_error = 0.0;    // probability of flipping the foreground mask bit

  void validate() const {
    require(label_flip >= 0.0 && offset_sigma >= 0.0 && mask_error >= 0.0,
            "NoiseConfig: noise parameters must be non-negative");
    require(label_flip <= 1.0 && mask_error <= 1.0, "NoiseConfig: probabilities must be <= 1");
  }
};

/// Range-view encoder. r3 carries, per pixel: unit normal (3), xyz scaled by
/// 1/xyz_scale (3), the estimated foreground probability and the verticality
/// 1 - |n_z| of the surface. r2 and r1 are stride-2 3x3 conv + relu stages.
struct EncoderConfig {
  RvSpec rv;
  std::uint64_t seed = 7;
  std::size_t r2_channels = 16;
  std::size_t r1_channels = 32;
  double xyz_scale = 25.0;
};

inline constexpr std::size_t kR3Channels = 8;

struct Encoder {
  EncoderConfig config;
  ConvParams to_r2;
  ConvParams to_r1;

  explicit Encoder(EncoderConfig c) : config(std::move(c)) {
    config.rv.validate();
    require(config.rv.height % 4 == 0 && config.rv.width % 4 == 0,
            "Encoder: range image dims must be divisible by 4");
    Rng rng(mix_seed(config.seed, "rv-encoder"));
    to_r2 = ConvParams::zeros(config.r2_channels, kR3Channels, 3, true, 2, 1, 1);
    to_r1 = ConvParams::zeros(config.r1_channels, config.r2_channels, 3, true, 2, 1, 1);
    init_he(to_r2, rng);
    init_he(to_r1, rng);
  }
};

struct RvFeatures {
  Tensor r1;  // 1/4 resolution
  Tensor r2;  // 1/2 resolution
  Tensor r3;  // full resolution
};

struct PanopticEstimate {
  std::size_t num_classes = 0;               // K foreground classes
  std::vector<double> class_probs;           // N x (K + 1), row-major
  std::vector<std::uint8_t> foreground_mask; // N
  std::vector<std::array<double, 3>> center_offsets;  // N
  RangeImage range_image;
  Tensor normals;
  RvFeatures rv_feats;

  std::span<const double> probs(std::size_t point) const {
    return std::span<const double>(class_probs).subspan(point * (num_classes + 1), num_classes + 1);
  }
  /// Probability that the point is foreground: 1 - p(background).
  double foreground_prob(std::size_t point) const { return 1.0 - probs(point)[0]; }
};

inline RvFeatures encode_range_view(const Encoder& enc, const RangeImage& img,
                                    const Tensor& normals, std::span<const double> fg_prob) {
  const std::size_t h = img.spec.height;
  const std::size_t w = img.spec.width;
  Tensor r3(kR3Channels, h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      if (!img.is_valid(r, c)) continue;
      for (std::size_t k = 0; k < 3; ++k) {
        r3(k, r, c) = normals(k, r, c);
        r3(3 + k, r, c) = img.features(kRvX + k, r, c) / enc.config.xyz_scale;
      }
      r3(6, r, c) = fg_prob[*img.point_of_pixel[r * w + c]];
      r3(7, r, c) = 1.0 - std::abs(normals(2, r, c));
    }
  RvFeatures f;
  f.r2 = activation(conv2d(r3, enc.to_r2), Activation::kRelu);
  f.r1 = activation(conv2d(f.r2, enc.to_r1), Activation::kRelu);
  f.r3 = std::move(r3);
  return f;
}

inline PanopticEstimate oracle_panoptic(const Scene& scene, const NoiseConfig& noise,
                                        std::uint64_t seed, const Encoder& encoder) {
  noise.validate();
  const std::size_t n = scene.points.size();
  const auto k = static_cast<std::size_t>(scene.num_classes);
  PanopticEstimate est;
  est.num_classes = k;
  est.class_probs.assign(n * (k + 1), 0.0);
  est.foreground_mask.assign(n, 0);
  est.center_offsets.assign(n, {0.0, 0.0, 0.0});
  Rng rng(mix_seed(seed, "panoptic"));
  std::uniform_int_distribution<std::size_t> other(1, k);
  for (std::size_t i = 0; i < n; ++i) {
    const PointLabel& lab = scene.labels[i];
    const auto truth = static_cast<std::size_t>(lab.class_id);
    // Fixed draw count per point keeps streams aligned across noise settings.
    const double u_flip = uniform(rng, 0.0, 1.0);
    const std::size_t shift = other(rng);
    const double u_mask = uniform(rng, 0.0, 1.0);
    const std::array<double, 3> eps{normal(rng), normal(rng), normal(rng)};

    const std::size_t predicted = u_flip < noise.label_flip ? (truth + shift) % (k + 1) : truth;
    est.class_probs[i * (k + 1) + predicted] = 1.0;
    const bool fg = lab.class_id > 0;
    est.foreground_mask[i] = (fg != (u_mask < noise.mask_error)) ? 1 : 0;
    const Point& p = scene.points[i];
    std::array<double, 3> off{0.0, 0.0, 0.0};
    if (fg) {
      const Box7& b = scene.boxes[static_cast<std::size_t>(lab.instance_id) - 1];
      off = {b.cx - p.x, b.cy - p.y, b.cz - p.z};
    }
    for (std::size_t a = 0; a < 3; ++a) off[a] += noise.offset_sigma * eps[a];
    est.center_offsets[i] = off;
  }
  est.range_image = rv_project(scene.points, encoder.config.rv);
  est.normals = surface_normals(est.range_image);
  std::vector<double> fg_prob(n);
  for (std::size_t i = 0; i < n; ++i) fg_prob[i] = est.foreground_prob(i);
  est.rv_feats = encode_range_view(encoder, est.range_image, est.normals, fg_prob);
  return est;
}

}  // namespace pgf
