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

/// \file fusion.hpp
/// Multi-scale range-view feature fusion: CBAM refinement, x2 up-sampling with
/// boundary refinement, and the space2depth chain that brings projected
/// features down to the detection backbone's BEV resolution. Forward only.
#pragma once

#include <cstdint>
#include <vector>

#include "pgf/rng.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

struct CbamParams {
  MlpParams channel_mlp;    // C -> C/ratio -> C, shared by the max and avg vectors
  ConvParams spatial_conv;  // k x k, 2 -> 1, same padding

  static CbamParams zeros(std::size_t channels, std::size_t ratio = 4, std::size_t k = 7) {
    return {MlpParams::zeros(channels, std::max<std::size_t>(1, channels / ratio), channels),
            ConvParams::same(1, 2, k)};
  }

  static CbamParams random(std::size_t channels, Rng& rng, std::size_t ratio = 4,
                           std::size_t k = 7) {
    CbamParams p = zeros(channels, ratio, k);
    init_he(p.channel_mlp, rng);
    init_he(p.spatial_conv, rng);
    return p;
  }
};

/// Channel attention sigmoid(mlp(max) + mlp(avg)) scales each channel.
inline std::vector<double> cbam_channel_attention(const Tensor& x, const MlpParams& mlp_p) {
  const auto max_v = mlp(pool_spatial(x, PoolMode::kMax), mlp_p);
  const auto avg_v = mlp(pool_spatial(x, PoolMode::kAvg), mlp_p);
  std::vector<double> a(x.channels());
  for (std::size_t c = 0; c < a.size(); ++c) a[c] = sigmoid(max_v[c] + avg_v[c]);
  return a;
}

/// Spatial attention sigmoid(conv([max_c(x), avg_c(x)])), shape (1, H, W).
inline Tensor cbam_spatial_attention(const Tensor& x, const ConvParams& conv) {
  const Tensor pooled =
      concat_channels(pool_channel(x, PoolMode::kMax), pool_channel(x, PoolMode::kAvg));
  return activation(conv2d(pooled, conv), Activation::kSigmoid);
}

inline Tensor cbam(const Tensor& x, const CbamParams& p) {
  require(p.channel_mlp.in == x.channels() && p.channel_mlp.out == x.channels(),
          "cbam: channel mlp is " + std::to_string(p.channel_mlp.in) + "->" +
              std::to_string(p.channel_mlp.out) + " but input has " +
              std::to_string(x.channels()) + " channels");
  require(p.spatial_conv.in_ch == 2 && p.spatial_conv.out_ch == 1 && p.spatial_conv.stride == 1 &&
              p.spatial_conv.kh % 2 == 1 &&
              p.spatial_conv.padding == p.spatial_conv.dilation * (p.spatial_conv.kh - 1) / 2,
          "cbam: spatial conv must be a same-size 2->1 kernel");
  const Tensor refined = mul_channelwise(x, cbam_channel_attention(x, p.channel_mlp));
  return mul_spatial(refined, cbam_spatial_attention(refined, p.spatial_conv));
}

/// Residual 3x3 refinement x + conv(x) after up-sampling.
inline Tensor boundary_refine(const Tensor& x, const ConvParams& p) {
  require(p.kh == 3 && p.kw == 3 && p.stride == 1 && p.padding == p.dilation,
          "boundary_refine: expects a same-size 3x3 kernel");
  require(p.in_ch == x.channels() && p.out_ch == x.channels(),
          "boundary_refine: kernel " + std::to_string(p.in_ch) + "->" + std::to_string(p.out_ch) +
              " does not preserve " + std::to_string(x.channels()) + " channels");
  return add(x, conv2d(x, p));
}

struct CascadeConfig {
  std::size_t r1_channels = 32;
  std::size_t r2_channels = 16;
  std::size_t r3_channels = 8;
  std::size_t up1_channels = 16;  // after the first x2 up-sampling
  std::size_t up2_channels = 8;   // after the second
  std::size_t out_channels = 16;  // fused range-view output
  std::size_t cbam_ratio = 4;
  std::size_t cbam_kernel = 7;
  std::size_t downsample_stages = 1;
  std::uint64_t seed = 11;
};

struct CascadeParams {
  CbamParams cbam1, cbam2, cbam3;
  ConvParams up1, up2;          // 3x3 stride-2 transposed
  ConvParams refine1, refine2;  // 3x3 residual
  ConvParams out;               // 1x1
  std::vector<ConvParams> downsample;  // per stage, 1x1 bias-free 4C -> 2C

  static CascadeParams random(const CascadeConfig& c, std::size_t downsample_in_channels) {
    Rng rng(mix_seed(c.seed, "cascade"));
    CascadeParams p;
    const std::size_t s2 = c.up1_channels + c.r2_channels;
    const std::size_t s3 = c.up2_channels + c.r3_channels;
    p.cbam1 = CbamParams::random(c.r1_channels, rng, c.cbam_ratio, c.cbam_kernel);
    p.up1 = ConvParams::zeros(c.up1_channels, c.r1_channels, 3, true, 2, 1, 1);
    init_he(p.up1, rng);
    p.refine1 = ConvParams::same(c.up1_channels, c.up1_channels, 3);
    init_he(p.refine1, rng, 0.5);
    p.cbam2 = CbamParams::random(s2, rng, c.cbam_ratio, c.cbam_kernel);
    p.up2 = ConvParams::zeros(c.up2_channels, s2, 3, true, 2, 1, 1);
    init_he(p.up2, rng);
    p.refine2 = ConvParams::same(c.up2_channels, c.up2_channels, 3);
    init_he(p.refine2, rng, 0.5);
    p.cbam3 = CbamParams::random(s3, rng, c.cbam_ratio, c.cbam_kernel);
    p.out = ConvParams::same(c.out_channels, s3, 1);
    init_he(p.out, rng);
    std::size_t ch = downsample_in_channels;
    for (std::size_t s = 0; s < c.downsample_stages; ++s) {
      ConvParams d = ConvParams::same(2 * ch, 4 * ch, 1, false);
      init_he(d, rng);
      p.downsample.push_back(std::move(d));
      ch *= 2;
    }
    return p;
  }
};

/// Coarse-to-fine fusion of r1 (1/4), r2 (1/2) and r3 (full resolution):
/// cbam -> up x2 -> relu -> refine -> concat, twice, then cbam -> 1x1.
inline Tensor cascade_fuse(const Tensor& r1, const Tensor& r2, const Tensor& r3,
                           const CascadeParams& p) {
  require(2 * r1.height() == r2.height() && 2 * r1.width() == r2.width() &&
              2 * r2.height() == r3.height() && 2 * r2.width() == r3.width(),
          "cascade_fuse: scale mismatch r1=" + r1.shape().str() + " r2=" + r2.shape().str() +
              " r3=" + r3.shape().str() + " (expected 1/4, 1/2, 1/1)");
  Tensor x = cbam(r1, p.cbam1);
  x = boundary_refine(activation(conv_transpose2d_x2(x, p.up1), Activation::kRelu), p.refine1);
  x = cbam(concat_channels(x, r2), p.cbam2);
  x = boundary_refine(activation(conv_transpose2d_x2(x, p.up2), Activation::kRelu), p.refine2);
  x = cbam(concat_channels(x, r3), p.cbam3);
  return conv2d(x, p.out);
}

/// Each stage halves H and W with space2depth (C -> 4C) and compresses with a
/// 1x1 convolution.
inline Tensor bev_downsample_chain(const Tensor& x, const std::vector<ConvParams>& stages) {
  const std::size_t factor = std::size_t{1} << stages.size();
  require(x.height() % factor == 0 && x.width() % factor == 0,
          "bev_downsample_chain: " + x.shape().str() + " not divisible by 2^" +
              std::to_string(stages.size()));
  Tensor out = x;
  for (const ConvParams& stage : stages) {
    require(stage.kh == 1 && stage.kw == 1, "bev_downsample_chain: stages must be 1x1 convs");
    out = conv2d(space2depth(out), stage);
  }
  return out;
}

inline Tensor bev_downsample_chain(const Tensor& x, const CascadeParams& p) {
  return bev_downsample_chain(x, p.downsample);
}

}  // namespace pgf
