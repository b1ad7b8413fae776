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

/// \file losses.hpp
/// Center-heatmap and box-regression supervision with analytic gradients.
#pragma once

#include <cmath>

#include "pgf/tensor.hpp"

namespace pgf {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d value / d pred
};

struct FocalParams {
  double alpha = 2.0;
  double beta = 4.0;
};

/// Penalty-reduced focal loss over every heatmap location. Cells whose target
/// equals exactly 1 are peaks; the sum is divided by max(1, #peaks).
inline LossResult focal_loss(const Tensor& pred, const Tensor& target, FocalParams fp = {}) {
  require_same_shape(pred, target, "focal_loss");
  const auto p = pred.data();
  const auto t = target.data();
  std::size_t num_pos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] > 0.0 && p[i] < 1.0,
            "focal_loss: prediction " + std::to_string(p[i]) + " outside (0, 1)");
    require(t[i] >= 0.0 && t[i] <= 1.0, "focal_loss: target outside [0, 1]");
    if (t[i] == 1.0) ++num_pos;
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, num_pos));
  LossResult r{0.0, Tensor(pred.shape())};
  auto g = r.grad.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    const double log_p = std::log(pi);
    const double log_q = std::log1p(-pi);
    if (t[i] == 1.0) {
      const double q_a = std::pow(1.0 - pi, fp.alpha);
      acc += q_a * log_p;
      g[i] = -(-fp.alpha * std::pow(1.0 - pi, fp.alpha - 1.0) * log_p + q_a / pi) / norm;
    } else {
      const double w = std::pow(1.0 - t[i], fp.beta);
      const double p_a = std::pow(pi, fp.alpha);
      acc += w * p_a * log_q;
      g[i] = -w * (fp.alpha * std::pow(pi, fp.alpha - 1.0) * log_q - p_a / (1.0 - pi)) / norm;
    }
  }
  r.value = -acc / norm;
  return r;
}

/// Smooth L1 over the cells where mask(0, y, x) != 0, summed over channels and
/// divided by the number of masked cells. An empty mask yields zero.
inline LossResult smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "smooth_l1");
  require(mask.shape() == Shape{1, pred.height(), pred.width()},
          "smooth_l1: mask shape " + mask.shape().str() + " does not match " +
              pred.shape().str());
  LossResult r{0.0, Tensor(pred.shape())};
  const auto m = mask.channel(0);
  std::size_t count = 0;
  for (double v : m)
    if (v != 0.0) ++count;
  if (count == 0) return r;
  const double norm = static_cast<double>(count);
  double acc = 0.0;
  for (std::size_t c = 0; c < pred.channels(); ++c) {
    const auto pc = pred.channel(c);
    const auto tc = target.channel(c);
    auto gc = r.grad.channel(c);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0.0) continue;
      const double d = pc[i] - tc[i];
      const double ad = std::abs(d);
      if (ad < 1.0) {
        acc += 0.5 * d * d;
        gc[i] = d / norm;
      } else {
        acc += ad - 0.5;
        gc[i] = (d > 0.0 ? 1.0 : -1.0) / norm;
      }
    }
  }
  r.value = acc / norm;
  return r;
}

}  // namespace pgf
