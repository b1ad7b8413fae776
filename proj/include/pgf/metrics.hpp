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

/// \file metrics.hpp
/// Center-distance average precision on the BEV plane.
///
/// Matching: detections of one class are visited in descending score order
/// (pooled over scenes); each is a true positive when the nearest unmatched
/// ground truth of that class in the same scene lies strictly closer than the
/// threshold, which then becomes matched.
///
/// AP: precision is sampled at recall r_i = 0.01 * i, i = 0..100, by linear
/// interpolation between operating points (for repeated recall values the
/// last point counts; before the first point the first precision is used,
/// beyond the last recall precision is 0). Samples with i <= 10 are dropped,
/// 0.1 is subtracted from the rest and clipped at 0, and the mean is divided
/// by 0.9.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

inline constexpr std::array<double, 4> kDistanceThresholds = {0.5, 1.0, 2.0, 4.0};
inline constexpr double kMinRecall = 0.1;
inline constexpr double kMinPrecision = 0.1;
inline constexpr std::size_t kRecallSamples = 101;

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t num_gt = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

inline double bev_distance(const Box7& a, const Box7& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

/// Greedy matching of class `class_id` pooled over scenes.
inline PrCurve match_pooled(std::span<const std::vector<Box7>> dets,
                            std::span<const std::vector<Box7>> gts, std::int32_t class_id,
                            double threshold) {
  require(dets.size() == gts.size(), "match: scene count mismatch between detections (" +
                                         std::to_string(dets.size()) + ") and ground truth (" +
                                         std::to_string(gts.size()) + ")");
  struct Ref {
    const Box7* box;
    std::size_t scene;
  };
  std::vector<Ref> order;
  PrCurve pr;
  std::vector<std::vector<std::uint8_t>> matched(gts.size());
  for (std::size_t s = 0; s < dets.size(); ++s) {
    for (const Box7& d : dets[s])
      if (d.class_id == class_id) order.push_back({&d, s});
    matched[s].assign(gts[s].size(), 0);
    for (const Box7& g : gts[s])
      if (g.class_id == class_id) ++pr.num_gt;
  }
  // Ties on score are broken by geometry so the result does not depend on scene order.
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) {
    const Box7& x = *a.box;
    const Box7& y = *b.box;
    if (x.score != y.score) return x.score > y.score;
    return std::tie(x.cx, x.cy, x.cz, x.l, x.w, x.h, x.yaw) <
           std::tie(y.cx, y.cy, y.cz, y.l, y.w, y.h, y.yaw);
  });
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const Ref& r : order) {
    const auto& scene_gts = gts[r.scene];
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = scene_gts.size();
    for (std::size_t g = 0; g < scene_gts.size(); ++g) {
      if (scene_gts[g].class_id != class_id || matched[r.scene][g]) continue;
      const double dist = bev_distance(*r.box, scene_gts[g]);
      if (dist < best) {
        best = dist;
        best_idx = g;
      }
    }
    if (best_idx < scene_gts.size() && best < threshold) {
      matched[r.scene][best_idx] = 1;
      ++tp;
    } else {
      ++fp;
    }
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    pr.recall.push_back(pr.num_gt > 0 ? static_cast<double>(tp) / static_cast<double>(pr.num_gt) : 0.0);
  }
  pr.tp = tp;
  pr.fp = fp;
  return pr;
}

/// Interpolated, truncated AP of a PR curve (see file comment).
inline double average_precision(const PrCurve& pr) {
  if (pr.num_gt == 0 || pr.recall.empty()) return 0.0;
  const auto& rec = pr.recall;
  const auto& prec = pr.precision;
  const std::size_t n = rec.size();
  const std::size_t first = static_cast<std::size_t>(std::lround(100.0 * kMinRecall)) + 1;
  double acc = 0.0;
  for (std::size_t i = first; i < kRecallSamples; ++i) {
    const double x = 0.01 * static_cast<double>(i);
    double p;
    if (x > rec[n - 1]) {
      p = 0.0;
    } else if (x < rec[0]) {
      p = prec[0];
    } else {
      // last j with rec[j] <= x
      const auto it = std::upper_bound(rec.begin(), rec.end(), x);
      const auto j = static_cast<std::size_t>(it - rec.begin()) - 1;
      if (x == rec[j] || j + 1 >= n) {
        p = prec[j];
      } else {
        const double slope = (prec[j + 1] - prec[j]) / (rec[j + 1] - rec[j]);
        p = slope * (x - rec[j]) + prec[j];
      }
    }
    // normalized per sample so a flat precision of 1 sums exactly
    acc += std::max(0.0, p - kMinPrecision) / (1.0 - kMinPrecision);
  }
  return acc / static_cast<double>(kRecallSamples - first);
}

struct ApResult {
  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  bool no_ground_truth = false;
};

inline ApResult ap_from_curve(const PrCurve& pr) {
  return {average_precision(pr), pr.tp, pr.fp, pr.num_gt - pr.tp, pr.num_gt == 0};
}

/// AP of one class at one distance threshold within a single scene.
inline ApResult match_and_ap(std::span<const Box7> dets, std::span<const Box7> gts,
                             std::int32_t class_id, double threshold) {
  const std::vector<std::vector<Box7>> d{std::vector<Box7>(dets.begin(), dets.end())};
  const std::vector<std::vector<Box7>> g{std::vector<Box7>(gts.begin(), gts.end())};
  return ap_from_curve(match_pooled(d, g, class_id, threshold));
}

struct ThresholdCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct EvalResult {
  std::size_t num_classes = 0;
  std::vector<std::array<double, kDistanceThresholds.size()>> ap;  // [class][threshold]
  std::vector<double> class_map;                                    // mean over thresholds
  std::vector<std::uint8_t> no_ground_truth;                        // per class
  std::array<ThresholdCounts, kDistanceThresholds.size()> counts{};  // summed over classes
  double map = 0.0;
};

/// Pooled AP per (class, threshold); mAP is the mean over classes of the mean
/// over the four thresholds.
inline EvalResult evaluate(std::span<const std::vector<Box7>> dets,
                           std::span<const std::vector<Box7>> gts, std::size_t num_classes) {
  require(dets.size() == gts.size(), "evaluate: " + std::to_string(dets.size()) +
                                         " detection scenes vs " + std::to_string(gts.size()) +
                                         " ground-truth scenes");
  require(num_classes >= 1, "evaluate: need at least one class");
  EvalResult r;
  r.num_classes = num_classes;
  r.ap.resize(num_classes);
  r.class_map.assign(num_classes, 0.0);
  r.no_ground_truth.assign(num_classes, 0);
  double total = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    double class_sum = 0.0;
    for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t) {
      const ApResult a = ap_from_curve(
          match_pooled(dets, gts, static_cast<std::int32_t>(k + 1), kDistanceThresholds[t]));
      r.ap[k][t] = a.ap;
      r.no_ground_truth[k] = a.no_ground_truth ? 1 : 0;
      r.counts[t].tp += a.tp;
      r.counts[t].fp += a.fp;
      r.counts[t].fn += a.fn;
      class_sum += a.ap;
    }
    r.class_map[k] = class_sum / static_cast<double>(kDistanceThresholds.size());
    total += r.class_map[k];
  }
  r.map = total / static_cast<double>(num_classes);
  return r;
}

}  // namespace pgf
