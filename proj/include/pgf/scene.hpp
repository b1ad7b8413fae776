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

/// \file scene.hpp
/// Point clouds with panoptic labels and 7-DoF boxes, and a seeded synthetic
/// scene generator standing in for real LiDAR frames.
///
/// Generated coordinates are quantized to multiples of 2^-10 m (and yaw to
/// 2^-16 rad). Sums and differences of such values are exact in double
/// precision, so box-center offsets reproduce centers bit-exactly and scenes
/// survive the 32-bit file format without loss.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgf/rng.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  double range() const { return std::sqrt(x * x + y * y + z * z); }
  bool operator==(const Point&) const = default;
};

/// class_id 0 is background; instance_id 0 means "no instance".
struct PointLabel {
  std::int32_t class_id = 0;
  std::int32_t instance_id = 0;
  bool operator==(const PointLabel&) const = default;
};

struct Box7 {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;  // [-pi, pi)
  std::int32_t class_id = 1;
  double score = 1.0;

  bool operator==(const Box7&) const = default;

  /// True when p lies inside the box grown by `margin` on every side.
  bool contains(const Point& p, double margin = 0.0) const {
    const double dx = p.x - cx;
    const double dy = p.y - cy;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= 0.5 * l + margin && std::abs(ly) <= 0.5 * w + margin &&
           std::abs(p.z - cz) <= 0.5 * h + margin;
  }
};

/// Instance i (1-based) owns boxes[i - 1].
struct Scene {
  std::vector<Point> points;
  std::vector<PointLabel> labels;
  std::vector<Box7> boxes;
  std::int32_t num_classes = 3;
  std::uint64_t seed = 0;

  bool operator==(const Scene&) const = default;
};

struct ClassSpec {
  std::string name;
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double size_jitter = 0.1;     // relative, uniform +/-
  int count = 0;                // objects per scene
  double surface_density = 20;  // shell points per square meter
  int interior_points = 10;
};

struct SceneConfig {
  std::vector<ClassSpec> classes = {
      {"car", 4.2, 1.8, 1.6, 0.1, 3, 6.0, 40},
      {"pedestrian", 0.7, 0.7, 1.75, 0.1, 4, 40.0, 15},
      {"cone", 0.45, 0.45, 0.8, 0.1, 4, 60.0, 10},
  };
  double extent = 22.0;            // object centers in [-extent, extent]^2
  double min_object_range = 4.0;   // keep random objects off the sensor
  double placement_margin = 0.5;   // BEV clearance between objects
  int max_retries = 500;
  double ground_z = -1.7;
  double ground_extent = 25.5;
  int ground_points = 4000;
  double ground_noise = 0.02;
  int clutter_clusters = 6;
  int clutter_points = 40;
  double min_range = 0.05;         // points closer than this are discarded
  std::vector<Box7> fixed_objects; // placed before random ones, in order

  int num_classes() const { return static_cast<int>(classes.size()); }
};

inline constexpr double kCoordQuantum = 1.0 / 1024.0;
inline constexpr double kYawQuantum = 1.0 / 65536.0;

inline double quantize(double v, double quantum = kCoordQuantum) {
  return std::round(v / quantum) * quantum;
}

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (a >= -std::numbers::pi && a < std::numbers::pi) return a;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  const double out = a - std::numbers::pi;
  return out >= std::numbers::pi ? -std::numbers::pi : out;
}

namespace detail {

inline double bev_radius(const Box7& b) { return 0.5 * std::hypot(b.l, b.w); }

inline bool overlaps_any(const Box7& b, const std::vector<Box7>& placed, double margin) {
  for (const Box7& o : placed)
    if (std::hypot(b.cx - o.cx, b.cy - o.cy) < bev_radius(b) + bev_radius(o) + margin) return true;
  return false;
}

inline Point box_to_world(const Box7& b, double lx, double ly, double lz, double intensity) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  return {quantize(b.cx + c * lx - s * ly), quantize(b.cy + s * lx + c * ly), quantize(b.cz + lz),
          quantize(intensity)};
}

inline void sample_object(const Box7& b, const ClassSpec& spec, std::int32_t instance, Rng& rng,
                          double min_range, Scene& scene) {
  const double areas[3] = {b.l * b.w, b.l * b.h, b.w * b.h};  // faces normal to z, y, x
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  const int shell = std::max(1, static_cast<int>(std::lround(total * spec.surface_density)));
  const auto emit = [&](double lx, double ly, double lz) {
    const Point p = box_to_world(b, lx, ly, lz, uniform(rng, 0.3, 1.0));
    if (p.range() < min_range) return;
    scene.points.push_back(p);
    scene.labels.push_back({b.class_id, instance});
  };
  for (int i = 0; i < shell; ++i) {
    const double pick = uniform(rng, 0.0, areas[0] + areas[1] + areas[2]);
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -0.5 : 0.5;
    double lx = uniform(rng, -0.5, 0.5) * b.l;
    double ly = uniform(rng, -0.5, 0.5) * b.w;
    double lz = uniform(rng, -0.5, 0.5) * b.h;
    if (pick < areas[0]) {
      lz = side * b.h;
    } else if (pick < areas[0] + areas[1]) {
      ly = side * b.w;
    } else {
      lx = side * b.l;
    }
    emit(lx, ly, lz);
  }
  for (int i = 0; i < spec.interior_points; ++i)
    emit(uniform(rng, -0.5, 0.5) * b.l, uniform(rng, -0.5, 0.5) * b.w,
         uniform(rng, -0.5, 0.5) * b.h);
}

}  // namespace detail

/// Deterministic in (config, seed). Throws std::runtime_error when random
/// placement fails after config.max_retries attempts for some object.
inline Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  const int k = config.num_classes();
  require(k >= 1 && k <= 10, "generate_scene: class count must be in [1, 10], got " +
                                 std::to_string(k));
  Rng rng(mix_seed(seed, "scene"));
  Scene scene;
  scene.seed = seed;
  scene.num_classes = k;

  for (Box7 b : config.fixed_objects) {
    require(b.class_id >= 1 && b.class_id <= k, "generate_scene: fixed object class out of range");
    require(b.l > 0 && b.w > 0 && b.h > 0, "generate_scene: fixed object needs positive size");
    b.yaw = wrap_angle(b.yaw);
    b.score = 1.0;
    scene.boxes.push_back(b);
  }
  for (int c = 0; c < k; ++c) {
    const ClassSpec& spec = config.classes[static_cast<std::size_t>(c)];
    for (int n = 0; n < spec.count; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
        const double jl = 1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter);
        const double jw = 1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter);
        const double jh = 1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter);
        Box7 b;
        b.l = quantize(spec.length * jl);
        b.w = quantize(spec.width * jw);
        b.h = quantize(spec.height * jh);
        b.cx = quantize(uniform(rng, -config.extent, config.extent));
        b.cy = quantize(uniform(rng, -config.extent, config.extent));
        b.cz = quantize(config.ground_z + 0.5 * b.h);
        b.yaw = wrap_angle(quantize(uniform(rng, -std::numbers::pi, std::numbers::pi), kYawQuantum));
        b.class_id = c + 1;
        if (std::hypot(b.cx, b.cy) < config.min_object_range) continue;
        if (detail::overlaps_any(b, scene.boxes, config.placement_margin)) continue;
        scene.boxes.push_back(b);
        placed = true;
      }
      if (!placed)
        throw std::runtime_error("generate_scene: could not place a '" + spec.name +
                                 "' object after " + std::to_string(config.max_retries) +
                                 " attempts");
    }
  }

  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const Box7& b = scene.boxes[i];
    const ClassSpec& spec = config.classes[static_cast<std::size_t>(b.class_id - 1)];
    detail::sample_object(b, spec, static_cast<std::int32_t>(i + 1), rng, config.min_range, scene);
  }

  for (int i = 0; i < config.ground_points; ++i) {
    const Point p{quantize(uniform(rng, -config.ground_extent, config.ground_extent)),
                  quantize(uniform(rng, -config.ground_extent, config.ground_extent)),
                  quantize(config.ground_z + normal(rng, 0.0, config.ground_noise)),
                  quantize(uniform(rng, 0.0, 0.3))};
    if (p.range() < config.min_range) continue;
    scene.points.push_back(p);
    scene.labels.push_back({0, 0});
  }

  // Clutter: thin vertical clusters (poles, vegetation) clear of every object.
  for (int cl = 0; cl < config.clutter_clusters; ++cl) {
    Box7 probe;
    probe.l = probe.w = 0.6;
    bool ok = false;
    for (int attempt = 0; attempt < config.max_retries && !ok; ++attempt) {
      probe.cx = uniform(rng, -config.extent, config.extent);
      probe.cy = uniform(rng, -config.extent, config.extent);
      ok = std::hypot(probe.cx, probe.cy) > config.min_object_range &&
           !detail::overlaps_any(probe, scene.boxes, config.placement_margin);
    }
    if (!ok) continue;
    for (int i = 0; i < config.clutter_points; ++i) {
      const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double r = uniform(rng, 0.0, 0.3);
      const Point p{quantize(probe.cx + r * std::cos(a)), quantize(probe.cy + r * std::sin(a)),
                    quantize(config.ground_z + uniform(rng, 0.0, 3.0)),
                    quantize(uniform(rng, 0.0, 0.6))};
      if (p.range() < config.min_range) continue;
      scene.points.push_back(p);
      scene.labels.push_back({0, 0});
    }
  }
  return scene;
}

/// Checks the label/box consistency invariants; returns a description of the
/// first violation, or nothing when the scene is consistent.
inline std::optional<std::string> validate_scene(const Scene& s, double margin = 0.01) {
  if (s.points.size() != s.labels.size()) return "points/labels length mismatch";
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const Point& p = s.points[i];
    const PointLabel& lab = s.labels[i];
    if (!(p.range() > 0.0)) return "point " + std::to_string(i) + " at the origin";
    if (lab.class_id < 0 || lab.class_id > s.num_classes)
      return "point " + std::to_string(i) + " has class out of range";
    const bool fg = lab.class_id > 0;
    if (fg != (lab.instance_id > 0))
      return "point " + std::to_string(i) + " violates instance <=> foreground";
    if (!fg) continue;
    const auto inst = static_cast<std::size_t>(lab.instance_id);
    if (inst > s.boxes.size()) return "instance " + std::to_string(inst) + " has no box";
    const Box7& b = s.boxes[inst - 1];
    if (b.class_id != lab.class_id) return "instance class disagrees with box class";
    if (!b.contains(p, margin)) return "point " + std::to_string(i) + " outside its box";
  }
  for (const Box7& b : s.boxes)
    if (!(b.l > 0 && b.w > 0 && b.h > 0)) return "box with non-positive size";
  return std::nullopt;
}

}  // namespace pgf
