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

/// \file pipeline.hpp
/// End-to-end runs: configuration, the per-scene data path with the three
/// guidance toggles, evaluation, and the four-row ablation.
///
/// The detector is untrained, so the head's heatmap is a scaffold: the ground
/// truth Gaussian targets plus seeded N(0, sigma^2) noise, scaled by a
/// saliency readout of the backbone output (per-cell feature L2 norm divided
/// by its mean over non-zero cells, raised to a configurable power), then
/// squashed as sigmoid(sharpness * (z - 0.5)). Guidance reaches the score only
/// through that readout. Regression channels
/// hold the exact encoding at ground-truth center cells and zeros elsewhere.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pgf/detection.hpp"
#include "pgf/fusion.hpp"
#include "pgf/guidance.hpp"
#include "pgf/io.hpp"
#include "pgf/losses.hpp"
#include "pgf/metrics.hpp"
#include "pgf/panoptic.hpp"
#include "pgf/projection.hpp"
#include "pgf/scene.hpp"

namespace pgf {

// ---------------------------------------------------------------------------
// Configuration

struct Toggles {
  bool mba = false;
  bool cfa = false;
  bool cdh = false;

  bool operator==(const Toggles&) const = default;

  std::string str() const {
    std::string s;
    for (auto [on, name] : {std::pair{mba, "mba"}, std::pair{cfa, "cfa"}, std::pair{cdh, "cdh"}}) {
      if (!on) continue;
      if (!s.empty()) s += ',';
      s += name;
    }
    return s.empty() ? "none" : s;
  }

  /// "mba,cfa,cdh" in any order and subset; "" or "none" turns all off.
  static Toggles parse(const std::string& text) {
    Toggles t;
    if (text.empty() || text == "none") return t;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find(',', start), text.size());
      const std::string tok = text.substr(start, end - start);
      start = end + 1;
      if (tok == "mba") t.mba = true;
      else if (tok == "cfa") t.cfa = true;
      else if (tok == "cdh") t.cdh = true;
      else throw std::invalid_argument("unknown toggle '" + tok + "' (expected mba, cfa, cdh)");
    }
    return t;
  }
};

/// The four ablation rows: none, +MBA, +MBA+CFA, +MBA+CFA+CDH.
inline const std::array<Toggles, 4> kAblationRows = {
    Toggles{false, false, false}, Toggles{true, false, false}, Toggles{true, true, false},
    Toggles{true, true, true}};

struct HeadConfig {
  double heatmap_sigma = 0.3;    // additive target noise
  double saliency_exponent = 0.5;  // power applied to the backbone readout
  double sharpness = 4.0;        // sigmoid slope
  std::size_t k_max = 100;
  double score_min = 0.05;
  TargetConfig targets;
  FocalParams focal;
};

struct ModelConfig {
  EncoderConfig encoder;  // rv spec is taken from RunConfig::rv
  std::size_t cascade_up1 = 16;
  std::size_t cascade_up2 = 8;
  std::size_t cascade_out = 16;
  std::size_t cbam_ratio = 4;
  std::size_t cbam_kernel = 7;
  std::size_t downsample_stages = 1;
  std::uint64_t cascade_seed = 11;
  std::uint64_t guidance_seed = 13;
  std::uint64_t backbone_seed = 17;
  std::size_t backbone_width = 16;
  std::size_t class_branch_channels = 8;
};

/// Defaults are the synth-v1 benchmark.
struct RunConfig {
  SceneConfig scene;
  NoiseConfig noise{0.05, 0.2, 0.05};
  RvSpec rv;
  BevSpec grid;
  ModelConfig model;
  HeadConfig head;
  Toggles toggles{true, true, true};
  std::uint64_t seed = 0;
  std::size_t scenes = 64;
  std::vector<std::uint64_t> ablation_seeds = {0, 1, 2, 3, 4};
  std::size_t workers = 1;   // runtime only, not part of results
  std::string out_dir;       // runtime only
  bool dump_heatmaps = false;

  std::size_t num_classes() const { return scene.classes.size(); }
  BevSpec fine_grid() const { return grid.refined(std::size_t{1} << model.downsample_stages); }
  CascadeConfig cascade_config() const {
    CascadeConfig c;
    c.r1_channels = model.encoder.r1_channels;
    c.r2_channels = model.encoder.r2_channels;
    c.r3_channels = kR3Channels;
    c.up1_channels = model.cascade_up1;
    c.up2_channels = model.cascade_up2;
    c.out_channels = model.cascade_out;
    c.cbam_ratio = model.cbam_ratio;
    c.cbam_kernel = model.cbam_kernel;
    c.downsample_stages = model.downsample_stages;
    c.seed = model.cascade_seed;
    return c;
  }
};

namespace detail {

// Rounded to 1e-9 degrees so whole-degree settings print as such.
inline double to_degrees(double rad) { return std::round(rad * 180.0 / std::numbers::pi * 1e9) / 1e9; }

inline void collect(std::vector<std::string>& errors, const std::function<void()>& check) {
  try {
    check();
  } catch (const std::exception& e) {
    errors.emplace_back(e.what());
  }
}

}  // namespace detail

/// Every problem found, in a fixed order; empty means valid.
inline std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> e;
  detail::collect(e, [&] { c.noise.validate(); });
  detail::collect(e, [&] { c.rv.validate(); });
  detail::collect(e, [&] { c.grid.validate(); });
  if (c.rv.height % 4 != 0 || c.rv.width % 4 != 0)
    e.push_back("rv: height and width must be divisible by 4");
  if (c.scene.classes.empty()) e.push_back("scene.classes: at least one class is required");
  for (std::size_t k = 0; k < c.scene.classes.size(); ++k) {
    const ClassSpec& s = c.scene.classes[k];
    const std::string p = "scene.classes[" + std::to_string(k) + "]";
    if (!(s.length > 0 && s.width > 0 && s.height > 0)) e.push_back(p + ": dimensions must be positive");
    if (!(s.size_jitter >= 0 && s.size_jitter < 1)) e.push_back(p + ": size_jitter must be in [0, 1)");
    if (s.count < 0) e.push_back(p + ": count must be >= 0");
    if (!(s.surface_density >= 0)) e.push_back(p + ": surface_density must be >= 0");
    if (s.interior_points < 0) e.push_back(p + ": interior_points must be >= 0");
  }
  if (!(c.scene.extent > 0)) e.push_back("scene.extent must be positive");
  if (c.scene.extent >= std::min({-c.grid.x_min, c.grid.x_max, -c.grid.y_min, c.grid.y_max}))
    e.push_back("scene.extent must lie strictly inside the detection grid");
  if (c.scene.ground_points < 0 || c.scene.clutter_clusters < 0 || c.scene.clutter_points < 0)
    e.push_back("scene: point counts must be >= 0");
  if (c.scene.max_retries < 1) e.push_back("scene.max_retries must be >= 1");
  if (c.scenes < 1) e.push_back("scenes must be >= 1");
  if (c.workers < 1) e.push_back("workers must be >= 1");
  if (c.ablation_seeds.size() < 3) e.push_back("ablation_seeds: need at least 3 seeds");
  const ModelConfig& m = c.model;
  if (m.encoder.r1_channels < 1 || m.encoder.r2_channels < 1 || m.cascade_up1 < 1 ||
      m.cascade_up2 < 1 || m.cascade_out < 1 || m.backbone_width < 1 || m.class_branch_channels < 1)
    e.push_back("model: channel counts must be >= 1");
  if (m.cbam_ratio < 1) e.push_back("model.cbam_ratio must be >= 1");
  if (m.cbam_kernel % 2 == 0) e.push_back("model.cbam_kernel must be odd");
  if (m.downsample_stages > 4) e.push_back("model.downsample_stages must be <= 4");
  const HeadConfig& h = c.head;
  if (!(h.heatmap_sigma >= 0)) e.push_back("head.heatmap_sigma must be >= 0");
  if (!(h.sharpness > 0)) e.push_back("head.sharpness must be positive");
  if (!(h.saliency_exponent >= 0 && std::isfinite(h.saliency_exponent)))
    e.push_back("head.saliency_exponent must be finite and >= 0");
  if (h.k_max < 1) e.push_back("head.k_max must be >= 1");
  if (!(h.score_min > 0 && h.score_min < 1)) e.push_back("head.score_min must be in (0, 1)");
  if (!(h.targets.min_overlap > 0 && h.targets.min_overlap < 1))
    e.push_back("head.min_overlap must be in (0, 1)");
  if (h.targets.min_radius < 0) e.push_back("head.min_radius must be >= 0");
  if (c.dump_heatmaps && c.out_dir.empty()) e.push_back("dump_heatmaps requires an output directory");
  return e;
}

// ---------------------------------------------------------------------------
// JSON config

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  bool object(const Json& j, const std::string& path) {
    if (j.is_object()) return true;
    errors.push_back(path + ": expected an object");
    return false;
  }

  void keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; }))
        errors.push_back(join(path, it.key()) + ": unknown key");
    }
  }

  void get(const Json& j, const std::string& path, const char* key, double& out) {
    if (!j.contains(key)) return;
    if (j[key].is_number()) out = j[key].get<double>();
    else errors.push_back(join(path, key) + ": expected a number");
  }
  void get(const Json& j, const std::string& path, const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (j[key].is_boolean()) out = j[key].get<bool>();
    else errors.push_back(join(path, key) + ": expected true or false");
  }
  void get(const Json& j, const std::string& path, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    if (j[key].is_string()) out = j[key].get<std::string>();
    else errors.push_back(join(path, key) + ": expected a string");
  }
  void get(const Json& j, const std::string& path, const char* key, std::uint64_t& out) {
    if (!j.contains(key)) return;
    if (j[key].is_number_unsigned()) out = j[key].get<std::uint64_t>();
    else errors.push_back(join(path, key) + ": expected a non-negative integer");
  }
  void get(const Json& j, const std::string& path, const char* key, int& out) {
    if (!j.contains(key)) return;
    if (j[key].is_number_integer()) out = j[key].get<int>();
    else errors.push_back(join(path, key) + ": expected an integer");
  }
  void get_size(const Json& j, const std::string& path, const char* key, std::size_t& out) {
    std::uint64_t v = out;
    get(j, path, key, v);
    out = static_cast<std::size_t>(v);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
};

}  // namespace detail

struct ParsedConfig {
  RunConfig config;
  std::vector<std::string> errors;
};

/// Reads a config document; absent keys keep their defaults. Unknown keys and
/// type errors are reported, then validate_config runs on the result.
inline ParsedConfig parse_config(const Json& j) {
  ParsedConfig out;
  RunConfig& c = out.config;
  detail::ConfigReader r;
  if (!r.object(j, "config")) {
    out.errors = r.errors;
    return out;
  }
  r.keys(j, "", {"seed", "scenes", "workers", "ablation_seeds", "out", "dump_heatmaps", "toggles",
                 "noise", "rv", "grid", "model", "head", "scene"});
  r.get(j, "", "seed", c.seed);
  r.get_size(j, "", "scenes", c.scenes);
  r.get_size(j, "", "workers", c.workers);
  r.get(j, "", "out", c.out_dir);
  r.get(j, "", "dump_heatmaps", c.dump_heatmaps);
  if (j.contains("ablation_seeds")) {
    const Json& a = j["ablation_seeds"];
    if (!a.is_array() || !std::all_of(a.begin(), a.end(), [](const Json& v) { return v.is_number_unsigned(); })) {
      r.errors.push_back("ablation_seeds: expected an array of non-negative integers");
    } else {
      c.ablation_seeds = a.get<std::vector<std::uint64_t>>();
    }
  }
  if (j.contains("toggles")) {
    const Json& t = j["toggles"];
    if (t.is_string()) {
      try {
        c.toggles = Toggles::parse(t.get<std::string>());
      } catch (const std::exception& e) {
        r.errors.push_back(std::string("toggles: ") + e.what());
      }
    } else if (r.object(t, "toggles")) {
      r.keys(t, "toggles", {"mba", "cfa", "cdh"});
      r.get(t, "toggles", "mba", c.toggles.mba);
      r.get(t, "toggles", "cfa", c.toggles.cfa);
      r.get(t, "toggles", "cdh", c.toggles.cdh);
    }
  }
  if (j.contains("noise") && r.object(j["noise"], "noise")) {
    const Json& n = j["noise"];
    r.keys(n, "noise", {"label_flip", "offset_sigma", "mask_error"});
    r.get(n, "noise", "label_flip", c.noise.label_flip);
    r.get(n, "noise", "offset_sigma", c.noise.offset_sigma);
    r.get(n, "noise", "mask_error", c.noise.mask_error);
  }
  if (j.contains("rv") && r.object(j["rv"], "rv")) {
    const Json& v = j["rv"];
    r.keys(v, "rv", {"height", "width", "incl_min_deg", "incl_max_deg"});
    r.get_size(v, "rv", "height", c.rv.height);
    r.get_size(v, "rv", "width", c.rv.width);
    double lo = c.rv.incl_min * 180.0 / std::numbers::pi;
    double hi = c.rv.incl_max * 180.0 / std::numbers::pi;
    r.get(v, "rv", "incl_min_deg", lo);
    r.get(v, "rv", "incl_max_deg", hi);
    if (v.contains("incl_min_deg")) c.rv.incl_min = lo * std::numbers::pi / 180.0;
    if (v.contains("incl_max_deg")) c.rv.incl_max = hi * std::numbers::pi / 180.0;
  }
  if (j.contains("grid") && r.object(j["grid"], "grid")) {
    const Json& g = j["grid"];
    r.keys(g, "grid", {"x_min", "x_max", "y_min", "y_max", "cell"});
    r.get(g, "grid", "x_min", c.grid.x_min);
    r.get(g, "grid", "x_max", c.grid.x_max);
    r.get(g, "grid", "y_min", c.grid.y_min);
    r.get(g, "grid", "y_max", c.grid.y_max);
    r.get(g, "grid", "cell", c.grid.cell);
  }
  if (j.contains("model") && r.object(j["model"], "model")) {
    const Json& m = j["model"];
    ModelConfig& mc = c.model;
    r.keys(m, "model", {"encoder_seed", "r2_channels", "r1_channels", "xyz_scale", "cascade_up1",
                        "cascade_up2", "cascade_out", "cbam_ratio", "cbam_kernel",
                        "downsample_stages", "cascade_seed", "guidance_seed", "backbone_seed",
                        "backbone_width", "class_branch_channels"});
    r.get(m, "model", "encoder_seed", mc.encoder.seed);
    r.get_size(m, "model", "r2_channels", mc.encoder.r2_channels);
    r.get_size(m, "model", "r1_channels", mc.encoder.r1_channels);
    r.get(m, "model", "xyz_scale", mc.encoder.xyz_scale);
    r.get_size(m, "model", "cascade_up1", mc.cascade_up1);
    r.get_size(m, "model", "cascade_up2", mc.cascade_up2);
    r.get_size(m, "model", "cascade_out", mc.cascade_out);
    r.get_size(m, "model", "cbam_ratio", mc.cbam_ratio);
    r.get_size(m, "model", "cbam_kernel", mc.cbam_kernel);
    r.get_size(m, "model", "downsample_stages", mc.downsample_stages);
    r.get(m, "model", "cascade_seed", mc.cascade_seed);
    r.get(m, "model", "guidance_seed", mc.guidance_seed);
    r.get(m, "model", "backbone_seed", mc.backbone_seed);
    r.get_size(m, "model", "backbone_width", mc.backbone_width);
    r.get_size(m, "model", "class_branch_channels", mc.class_branch_channels);
  }
  if (j.contains("head") && r.object(j["head"], "head")) {
    const Json& h = j["head"];
    HeadConfig& hc = c.head;
    r.keys(h, "head", {"heatmap_sigma", "saliency_exponent", "sharpness", "k_max", "score_min",
                       "min_overlap", "min_radius", "focal_alpha", "focal_beta"});
    r.get(h, "head", "heatmap_sigma", hc.heatmap_sigma);
    r.get(h, "head", "saliency_exponent", hc.saliency_exponent);
    r.get(h, "head", "sharpness", hc.sharpness);
    r.get_size(h, "head", "k_max", hc.k_max);
    r.get(h, "head", "score_min", hc.score_min);
    r.get(h, "head", "min_overlap", hc.targets.min_overlap);
    r.get(h, "head", "min_radius", hc.targets.min_radius);
    r.get(h, "head", "focal_alpha", hc.focal.alpha);
    r.get(h, "head", "focal_beta", hc.focal.beta);
  }
  if (j.contains("scene") && r.object(j["scene"], "scene")) {
    const Json& s = j["scene"];
    SceneConfig& sc = c.scene;
    r.keys(s, "scene", {"classes", "extent", "min_object_range", "placement_margin", "max_retries",
                        "ground_z", "ground_extent", "ground_points", "ground_noise",
                        "clutter_clusters", "clutter_points", "min_range"});
    r.get(s, "scene", "extent", sc.extent);
    r.get(s, "scene", "min_object_range", sc.min_object_range);
    r.get(s, "scene", "placement_margin", sc.placement_margin);
    r.get(s, "scene", "max_retries", sc.max_retries);
    r.get(s, "scene", "ground_z", sc.ground_z);
    r.get(s, "scene", "ground_extent", sc.ground_extent);
    r.get(s, "scene", "ground_points", sc.ground_points);
    r.get(s, "scene", "ground_noise", sc.ground_noise);
    r.get(s, "scene", "clutter_clusters", sc.clutter_clusters);
    r.get(s, "scene", "clutter_points", sc.clutter_points);
    r.get(s, "scene", "min_range", sc.min_range);
    if (s.contains("classes")) {
      const Json& cl = s["classes"];
      if (!cl.is_array()) {
        r.errors.push_back("scene.classes: expected an array");
      } else {
        sc.classes.clear();
        for (std::size_t k = 0; k < cl.size(); ++k) {
          const std::string p = "scene.classes[" + std::to_string(k) + "]";
          ClassSpec spec;
          if (r.object(cl[k], p)) {
            r.keys(cl[k], p, {"name", "length", "width", "height", "size_jitter", "count",
                              "surface_density", "interior_points"});
            r.get(cl[k], p, "name", spec.name);
            r.get(cl[k], p, "length", spec.length);
            r.get(cl[k], p, "width", spec.width);
            r.get(cl[k], p, "height", spec.height);
            r.get(cl[k], p, "size_jitter", spec.size_jitter);
            r.get(cl[k], p, "count", spec.count);
            r.get(cl[k], p, "surface_density", spec.surface_density);
            r.get(cl[k], p, "interior_points", spec.interior_points);
          }
          sc.classes.push_back(spec);
        }
      }
    }
  }
  out.errors = r.errors;
  for (auto& e : validate_config(c)) out.errors.push_back(std::move(e));
  return out;
}

/// Result-relevant settings only (no workers, output paths or timestamps).
inline Json config_to_json(const RunConfig& c) {
  Json classes = Json::array();
  for (const ClassSpec& s : c.scene.classes)
    classes.push_back(Json{{"name", s.name},
                           {"length", s.length},
                           {"width", s.width},
                           {"height", s.height},
                           {"size_jitter", s.size_jitter},
                           {"count", s.count},
                           {"surface_density", s.surface_density},
                           {"interior_points", s.interior_points}});
  const ModelConfig& m = c.model;
  const HeadConfig& h = c.head;
  return Json{
      {"seed", c.seed},
      {"scenes", c.scenes},
      {"ablation_seeds", c.ablation_seeds},
      {"toggles", Json{{"mba", c.toggles.mba}, {"cfa", c.toggles.cfa}, {"cdh", c.toggles.cdh}}},
      {"noise", Json{{"label_flip", c.noise.label_flip},
                     {"offset_sigma", c.noise.offset_sigma},
                     {"mask_error", c.noise.mask_error}}},
      {"rv", Json{{"height", c.rv.height},
                  {"width", c.rv.width},
                  {"incl_min_deg", detail::to_degrees(c.rv.incl_min)},
                  {"incl_max_deg", detail::to_degrees(c.rv.incl_max)}}},
      {"grid", Json{{"x_min", c.grid.x_min},
                    {"x_max", c.grid.x_max},
                    {"y_min", c.grid.y_min},
                    {"y_max", c.grid.y_max},
                    {"cell", c.grid.cell}}},
      {"model", Json{{"encoder_seed", m.encoder.seed},
                     {"r2_channels", m.encoder.r2_channels},
                     {"r1_channels", m.encoder.r1_channels},
                     {"xyz_scale", m.encoder.xyz_scale},
                     {"cascade_up1", m.cascade_up1},
                     {"cascade_up2", m.cascade_up2},
                     {"cascade_out", m.cascade_out},
                     {"cbam_ratio", m.cbam_ratio},
                     {"cbam_kernel", m.cbam_kernel},
                     {"downsample_stages", m.downsample_stages},
                     {"cascade_seed", m.cascade_seed},
                     {"guidance_seed", m.guidance_seed},
                     {"backbone_seed", m.backbone_seed},
                     {"backbone_width", m.backbone_width},
                     {"class_branch_channels", m.class_branch_channels}}},
      {"head", Json{{"heatmap_sigma", h.heatmap_sigma},
                    {"saliency_exponent", h.saliency_exponent},
                    {"sharpness", h.sharpness},
                    {"k_max", h.k_max},
                    {"score_min", h.score_min},
                    {"min_overlap", h.targets.min_overlap},
                    {"min_radius", h.targets.min_radius},
                    {"focal_alpha", h.focal.alpha},
                    {"focal_beta", h.focal.beta}}},
      {"scene", Json{{"classes", classes},
                     {"extent", c.scene.extent},
                     {"min_object_range", c.scene.min_object_range},
                     {"placement_margin", c.scene.placement_margin},
                     {"max_retries", c.scene.max_retries},
                     {"ground_z", c.scene.ground_z},
                     {"ground_extent", c.scene.ground_extent},
                     {"ground_points", c.scene.ground_points},
                     {"ground_noise", c.scene.ground_noise},
                     {"clutter_clusters", c.scene.clutter_clusters},
                     {"clutter_points", c.scene.clutter_points},
                     {"min_range", c.scene.min_range}}}};
}

// ---------------------------------------------------------------------------
// Model

/// All fixed-seed parameters of the data path.
struct Model {
  Encoder encoder;
  CascadeParams cascade;
  ConvParams stem;  // pillars -> backbone width, used when MBA is off
  RvBevAttnParams attention;
  ClassAttnParams class_attention;
  BackboneParams backbone;

  explicit Model(const RunConfig& c)
      : encoder([&] {
          EncoderConfig e = c.model.encoder;
          e.rv = c.rv;
          return e;
        }()) {
    const CascadeConfig cc = c.cascade_config();
    cascade = CascadeParams::random(cc, cc.out_channels);
    const std::size_t rv_channels = cc.out_channels << cc.downsample_stages;
    const std::size_t width = c.model.backbone_width;
    stem = ConvParams::same(width, 4, 1);
    Rng rng(mix_seed(c.model.guidance_seed, "stem"));
    init_he(stem, rng);
    attention = RvBevAttnParams::random(4, rv_channels, width, c.model.guidance_seed);
    class_attention =
        ClassAttnParams::random(width, c.num_classes(), c.model.class_branch_channels, c.model.guidance_seed);
    backbone = BackboneParams::random(width, width, c.model.backbone_seed);
  }
};

// ---------------------------------------------------------------------------
// Per-scene data path

inline std::uint64_t scene_seed(std::uint64_t run_seed, std::size_t index) {
  return mix_seed(mix_seed(run_seed, "scene"), index);
}

/// Everything a scene contributes independent of the toggles being evaluated.
struct SceneContext {
  std::uint64_t seed = 0;
  Scene scene;
  PanopticEstimate panoptic;
  Tensor pillars;                        // (4, rows, cols)
  std::optional<Tensor> rv_bev;          // MBA input at detection resolution
  std::vector<Tensor> class_probs;       // CFA input, K x (1, rows, cols)
  std::optional<DensityHeatmap> density; // CDH input
  TargetMaps targets;
  RegressionTargets regression;
  Tensor heat_noise;                     // (K, rows, cols), N(0, 1)
};

/// Per-class range-view probability maps: each valid pixel carries the class
/// probabilities of its winning point.
inline Tensor rv_class_probs(const PanopticEstimate& est) {
  const RangeImage& img = est.range_image;
  const std::size_t k = est.num_classes;
  Tensor out(k, img.spec.height, img.spec.width);
  for (std::size_t r = 0; r < img.spec.height; ++r)
    for (std::size_t c = 0; c < img.spec.width; ++c) {
      const auto pt = img.point_of_pixel[r * img.spec.width + c];
      if (!pt) continue;
      const auto probs = est.probs(*pt);
      for (std::size_t cls = 0; cls < k; ++cls) out(cls, r, c) = probs[cls + 1];
    }
  return out;
}

inline SceneContext prepare_scene(const RunConfig& c, const Model& model, std::uint64_t run_seed,
                                  std::size_t index, Toggles need) {
  SceneContext ctx;
  ctx.seed = scene_seed(run_seed, index);
  ctx.scene = generate_scene(c.scene, ctx.seed);
  ctx.panoptic = oracle_panoptic(ctx.scene, c.noise, mix_seed(ctx.seed, "panoptic"), model.encoder);
  ctx.pillars = pillarize(ctx.scene.points, c.grid);
  const BevSpec fine = c.fine_grid();
  const std::size_t factor = std::size_t{1} << c.model.downsample_stages;
  if (need.mba) {
    const RvFeatures& f = ctx.panoptic.rv_feats;
    const Tensor fused = cascade_fuse(f.r1, f.r2, f.r3, model.cascade);
    const Tensor projected =
        rv_to_bev(fused, ctx.panoptic.range_image, ctx.scene.points, fine, Reduce::kMax);
    ctx.rv_bev = bev_downsample_chain(projected, model.cascade);
  }
  if (need.cfa) {
    const Tensor rv_probs = rv_class_probs(ctx.panoptic);
    Tensor bev_probs =
        rv_to_bev(rv_probs, ctx.panoptic.range_image, ctx.scene.points, fine, Reduce::kMax);
    if (factor > 1) bev_probs = maxpool2d(bev_probs, factor, factor);
    for (std::size_t k = 0; k < bev_probs.channels(); ++k)
      ctx.class_probs.push_back(slice_channels(bev_probs, k, 1));
  }
  if (need.cdh) ctx.density = center_density(ctx.scene.points, ctx.panoptic, c.grid);
  ctx.targets = gaussian_targets(ctx.scene.boxes, c.grid, c.num_classes(), c.head.targets);
  ctx.regression = encode_regression(ctx.scene.boxes, c.grid);
  Rng rng(mix_seed(ctx.seed, "heatmap-noise"));
  ctx.heat_noise = Tensor(c.num_classes(), c.grid.rows(), c.grid.cols());
  for (double& v : ctx.heat_noise.data()) v = normal(rng);
  return ctx;
}

/// Per-cell L2 norm over channels divided by its mean over non-zero cells.
inline Tensor saliency(const Tensor& features) {
  Tensor s(1, features.height(), features.width());
  auto out = s.data();
  for (std::size_t ch = 0; ch < features.channels(); ++ch) {
    const auto f = features.channel(ch);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += f[i] * f[i];
  }
  double total = 0.0;
  std::size_t nonzero = 0;
  for (double& v : out) {
    v = std::sqrt(v);
    if (v > 0.0) {
      total += v;
      ++nonzero;
    }
  }
  if (nonzero == 0) return s;
  const double mean = total / static_cast<double>(nonzero);
  for (double& v : out) v /= mean;
  return s;
}

inline HeadOutput scaffold_head(const Tensor& features, const SceneContext& ctx, const HeadConfig& h) {
  const Tensor sal = saliency(features);
  const auto s = sal.data();
  HeadOutput out{Tensor(ctx.targets.heatmap.shape()), ctx.regression.regression, ctx.regression.z_logh};
  for (std::size_t k = 0; k < out.heatmaps.channels(); ++k) {
    const auto t = ctx.targets.heatmap.channel(k);
    const auto n = ctx.heat_noise.channel(k);
    auto o = out.heatmaps.channel(k);
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double z = (t[i] + h.heatmap_sigma * n[i]) * std::pow(s[i], h.saliency_exponent);
      o[i] = sigmoid(h.sharpness * (z - 0.5));
    }
  }
  return out;
}

struct SceneResult {
  std::vector<Box7> detections;
  double focal = 0.0;
  double regression_loss = 0.0;
  std::optional<Tensor> center_map;   // max over classes, kept only when dumping
  std::optional<Tensor> density_map;
};

inline SceneResult run_variant(const RunConfig& c, const Model& model, const SceneContext& ctx,
                               Toggles t, bool keep_maps = false) {
  Tensor x = t.mba ? rv_bev_attention(ctx.pillars, *ctx.rv_bev, model.attention)
                   : conv2d(ctx.pillars, model.stem);
  if (t.cfa) x = class_foreground_attention(x, ctx.class_probs, model.class_attention);
  Tensor f = mini_backbone(x, model.backbone);
  if (t.cdh) f = apply_density(f, *ctx.density);
  const HeadOutput head = scaffold_head(f, ctx, c.head);

  SceneResult r;
  r.detections = decode(head, c.grid, c.head.k_max, c.head.score_min).boxes();
  Tensor clamped = head.heatmaps;
  for (double& v : clamped.data()) v = std::clamp(v, 1e-12, 1.0 - 1e-12);
  r.focal = focal_loss(clamped, ctx.targets.heatmap, c.head.focal).value;
  r.regression_loss = smooth_l1(head.regression, ctx.regression.regression, ctx.regression.mask).value;
  if (keep_maps) {
    Tensor m(1, head.heatmaps.height(), head.heatmaps.width());
    for (std::size_t k = 0; k < head.heatmaps.channels(); ++k) {
      const auto src = head.heatmaps.channel(k);
      auto dst = m.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(dst[i], src[i]);
    }
    r.center_map = std::move(m);
    if (ctx.density) r.density_map = ctx.density->values;
  }
  return r;
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// (lowest index) is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct VariantResult {
  Toggles toggles;
  EvalResult eval;
  std::vector<SceneResult> scenes;
  double mean_focal = 0.0;
  double mean_regression_loss = 0.0;
};

struct MultiRun {
  std::vector<std::vector<Box7>> ground_truth;  // per scene
  std::vector<VariantResult> variants;
};

/// Runs several toggle settings over the same scenes, sharing the
/// toggle-independent work. Results depend only on the config and `run_seed`.
inline MultiRun run_variants(const RunConfig& c, const Model& model, std::uint64_t run_seed,
                             std::span<const Toggles> variants, bool keep_maps = false) {
  Toggles need;
  for (const Toggles& t : variants) {
    need.mba = need.mba || t.mba;
    need.cfa = need.cfa || t.cfa;
    need.cdh = need.cdh || t.cdh;
  }
  MultiRun out;
  out.ground_truth.resize(c.scenes);
  std::vector<std::vector<SceneResult>> per_scene(c.scenes);
  parallel_for(c.scenes, c.workers, [&](std::size_t i) {
    const SceneContext ctx = prepare_scene(c, model, run_seed, i, need);
    out.ground_truth[i] = ctx.scene.boxes;
    for (const Toggles& t : variants) per_scene[i].push_back(run_variant(c, model, ctx, t, keep_maps));
  });
  for (std::size_t v = 0; v < variants.size(); ++v) {
    VariantResult vr;
    vr.toggles = variants[v];
    std::vector<std::vector<Box7>> dets(c.scenes);
    for (std::size_t i = 0; i < c.scenes; ++i) {
      vr.scenes.push_back(std::move(per_scene[i][v]));
      dets[i] = vr.scenes.back().detections;
      vr.mean_focal += vr.scenes.back().focal;
      vr.mean_regression_loss += vr.scenes.back().regression_loss;
    }
    vr.mean_focal /= static_cast<double>(c.scenes);
    vr.mean_regression_loss /= static_cast<double>(c.scenes);
    vr.eval = evaluate(dets, out.ground_truth, c.num_classes());
    out.variants.push_back(std::move(vr));
  }
  return out;
}

inline VariantResult run_pipeline(const RunConfig& c) {
  const Model model(c);
  const std::array<Toggles, 1> v{c.toggles};
  return std::move(run_variants(c, model, c.seed, v).variants.front());
}

// ---------------------------------------------------------------------------
// Reports

inline Json eval_to_json(const EvalResult& e, const std::vector<ClassSpec>& classes) {
  Json per_class = Json::array();
  for (std::size_t k = 0; k < e.num_classes; ++k) {
    Json ap = Json::object();
    for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t)
      ap[format_g17(kDistanceThresholds[t])] = e.ap[k][t];
    per_class.push_back(Json{{"class_id", k + 1},
                             {"name", k < classes.size() ? classes[k].name : ""},
                             {"ap", ap},
                             {"mean_ap", e.class_map[k]},
                             {"no_ground_truth", e.no_ground_truth[k] != 0}});
  }
  Json counts = Json::object();
  for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t)
    counts[format_g17(kDistanceThresholds[t])] =
        Json{{"tp", e.counts[t].tp}, {"fp", e.counts[t].fp}, {"fn", e.counts[t].fn}};
  return Json{{"map", e.map}, {"classes", per_class}, {"counts", counts}};
}

inline Json variant_to_json(const VariantResult& v, const std::vector<ClassSpec>& classes) {
  Json j = eval_to_json(v.eval, classes);
  j["toggles"] = v.toggles.str();
  j["mean_focal_loss"] = v.mean_focal;
  j["mean_regression_loss"] = v.mean_regression_loss;
  return j;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// The configured run plus the all-off baseline and their differences.
struct RunReport {
  MultiRun runs;  // variants[0] configured, variants[1] baseline (if different)
  Json metrics;
};

inline RunReport run_with_baseline(const RunConfig& c) {
  const Model model(c);
  std::vector<Toggles> variants{c.toggles};
  if (!(c.toggles == Toggles{})) variants.push_back(Toggles{});
  RunReport rep{run_variants(c, model, c.seed, variants, c.dump_heatmaps), {}};
  const VariantResult& conf = rep.runs.variants.front();
  const VariantResult& base = rep.runs.variants.back();
  Json delta_classes = Json::array();
  for (std::size_t k = 0; k < c.num_classes(); ++k)
    delta_classes.push_back(conf.eval.class_map[k] - base.eval.class_map[k]);
  rep.metrics = Json{{"schema", "pgf-metrics/1"},
                     {"timestamp", utc_timestamp()},
                     {"config", config_to_json(c)},
                     {"configured", variant_to_json(conf, c.scene.classes)},
                     {"baseline", variant_to_json(base, c.scene.classes)},
                     {"delta", Json{{"map", conf.eval.map - base.eval.map}, {"class_mean_ap", delta_classes}}}};
  return rep;
}

/// Writes detections (CSV and JSON), metrics JSON and optional heatmap dumps.
inline void write_run_outputs(const RunConfig& c, const RunReport& rep) {
  namespace fs = std::filesystem;
  fs::create_directories(c.out_dir);
  write_text((fs::path(c.out_dir) / "metrics.json").string(), dump_json(rep.metrics));
  const VariantResult& conf = rep.runs.variants.front();
  std::vector<std::vector<Box7>> dets;
  for (const auto& s : conf.scenes) dets.push_back(s.detections);
  {
    std::ostringstream os;
    write_detections_csv(os, dets);
    write_text((fs::path(c.out_dir) / "detections.csv").string(), os.str());
  }
  write_text((fs::path(c.out_dir) / "detections.json").string(), dump_json(detections_to_json(dets)));
  if (!c.dump_heatmaps) return;
  const fs::path dir = fs::path(c.out_dir) / "heatmaps";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < conf.scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene_%04zu", i);
    const SceneResult& s = conf.scenes[i];
    if (s.center_map) save_pgm16((dir / (std::string(stem) + "_centers.pgm")).string(), *s.center_map);
    if (s.density_map) {
      save_pgm16((dir / (std::string(stem) + "_density.pgm")).string(), *s.density_map);
      std::ostringstream os;
      write_heatmap_csv(os, *s.density_map);
      write_text((dir / (std::string(stem) + "_density.csv")).string(), os.str());
    }
  }
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::array<Toggles, 4> rows = kAblationRows;
  std::array<std::vector<double>, 4> map;  // [row][seed]
  std::array<double, 4> mean{};

  double delta(std::size_t from, std::size_t to, std::size_t seed_idx) const {
    return map[to][seed_idx] - map[from][seed_idx];
  }
  double mean_delta(std::size_t from, std::size_t to) const { return mean[to] - mean[from]; }
  double mba_delta() const { return mean_delta(0, 1); }
  double cdh_delta() const { return mean_delta(2, 3); }
  bool monotone() const { return mean[0] <= mean[1] && mean[1] <= mean[2] && mean[2] <= mean[3]; }
  bool direction_holds() const { return mba_delta() > 0.0 && cdh_delta() > 0.0; }
};

inline AblationTable ablate(const RunConfig& c, std::span<const std::uint64_t> seeds) {
  require(seeds.size() >= 3, "ablate: need at least 3 seeds, got " + std::to_string(seeds.size()));
  const Model model(c);
  AblationTable t;
  t.seeds.assign(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    const MultiRun r = run_variants(c, model, seed, kAblationRows);
    for (std::size_t row = 0; row < 4; ++row) t.map[row].push_back(r.variants[row].eval.map);
  }
  for (std::size_t row = 0; row < 4; ++row) {
    double s = 0.0;
    for (double v : t.map[row]) s += v;
    t.mean[row] = s / static_cast<double>(seeds.size());
  }
  return t;
}

/// One row per toggle setting: check marks, mean mAP, delta to the previous
/// row, then per-seed mAP.
inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream os;
  os << "mba,cfa,cdh,mean_map,delta_prev";
  for (std::uint64_t s : t.seeds) os << ",map_seed" << s;
  os << "\n";
  for (std::size_t row = 0; row < 4; ++row) {
    const Toggles& g = t.rows[row];
    os << (g.mba ? "x" : "") << ',' << (g.cfa ? "x" : "") << ',' << (g.cdh ? "x" : "") << ','
       << format_g17(t.mean[row]) << ',' << (row ? format_g17(t.mean[row] - t.mean[row - 1]) : "");
    for (double v : t.map[row]) os << ',' << format_g17(v);
    os << "\n";
  }
  return os.str();
}

inline Json ablation_to_json(const AblationTable& t) {
  Json rows = Json::array();
  for (std::size_t row = 0; row < 4; ++row)
    rows.push_back(Json{{"toggles", t.rows[row].str()}, {"mean_map", t.mean[row]}, {"map", t.map[row]}});
  Json mba = Json::array();
  Json cdh = Json::array();
  for (std::size_t i = 0; i < t.seeds.size(); ++i) {
    mba.push_back(t.delta(0, 1, i));
    cdh.push_back(t.delta(2, 3, i));
  }
  return Json{{"schema", "pgf-ablation/1"},
              {"seeds", t.seeds},
              {"rows", rows},
              {"mba_delta", Json{{"mean", t.mba_delta()}, {"per_seed", mba}}},
              {"cdh_delta", Json{{"mean", t.cdh_delta()}, {"per_seed", cdh}}},
              {"monotone", t.monotone()},
              {"direction_holds", t.direction_holds()}};
}

}  // namespace pgf
