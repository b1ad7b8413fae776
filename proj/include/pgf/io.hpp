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

/// \file io.hpp
/// Detection sets (CSV and JSON), heatmap dumps (16-bit PGM and CSV) and a
/// JSON writer that prints every float with 17 significant digits.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgf/scene.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

using Json = nlohmann::json;

inline std::string format_g17(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Deterministic serialization: object keys sorted, floats at %.17g.
inline void dump_json(std::ostream& os, const Json& j, int indent = 2, int depth = 0) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << pad << Json(it.key()).dump() << ": ";
        dump_json(os, it.value(), indent, depth + 1);
      }
      os << "\n" << close_pad << "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ",\n";
        os << pad;
        dump_json(os, j[i], indent, depth + 1);
      }
      os << "\n" << close_pad << "]";
      return;
    }
    case Json::value_t::number_float:
      os << format_g17(j.get<double>());
      return;
    default:
      os << j.dump();
  }
}

inline std::string dump_json(const Json& j) {
  std::ostringstream os;
  dump_json(os, j);
  os << "\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

// ---------------------------------------------------------------------------
// Detections

inline constexpr const char* kDetectionsCsvHeader = "scene,cx,cy,cz,l,w,h,yaw,class_id,score";

inline void write_detections_csv(std::ostream& os, const std::vector<std::vector<Box7>>& per_scene) {
  os << kDetectionsCsvHeader << "\n";
  for (std::size_t s = 0; s < per_scene.size(); ++s)
    for (const Box7& b : per_scene[s]) {
      os << s;
      for (double v : {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}) os << ',' << format_g17(v);
      os << ',' << b.class_id << ',' << format_g17(b.score) << "\n";
    }
}

/// Rows may appear in any order; each scene's boxes are returned sorted by
/// descending score (stable). Scene indices must be < num_scenes.
inline std::vector<std::vector<Box7>> read_detections_csv(std::istream& is, std::size_t num_scenes) {
  std::vector<std::vector<Box7>> out(num_scenes);
  std::string line;
  if (!std::getline(is, line) || line != kDetectionsCsvHeader)
    throw std::runtime_error(std::string("detections csv: expected header '") +
                             kDetectionsCsvHeader + "'");
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    const std::string where = "detections csv line " + std::to_string(line_no);
    if (f.size() != 10) throw std::runtime_error(where + ": expected 10 fields, got " + std::to_string(f.size()));
    try {
      const auto scene = std::stoull(f[0]);
      if (scene >= num_scenes)
        throw std::runtime_error(where + ": scene " + f[0] + " out of range (" +
                                 std::to_string(num_scenes) + " scenes)");
      Box7 b{std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
             std::stod(f[6]), std::stod(f[7]), std::stoi(f[8]), std::stod(f[9])};
      out[scene].push_back(b);
    } catch (const std::logic_error&) {
      throw std::runtime_error(where + ": malformed number");
    }
  }
  for (auto& v : out)
    std::stable_sort(v.begin(), v.end(), [](const Box7& a, const Box7& b) { return a.score > b.score; });
  return out;
}

inline Json box_to_json(const Box7& b) {
  return Json{{"cx", b.cx},   {"cy", b.cy},       {"cz", b.cz},      {"l", b.l},
              {"w", b.w},     {"h", b.h},         {"yaw", b.yaw},    {"class_id", b.class_id},
              {"score", b.score}};
}

inline Json detections_to_json(const std::vector<std::vector<Box7>>& per_scene) {
  Json scenes = Json::array();
  for (std::size_t s = 0; s < per_scene.size(); ++s) {
    Json boxes = Json::array();
    for (const Box7& b : per_scene[s]) boxes.push_back(box_to_json(b));
    scenes.push_back(Json{{"scene", s}, {"detections", boxes}});
  }
  return Json{{"schema", "pgf-detections/1"}, {"scenes", scenes}};
}

// ---------------------------------------------------------------------------
// Heatmaps

/// Binary PGM (P5), maxval 65535, big-endian samples, value v -> round(65535 v)
/// clamped to [0, 65535], NaN -> 0. Row 0 is written first.
inline void write_pgm16(std::ostream& os, const Tensor& map, std::size_t channel = 0) {
  require(channel < map.channels(), "write_pgm16: channel out of range");
  os << "P5\n" << map.width() << " " << map.height() << "\n65535\n";
  const auto data = map.channel(channel);
  for (double v : data) {
    const double s = std::isnan(v) ? 0.0 : std::clamp(std::round(65535.0 * v), 0.0, 65535.0);
    const auto u = static_cast<std::uint16_t>(s);
    const char bytes[2] = {static_cast<char>(u >> 8), static_cast<char>(u & 0xff)};
    os.write(bytes, 2);
  }
}

inline void save_pgm16(const std::string& path, const Tensor& map, std::size_t channel = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_pgm16(os, map, channel);
}

inline void write_heatmap_csv(std::ostream& os, const Tensor& map, std::size_t channel = 0) {
  require(channel < map.channels(), "write_heatmap_csv: channel out of range");
  for (std::size_t r = 0; r < map.height(); ++r) {
    for (std::size_t c = 0; c < map.width(); ++c) {
      if (c) os << ',';
      os << format_g17(map(channel, r, c));
    }
    os << "\n";
  }
}

}  // namespace pgf
