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

/// \file scene_io.hpp
/// Scene files.
///
/// Binary layout (little-endian, version "PGF1"):
///
///   header   : char[4] "PGF1", u32 N (points), u32 B (boxes), u32 K (classes)
///   N points : f32 x, f32 y, f32 z, f32 intensity, i32 class_id, i32 instance_id
///   B boxes  : f32 cx, cy, cz, l, w, h, yaw, i32 class_id
///
/// Box i (0-based) belongs to instance i + 1. The CSV form carries the same
/// columns, one `point,...` or `box,...` row each, after a `# pgf-scene-csv/1 K=<K>`
/// header line.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgf/scene.hpp"

namespace pgf {

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char buf[4];
  std::memcpy(buf, &bits, 4);
  os.write(buf, 4);
}

template <typename T>
T get_le(std::istream& is) {
  static_assert(sizeof(T) == 4);
  char buf[4];
  if (!is.read(buf, 4)) throw std::runtime_error("scene file: unexpected end of data");
  std::uint32_t bits;
  std::memcpy(&bits, buf, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace detail

inline constexpr char kSceneMagic[4] = {'P', 'G', 'F', '1'};

inline void write_scene(std::ostream& os, const Scene& s) {
  os.write(kSceneMagic, 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.points.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.boxes.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.num_classes));
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const Point& p = s.points[i];
    for (double v : {p.x, p.y, p.z, p.intensity}) detail::put_le<float>(os, static_cast<float>(v));
    detail::put_le<std::int32_t>(os, s.labels[i].class_id);
    detail::put_le<std::int32_t>(os, s.labels[i].instance_id);
  }
  for (const Box7& b : s.boxes) {
    for (double v : {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw})
      detail::put_le<float>(os, static_cast<float>(v));
    detail::put_le<std::int32_t>(os, b.class_id);
  }
}

inline Scene read_scene(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kSceneMagic, 4) != 0)
    throw std::runtime_error("scene file: bad magic (expected PGF1)");
  Scene s;
  const auto n = detail::get_le<std::uint32_t>(is);
  const auto b = detail::get_le<std::uint32_t>(is);
  s.num_classes = static_cast<std::int32_t>(detail::get_le<std::uint32_t>(is));
  s.points.reserve(n);
  s.labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Point p;
    p.x = detail::get_le<float>(is);
    p.y = detail::get_le<float>(is);
    p.z = detail::get_le<float>(is);
    p.intensity = detail::get_le<float>(is);
    PointLabel lab;
    lab.class_id = detail::get_le<std::int32_t>(is);
    lab.instance_id = detail::get_le<std::int32_t>(is);
    s.points.push_back(p);
    s.labels.push_back(lab);
  }
  for (std::uint32_t i = 0; i < b; ++i) {
    Box7 box;
    box.cx = detail::get_le<float>(is);
    box.cy = detail::get_le<float>(is);
    box.cz = detail::get_le<float>(is);
    box.l = detail::get_le<float>(is);
    box.w = detail::get_le<float>(is);
    box.h = detail::get_le<float>(is);
    box.yaw = detail::get_le<float>(is);
    box.class_id = detail::get_le<std::int32_t>(is);
    s.boxes.push_back(box);
  }
  return s;
}

inline void save_scene(const std::string& path, const Scene& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_scene(os, s);
}

inline Scene load_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_scene(is);
}

inline void write_scene_csv(std::ostream& os, const Scene& s) {
  os << "# pgf-scene-csv/1 K=" << s.num_classes << "\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const Point& p = s.points[i];
    os << "point," << static_cast<float>(p.x) << ',' << static_cast<float>(p.y) << ','
       << static_cast<float>(p.z) << ',' << static_cast<float>(p.intensity) << ','
       << s.labels[i].class_id << ',' << s.labels[i].instance_id << "\n";
  }
  for (const Box7& b : s.boxes) {
    os << "box";
    for (double v : {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}) os << ',' << static_cast<float>(v);
    os << ',' << b.class_id << "\n";
  }
}

inline Scene read_scene_csv(std::istream& is) {
  Scene s;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# pgf-scene-csv/1 K=", 0) != 0)
    throw std::runtime_error("scene csv: missing '# pgf-scene-csv/1' header");
  s.num_classes = std::stoi(line.substr(std::string("# pgf-scene-csv/1 K=").size()));
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    const auto num = [&](std::size_t i) { return static_cast<double>(std::stof(f.at(i))); };
    if (f[0] == "point" && f.size() == 7) {
      s.points.push_back({num(1), num(2), num(3), num(4)});
      s.labels.push_back({std::stoi(f[5]), std::stoi(f[6])});
    } else if (f[0] == "box" && f.size() == 9) {
      Box7 b{num(1), num(2), num(3), num(4), num(5), num(6), num(7), std::stoi(f[8]), 1.0};
      s.boxes.push_back(b);
    } else {
      throw std::runtime_error("scene csv: malformed row at line " + std::to_string(line_no));
    }
  }
  return s;
}

}  // namespace pgf
