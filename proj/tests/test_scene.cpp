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


#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "pgf/scene.hpp"
#include "pgf/scene_io.hpp"

namespace {

using namespace pgf;

TEST(Scene, SameSeedSameScene) {
  const SceneConfig cfg;
  EXPECT_EQ(generate_scene(cfg, 42), generate_scene(cfg, 42));
  EXPECT_NE(generate_scene(cfg, 42).points, generate_scene(cfg, 43).points);
}

TEST(Scene, LabelsAndBoxesAreConsistentOverManySeeds) {
  const SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const Scene s = generate_scene(cfg, seed);
    const auto problem = validate_scene(s);
    EXPECT_FALSE(problem.has_value()) << "seed " << seed << ": " << problem.value_or("");
    std::size_t expected = 0;
    for (const auto& c : cfg.classes) expected += static_cast<std::size_t>(c.count);
    EXPECT_EQ(s.boxes.size(), expected);
    for (const Box7& b : s.boxes) {
      EXPECT_GE(b.yaw, -std::numbers::pi);
      EXPECT_LT(b.yaw, std::numbers::pi);
      EXPECT_GE(std::hypot(b.cx, b.cy), cfg.min_object_range);
    }
  }
}

TEST(Scene, EveryObjectReceivesPoints) {
  const Scene s = generate_scene(SceneConfig{}, 9);
  std::set<std::int32_t> seen;
  for (const auto& lab : s.labels)
    if (lab.instance_id > 0) seen.insert(lab.instance_id);
  EXPECT_EQ(seen.size(), s.boxes.size());
}

TEST(Scene, FixedObjectsComeFirstAndKeepTheirGeometry) {
  SceneConfig cfg;
  Box7 b{10.0, -6.0, -0.9, 4.0, 2.0, 1.6, 3.5, 1, 0.3};
  cfg.fixed_objects.push_back(b);
  const Scene s = generate_scene(cfg, 1);
  ASSERT_FALSE(s.boxes.empty());
  EXPECT_EQ(s.boxes[0].cx, 10.0);
  EXPECT_EQ(s.boxes[0].cy, -6.0);
  EXPECT_NEAR(s.boxes[0].yaw, 3.5 - 2.0 * std::numbers::pi, 1e-12);
  EXPECT_EQ(s.boxes[0].score, 1.0);
}

TEST(Scene, ImpossiblePlacementThrows) {
  SceneConfig cfg;
  cfg.extent = 5.0;
  cfg.max_retries = 20;
  cfg.classes[0].count = 50;
  EXPECT_THROW(generate_scene(cfg, 0), std::runtime_error);
}

TEST(Scene, ClassCountOutOfRangeThrows) {
  SceneConfig cfg;
  cfg.classes.clear();
  EXPECT_THROW(generate_scene(cfg, 0), std::invalid_argument);
}

TEST(Scene, ValidatorCatchesBrokenInvariants) {
  Scene s = generate_scene(SceneConfig{}, 3);
  Scene a = s;
  for (auto& lab : a.labels)
    if (lab.class_id > 0) {
      lab.instance_id = 0;
      break;
    }
  EXPECT_TRUE(validate_scene(a).has_value());
  Scene b = s;
  for (std::size_t i = 0; i < b.labels.size(); ++i)
    if (b.labels[i].class_id > 0) {
      b.points[i].x += 50.0;
      break;
    }
  EXPECT_TRUE(validate_scene(b).has_value());
  Scene c = s;
  c.labels.pop_back();
  EXPECT_TRUE(validate_scene(c).has_value());
}

TEST(WrapAngle, IntoHalfOpenInterval) {
  EXPECT_EQ(wrap_angle(0.25), 0.25);
  EXPECT_EQ(wrap_angle(std::numbers::pi), -std::numbers::pi);
  EXPECT_NEAR(wrap_angle(3.0 * std::numbers::pi + 0.5), -std::numbers::pi + 0.5, 1e-12);
  EXPECT_NEAR(wrap_angle(-7.0), -7.0 + 2.0 * std::numbers::pi, 1e-12);
}

void expect_same_content(const Scene& a, const Scene& b) {
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.boxes, b.boxes);
  EXPECT_EQ(a.num_classes, b.num_classes);
}

TEST(SceneIo, BinaryRoundTripIsExact) {
  for (std::uint64_t seed : {0u, 5u, 77u}) {
    const Scene s = generate_scene(SceneConfig{}, seed);
    std::stringstream ss;
    write_scene(ss, s);
    expect_same_content(read_scene(ss), s);
  }
}

TEST(SceneIo, CsvRoundTripIsExact) {
  const Scene s = generate_scene(SceneConfig{}, 11);
  std::stringstream ss;
  write_scene_csv(ss, s);
  expect_same_content(read_scene_csv(ss), s);
}

TEST(SceneIo, RejectsBadInput) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(read_scene(bad_magic), std::runtime_error);
  const Scene s = generate_scene(SceneConfig{}, 2);
  std::stringstream ss;
  write_scene(ss, s);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream truncated(bytes);
  EXPECT_THROW(read_scene(truncated), std::runtime_error);
  std::stringstream no_header("point,1,2,3,0.5,0,0\n");
  EXPECT_THROW(read_scene_csv(no_header), std::runtime_error);
  std::stringstream bad_row("# pgf-scene-csv/1 K=3\nthing,1\n");
  EXPECT_THROW(read_scene_csv(bad_row), std::runtime_error);
}

}  // namespace
