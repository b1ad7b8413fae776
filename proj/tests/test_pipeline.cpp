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

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgf/io.hpp"
#include "pgf/pipeline.hpp"

namespace {

using namespace pgf;
namespace fs = std::filesystem;

TEST(Toggles, ParseAndPrintRoundTrip) {
  for (int bits = 0; bits < 8; ++bits) {
    const Toggles t{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0};
    EXPECT_EQ(Toggles::parse(t.str()), t) << t.str();
  }
  EXPECT_EQ(Toggles{}.str(), "none");
  EXPECT_EQ(Toggles::parse(""), Toggles{});
  EXPECT_EQ(Toggles::parse("cdh,mba"), (Toggles{true, false, true}));
  EXPECT_EQ((Toggles{true, true, true}).str(), "mba,cfa,cdh");
  EXPECT_THROW(Toggles::parse("mba,xyz"), std::invalid_argument);
  EXPECT_THROW(Toggles::parse("mba,"), std::invalid_argument);
}

TEST(Config, EmptyDocumentGivesSynthV1Defaults) {
  const ParsedConfig p = parse_config(Json::object());
  ASSERT_TRUE(p.errors.empty());
  const RunConfig& c = p.config;
  EXPECT_EQ(c.scenes, 64u);
  EXPECT_EQ(c.head.heatmap_sigma, 0.3);
  EXPECT_EQ(c.noise.offset_sigma, 0.2);
  EXPECT_EQ(c.noise.label_flip, 0.05);
  EXPECT_EQ(c.ablation_seeds.size(), 5u);
  EXPECT_EQ(c.toggles, (Toggles{true, true, true}));
  EXPECT_EQ(c.num_classes(), 3u);
}

TEST(Config, ReportsEveryProblem) {
  const Json doc = Json::parse(R"({
    "seed": -3,
    "scenes": 0,
    "bogus": 1,
    "toggles": "mba,turbo",
    "noise": {"label_flip": "high"},
    "head": {"score_min": 1.5, "extra": true},
    "grid": {"cell": 0.3}
  })");
  const ParsedConfig p = parse_config(doc);
  const auto has = [&](const std::string& needle) {
    return std::any_of(p.errors.begin(), p.errors.end(),
                       [&](const std::string& e) { return e.find(needle) != std::string::npos; });
  };
  EXPECT_TRUE(has("seed: expected a non-negative integer"));
  EXPECT_TRUE(has("bogus: unknown key"));
  EXPECT_TRUE(has("toggles: unknown toggle 'turbo'"));
  EXPECT_TRUE(has("noise.label_flip: expected a number"));
  EXPECT_TRUE(has("head.extra: unknown key"));
  EXPECT_TRUE(has("head.score_min must be in (0, 1)"));
  EXPECT_TRUE(has("scenes must be >= 1"));
  EXPECT_TRUE(has("integer multiples of the cell size"));
  EXPECT_GE(p.errors.size(), 8u);
}

TEST(Config, NonObjectIsRejected) {
  EXPECT_FALSE(parse_config(Json::array()).errors.empty());
  EXPECT_FALSE(parse_config(Json(3)).errors.empty());
}

TEST(Config, TogglesAcceptObjectForm) {
  const ParsedConfig p = parse_config(Json::parse(R"({"toggles": {"mba": true, "cfa": false, "cdh": false}})"));
  ASSERT_TRUE(p.errors.empty());
  EXPECT_EQ(p.config.toggles, (Toggles{true, false, false}));
}

TEST(Config, SerializedConfigParsesBackToItself) {
  RunConfig c;
  c.seed = 99;
  c.scenes = 7;
  c.toggles = Toggles{false, true, false};
  c.scene.classes[1].count = 2;
  c.head.sharpness = 3.0;
  c.model.guidance_seed = 21;
  const Json j = config_to_json(c);
  const ParsedConfig p = parse_config(j);
  ASSERT_TRUE(p.errors.empty()) << p.errors.front();
  Json back = config_to_json(p.config);
  EXPECT_EQ(j["rv"]["incl_min_deg"], -30.0);
  EXPECT_NEAR(back["rv"]["incl_min_deg"].get<double>(), j["rv"]["incl_min_deg"].get<double>(), 1e-12);
  back["rv"].erase("incl_min_deg");
  back["rv"].erase("incl_max_deg");
  Json want = j;
  want["rv"].erase("incl_min_deg");
  want["rv"].erase("incl_max_deg");
  EXPECT_EQ(back, want);
}

TEST(Config, RuntimeKeysStayOutOfResults) {
  RunConfig a;
  RunConfig b;
  b.workers = 8;
  b.out_dir = "/tmp/x";
  EXPECT_EQ(config_to_json(a), config_to_json(b));
}

TEST(Saliency, NormalizedToUnitMeanOverNonZeroCells) {
  Tensor f(2, 2, 2);
  f(0, 0, 0) = 3.0;
  f(1, 0, 0) = 4.0;  // norm 5
  f(0, 1, 1) = 1.0;  // norm 1
  const Tensor s = saliency(f);
  EXPECT_DOUBLE_EQ(s(0, 0, 0), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(s(0, 1, 1), 1.0 / 3.0);
  EXPECT_EQ(s(0, 0, 1), 0.0);
  const Tensor flat = saliency(Tensor(3, 2, 2));
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
}

TEST(ScaffoldHead, UniformSaliencyWithoutNoiseIsASquashedTarget) {
  SceneContext ctx;
  ctx.targets.heatmap = Tensor(1, 3, 3);
  ctx.targets.heatmap(0, 1, 1) = 1.0;
  ctx.targets.heatmap(0, 1, 2) = 0.25;
  ctx.heat_noise = Tensor(1, 3, 3, 5.0);
  ctx.regression = RegressionTargets{Tensor(kRegChannels, 3, 3), Tensor(2, 3, 3), Tensor(1, 3, 3)};
  HeadConfig h;
  h.heatmap_sigma = 0.0;
  const HeadOutput out = scaffold_head(Tensor(2, 3, 3, 1.0), ctx, h);
  EXPECT_DOUBLE_EQ(out.heatmaps(0, 1, 1), 1.0 / (1.0 + std::exp(-2.0)));
  EXPECT_DOUBLE_EQ(out.heatmaps(0, 1, 2), 1.0 / (1.0 + std::exp(1.0)));
  EXPECT_DOUBLE_EQ(out.heatmaps(0, 0, 0), 1.0 / (1.0 + std::exp(2.0)));
}

TEST(ParallelFor, VisitsEachIndexOnceAndRethrowsLowestFailure) {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  try {
    parallel_for(20, 3, [](std::size_t i) {
      if (i == 7 || i == 13) throw std::runtime_error("boom " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "boom 7");
  }
}

RunConfig tiny_config() {
  RunConfig c;
  c.scenes = 2;
  c.seed = 5;
  return c;
}

std::string metrics_without_timestamp(const RunReport& r) {
  Json m = r.metrics;
  m.erase("timestamp");
  return dump_json(m);
}

TEST(Pipeline, RepeatedRunsAndWorkerCountsAgree) {
  RunConfig c = tiny_config();
  const std::string one = metrics_without_timestamp(run_with_baseline(c));
  EXPECT_EQ(metrics_without_timestamp(run_with_baseline(c)), one);
  c.workers = 2;
  EXPECT_EQ(metrics_without_timestamp(run_with_baseline(c)), one);
}

TEST(Pipeline, ReportCarriesConfiguredBaselineAndDelta) {
  const RunReport r = run_with_baseline(tiny_config());
  const Json& m = r.metrics;
  EXPECT_EQ(m["schema"], "pgf-metrics/1");
  EXPECT_EQ(m["configured"]["toggles"], "mba,cfa,cdh");
  EXPECT_EQ(m["baseline"]["toggles"], "none");
  EXPECT_DOUBLE_EQ(m["delta"]["map"].get<double>(),
                   m["configured"]["map"].get<double>() - m["baseline"]["map"].get<double>());
  const double map = m["configured"]["map"].get<double>();
  EXPECT_GT(map, 0.0);
  EXPECT_LE(map, 1.0);
  EXPECT_EQ(m["configured"]["classes"].size(), 3u);
  for (const auto& s : r.runs.variants.front().scenes) {
    EXPECT_LE(s.detections.size(), 100u);
    EXPECT_TRUE(std::isfinite(s.focal));
    EXPECT_EQ(s.regression_loss, 0.0);
  }
}

TEST(Pipeline, VariantsSharingAContextMatchSeparateRuns) {
  RunConfig c = tiny_config();
  const Model model(c);
  const MultiRun all = run_variants(c, model, c.seed, kAblationRows);
  for (std::size_t row = 0; row < 4; ++row) {
    const std::array<Toggles, 1> one{kAblationRows[row]};
    const MultiRun single = run_variants(c, model, c.seed, one);
    EXPECT_EQ(single.variants[0].eval.map, all.variants[row].eval.map) << row;
  }
}

TEST(Pipeline, AblationNeedsThreeSeeds) {
  const std::vector<std::uint64_t> two{0, 1};
  EXPECT_THROW(ablate(tiny_config(), two), std::invalid_argument);
}

TEST(Pipeline, WritesOutputFiles) {
  RunConfig c = tiny_config();
  c.out_dir = (fs::temp_directory_path() / "pgf_pipeline_test").string();
  fs::remove_all(c.out_dir);
  c.dump_heatmaps = true;
  const RunReport r = run_with_baseline(c);
  write_run_outputs(c, r);
  for (const char* f : {"metrics.json", "detections.csv", "detections.json",
                        "heatmaps/scene_0000_centers.pgm", "heatmaps/scene_0001_density.pgm",
                        "heatmaps/scene_0001_density.csv"})
    EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / f)) << f;
  std::ifstream is(fs::path(c.out_dir) / "detections.csv");
  const auto dets = read_detections_csv(is, c.scenes);
  for (std::size_t s = 0; s < c.scenes; ++s)
    EXPECT_EQ(dets[s], r.runs.variants.front().scenes[s].detections);
  fs::remove_all(c.out_dir);
}

TEST(Io, JsonDumpSortsKeysAndKeepsFullPrecision) {
  const Json j{{"b", 0.1}, {"a", Json::array({1, 2.5})}, {"c", Json::object()}};
  EXPECT_EQ(dump_json(j), "{\n  \"a\": [\n    1,\n    2.5\n  ],\n  \"b\": 0.10000000000000001,\n  \"c\": {}\n}\n");
  EXPECT_EQ(format_g17(std::nan("")), "null");
}

TEST(Io, DetectionsCsvRoundTripAndErrors) {
  std::vector<std::vector<Box7>> dets(3);
  dets[0].push_back({1.0 / 3.0, -2.0, 0.5, 4.0, 1.8, 1.6, -3.0, 1, 0.75});
  dets[0].push_back({5.0, 5.0, 0.0, 1.0, 1.0, 1.0, 0.1, 2, 0.5});
  dets[2].push_back({-7.25, 3.5, 0.0, 0.5, 0.5, 0.8, 0.0, 3, 0.125});
  std::stringstream ss;
  write_detections_csv(ss, dets);
  EXPECT_EQ(read_detections_csv(ss, 3), dets);

  std::stringstream bad_header("scene,x\n");
  EXPECT_THROW(read_detections_csv(bad_header, 3), std::runtime_error);
  std::stringstream short_row(std::string(kDetectionsCsvHeader) + "\n0,1,2\n");
  EXPECT_THROW(read_detections_csv(short_row, 3), std::runtime_error);
  std::stringstream far_scene(std::string(kDetectionsCsvHeader) + "\n5,0,0,0,1,1,1,0,1,0.5\n");
  EXPECT_THROW(read_detections_csv(far_scene, 3), std::runtime_error);
  std::stringstream junk(std::string(kDetectionsCsvHeader) + "\n0,a,0,0,1,1,1,0,1,0.5\n");
  EXPECT_THROW(read_detections_csv(junk, 3), std::runtime_error);
}

TEST(Io, Pgm16HeaderAndBigEndianSamples) {
  Tensor m(1, 1, 3);
  m(0, 0, 0) = 0.0;
  m(0, 0, 1) = 1.0;
  m(0, 0, 2) = 0.5;
  std::ostringstream os;
  write_pgm16(os, m);
  const std::string s = os.str();
  const std::string header = "P5\n3 1\n65535\n";
  ASSERT_EQ(s.size(), header.size() + 6);
  EXPECT_EQ(s.substr(0, header.size()), header);
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(s[header.size() + i]); };
  EXPECT_EQ(byte(0), 0);
  EXPECT_EQ(byte(2), 0xff);
  EXPECT_EQ(byte(3), 0xff);
  EXPECT_EQ(byte(4), 0x80);  // round(32767.5) = 32768
  EXPECT_EQ(byte(5), 0x00);
}

}  // namespace
