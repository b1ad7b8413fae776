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

// Command-line front end.
//
//   pgf gen       write synthetic scenes (binary, optionally CSV)
//   pgf run       pipeline + metrics JSON (+ detections, heatmap dumps)
//   pgf eval      score a detections CSV against scenes
//   pgf ablate    four-row toggle ablation over several seeds
//   pgf gradcheck finite-difference checks of the differentiable ops
//
// Exit codes: 0 success, 1 validation or input error, 2 acceptance-property
// failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pgf/gradcheck.hpp"
#include "pgf/io.hpp"
#include "pgf/pipeline.hpp"
#include "pgf/scene_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitProperty = 2;

struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags shared by the pipeline subcommands; each one overrides a config key.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> scenes;
  std::optional<std::string> toggles;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file (defaults are synth-v1)");
    app->add_option("--seed", seed, "run seed (config key: seed)");
    app->add_option("--scenes", scenes, "number of scenes (config key: scenes)");
    app->add_option("--toggles", toggles, "comma list of mba,cfa,cdh or 'none' (config key: toggles)");
    app->add_option("--out", out, "output directory (config key: out)");
    app->add_option("--workers", workers, "worker threads (config key: workers)");
  }

  pgf::Json overrides(pgf::Json doc) const {
    if (seed) doc["seed"] = *seed;
    if (scenes) doc["scenes"] = *scenes;
    if (toggles) doc["toggles"] = *toggles;
    if (out) doc["out"] = *out;
    if (workers) doc["workers"] = *workers;
    return doc;
  }
};

pgf::Json load_json(const std::string& path) {
  if (path.empty()) return pgf::Json::object();
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open config " + path);
  try {
    return pgf::Json::parse(is);
  } catch (const pgf::Json::parse_error& e) {
    throw InvalidInput("config " + path + ": " + e.what());
  }
}

pgf::RunConfig resolve(const pgf::Json& doc) {
  const pgf::ParsedConfig parsed = pgf::parse_config(doc);
  if (!parsed.errors.empty()) {
    std::ostringstream os;
    os << parsed.errors.size() << " configuration error(s):";
    for (const auto& e : parsed.errors) os << "\n  - " << e;
    throw InvalidInput(os.str());
  }
  return parsed.config;
}

std::string scene_file(const fs::path& dir, std::size_t i, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof(name), "scene_%04zu.%s", i, ext);
  return (dir / name).string();
}

void emit(const pgf::RunConfig& c, const std::string& file, const std::string& text) {
  if (c.out_dir.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(c.out_dir);
  pgf::write_text((fs::path(c.out_dir) / file).string(), text);
  std::cerr << "wrote " << (fs::path(c.out_dir) / file).string() << "\n";
}

int cmd_gen(const pgf::RunConfig& c, bool csv) {
  if (c.out_dir.empty()) throw InvalidInput("gen: --out DIR is required");
  fs::create_directories(c.out_dir);
  for (std::size_t i = 0; i < c.scenes; ++i) {
    const pgf::Scene s = pgf::generate_scene(c.scene, pgf::scene_seed(c.seed, i));
    pgf::save_scene(scene_file(c.out_dir, i, "pgf"), s);
    if (csv) {
      std::ostringstream os;
      pgf::write_scene_csv(os, s);
      pgf::write_text(scene_file(c.out_dir, i, "csv"), os.str());
    }
  }
  std::cerr << "wrote " << c.scenes << " scenes to " << c.out_dir << "\n";
  return kExitOk;
}

int cmd_run(const pgf::RunConfig& c) {
  const pgf::RunReport rep = pgf::run_with_baseline(c);
  if (c.out_dir.empty()) {
    std::cout << pgf::dump_json(rep.metrics);
  } else {
    pgf::write_run_outputs(c, rep);
    std::cerr << "wrote metrics, detections" << (c.dump_heatmaps ? ", heatmaps" : "") << " to "
              << c.out_dir << "\n";
  }
  std::cerr << "mAP " << rep.metrics["configured"]["map"].get<double>() << " ("
            << c.toggles.str() << "), baseline "
            << rep.metrics["baseline"]["map"].get<double>() << "\n";
  return kExitOk;
}

int cmd_eval(const pgf::RunConfig& c, const std::string& detections, const std::string& scene_dir) {
  std::vector<std::vector<pgf::Box7>> gts(c.scenes);
  for (std::size_t i = 0; i < c.scenes; ++i) {
    if (scene_dir.empty()) {
      gts[i] = pgf::generate_scene(c.scene, pgf::scene_seed(c.seed, i)).boxes;
    } else {
      const std::string path = scene_file(scene_dir, i, "pgf");
      if (!fs::exists(path)) throw InvalidInput("eval: missing scene file " + path);
      gts[i] = pgf::load_scene(path).boxes;
    }
  }
  std::ifstream is(detections);
  if (!is) throw InvalidInput("eval: cannot open detections " + detections);
  std::vector<std::vector<pgf::Box7>> dets;
  try {
    dets = pgf::read_detections_csv(is, c.scenes);
  } catch (const std::runtime_error& e) {
    throw InvalidInput(e.what());
  }
  const pgf::EvalResult r = pgf::evaluate(dets, gts, c.num_classes());
  pgf::Json doc{{"schema", "pgf-metrics/1"},
                {"timestamp", pgf::utc_timestamp()},
                {"scenes", c.scenes},
                {"evaluation", pgf::eval_to_json(r, c.scene.classes)}};
  emit(c, "eval.json", pgf::dump_json(doc));
  std::cerr << "mAP " << r.map << "\n";
  return kExitOk;
}

int cmd_ablate(const pgf::RunConfig& c, bool check) {
  const pgf::AblationTable t = pgf::ablate(c, c.ablation_seeds);
  const std::string csv = pgf::ablation_csv(t);
  if (c.out_dir.empty()) {
    std::cout << csv;
  } else {
    fs::create_directories(c.out_dir);
    pgf::write_text((fs::path(c.out_dir) / "ablation.csv").string(), csv);
    pgf::write_text((fs::path(c.out_dir) / "ablation.json").string(),
                    pgf::dump_json(pgf::ablation_to_json(t)));
    std::cerr << "wrote ablation.csv, ablation.json to " << c.out_dir << "\n";
  }
  std::cerr << "MBA delta " << t.mba_delta() << ", CDH delta " << t.cdh_delta()
            << ", monotone " << (t.monotone() ? "yes" : "no") << "\n";
  if (check && !t.direction_holds()) {
    std::cerr << "ablation direction check failed\n";
    return kExitProperty;
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance) {
  if (instances < 1) throw InvalidInput("gradcheck: --instances must be >= 1");
  const auto summary = pgf::run_gradcheck(seed, instances);
  bool ok = true;
  std::printf("%-20s %9s %14s  %s\n", "op", "instances", "max_rel_error", "status");
  for (const auto& s : summary) {
    const bool pass = s.max_rel_error < tolerance;
    ok = ok && pass;
    std::printf("%-20s %9zu %14.3e  %s\n", s.name.c_str(), s.instances, s.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitProperty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panoptic-guided BEV detection data path"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, eval_flags, ablate_flags;
  bool gen_csv = false;
  auto* gen = app.add_subcommand("gen", "write synthetic scenes to --out");
  gen_flags.attach(gen);
  gen->add_flag("--csv", gen_csv, "also write CSV copies");

  bool dump = false;
  auto* run = app.add_subcommand("run", "run the pipeline and write metrics");
  run_flags.attach(run);
  run->add_flag("--dump-heatmaps", dump, "write 16-bit PGM and CSV heatmaps (config key: dump_heatmaps)");

  std::string detections;
  std::string scene_dir;
  auto* eval = app.add_subcommand("eval", "score a detections CSV against scenes");
  eval_flags.attach(eval);
  eval->add_option("--detections", detections, "CSV with header " + std::string(pgf::kDetectionsCsvHeader))
      ->required();
  eval->add_option("--scene-dir", scene_dir, "directory written by 'gen' (default: regenerate)");

  std::optional<std::string> seeds;
  bool check = false;
  auto* ablate = app.add_subcommand("ablate", "four-row toggle ablation");
  ablate_flags.attach(ablate);
  ablate->add_option("--seeds", seeds, "comma list of run seeds (config key: ablation_seeds)");
  ablate->add_flag("--check", check, "exit 2 unless the MBA and CDH mean deltas are positive");

  std::uint64_t gc_seed = 1;
  std::size_t gc_instances = 20;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", gc_seed, "first instance seed");
  gradcheck->add_option("--instances", gc_instances, "seeded instances per op");
  gradcheck->add_option("--tolerance", gc_tol, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_instances, gc_tol);
    if (gen->parsed()) return cmd_gen(resolve(gen_flags.overrides(load_json(gen_flags.config_path))), gen_csv);
    if (run->parsed()) {
      pgf::Json doc = run_flags.overrides(load_json(run_flags.config_path));
      if (dump) doc["dump_heatmaps"] = true;
      return cmd_run(resolve(doc));
    }
    if (eval->parsed())
      return cmd_eval(resolve(eval_flags.overrides(load_json(eval_flags.config_path))), detections, scene_dir);
    if (ablate->parsed()) {
      pgf::Json doc = ablate_flags.overrides(load_json(ablate_flags.config_path));
      if (seeds) {
        pgf::Json list = pgf::Json::array();
        std::stringstream ss(*seeds);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          try {
            std::size_t used = 0;
            const auto v = std::stoull(tok, &used);
            if (used != tok.size() || tok.front() == '-') throw std::invalid_argument(tok);
            list.push_back(v);
          } catch (const std::logic_error&) {
            throw InvalidInput("--seeds: '" + tok + "' is not a non-negative integer");
          }
        }
        doc["ablation_seeds"] = list;
      }
      return cmd_ablate(resolve(doc), check);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
