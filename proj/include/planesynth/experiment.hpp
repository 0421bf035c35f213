#pragma once

// One seeded fitting run described by a flat configuration, shared by the
// command-line tool and the acceptance runs. All randomness derives from the
// run seed: the scene generator, the placement generator ("placement"
// substream) and block sampling.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/fit.hpp"
#include "planesynth/io.hpp"
#include "planesynth/optim.hpp"
#include "planesynth/plane_sampler.hpp"
#include "planesynth/scene_lab.hpp"
#include "planesynth/supervision.hpp"

namespace planesynth {

struct RunConfig {
  // Generated scene ("general", "uniform", "aggregated", "occlusion",
  // "recovery", "single") or a path to a scene JSON file.
  std::string scene{"uniform"};
  std::uint64_t seed{1};
  std::size_t planes{kFamilyBins};
  PlacementKind placement{PlacementKind::Local};
  std::string schedule{"uopt"};
  std::size_t steps{300};
  double lr{0.05};
  double lr_content_stage2{0.01};
  LossConfig loss{};
  std::size_t log_every{10};
  Rig rig{};
  std::filesystem::path out{"out"};

  bool generated_scene() const {
    return scene == "general" || scene == "uniform" || scene == "aggregated" || scene == "occlusion" ||
           scene == "recovery" || scene == "single";
  }

  void validate() const {
    if (planes < 1) throw InvalidArgument("--planes must be >= 1");
    if (steps < 1) throw InvalidArgument("--steps must be >= 1");
    if (schedule != "uopt" && schedule != "aopt") throw InvalidArgument("--schedule must be uopt or aopt");
    if (!(lr > 0.0) || !(lr_content_stage2 > 0.0)) throw InvalidArgument("learning rates must be > 0");
    if (log_every < 1) throw InvalidArgument("--log-every must be >= 1");
    if (rig.height < 2 || rig.width < 2 || !(rig.focal > 0.0)) throw InvalidArgument("rig needs dims >= 2 and focal > 0");
    loss.validate();
    if (!generated_scene() && !std::filesystem::exists(scene))
      throw IoError("scene file '" + scene + "' does not exist");
  }

  OptSchedule opt_schedule() const {
    return schedule == "aopt" ? OptSchedule::aopt(steps, lr, lr_content_stage2, seed) : OptSchedule::uopt(steps, lr, seed);
  }
};

struct PreparedRun {
  SyntheticScene scene;
  CameraMotion motion;
  Rig rig;
  FitProblem problem;
  FitConfig fit;
};

inline PreparedRun prepare_run(const RunConfig& cfg) {
  cfg.validate();
  PreparedRun p;
  p.rig = cfg.rig;
  if (cfg.scene == "general" || cfg.scene == "uniform" || cfg.scene == "aggregated") {
    const auto b = make_benchmark_scene(parse_family(cfg.scene), cfg.seed, cfg.rig);
    p.scene = b.scene;
    p.motion = b.motion;
  } else if (cfg.scene == "occlusion") {
    const auto b = occlusion_scene(cfg.seed, cfg.rig);
    p.scene = b.scene;
    p.motion = b.motion;
  } else if (cfg.scene == "recovery") {
    const auto b = recovery_scene(cfg.seed, cfg.rig).bench;
    p.scene = b.scene;
    p.motion = b.motion;
  } else if (cfg.scene == "single") {
    const auto b = single_plane_scene(cfg.seed, 4.0, cfg.rig);
    p.scene = b.scene;
    p.motion = b.motion;
  } else {
    const SceneFile f = load_scene_file(cfg.scene);
    p.scene = f.scene;
    p.motion = f.motion;
    p.rig = f.rig;
  }
  p.problem = make_fit_problem(p.scene, p.rig, p.motion);
  p.fit.bins = bins_from_depth_range(p.scene.z_min, p.scene.z_max, cfg.planes);
  p.fit.placement = cfg.placement;
  p.fit.schedule = cfg.opt_schedule();
  p.fit.loss = cfg.loss;
  p.fit.log_every = cfg.log_every;
  p.fit.seed = substream(cfg.seed, "placement");
  return p;
}

inline FitResult run_fit(const RunConfig& cfg) {
  PreparedRun p = prepare_run(cfg);
  return fit(std::move(p.problem), std::move(p.fit));
}

inline RunInfo run_info(const RunConfig& cfg, std::string command = "fit") {
  RunInfo info;
  info.command = std::move(command);
  info.scene = cfg.scene;
  info.placement = std::string(to_string(cfg.placement));
  info.schedule = cfg.schedule;
  info.planes = cfg.planes;
  info.steps = cfg.steps;
  info.seed = cfg.seed;
  info.loss = cfg.loss;
  return info;
}

// ---------------------------------------------------------------------------
// Sweep tables

struct SweepRow {
  std::string arm;
  std::uint64_t seed{0};
  double psnr{0}, ssim{0}, rv{0}, total{0};
};

inline double median(std::vector<double> v) { return median_of(std::move(v)); }

// Per-seed rows in run order followed by one median row per arm.
inline std::vector<SweepRow> with_medians(const std::vector<SweepRow>& rows, const std::vector<std::string>& arms) {
  std::vector<SweepRow> out = rows;
  for (const std::string& arm : arms) {
    std::vector<double> p, s, r, t;
    for (const SweepRow& row : rows)
      if (row.arm == arm) {
        p.push_back(row.psnr);
        s.push_back(row.ssim);
        r.push_back(row.rv);
        t.push_back(row.total);
      }
    if (p.empty()) continue;
    out.push_back({arm, 0, median(p), median(s), median(r), median(t)});
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, std::size_t per_seed_rows) {
  std::string s = "arm,seed,psnr,ssim,rv,total\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const SweepRow& r = rows[k];
    s += r.arm + "," + (k < per_seed_rows ? std::to_string(r.seed) : std::string("median"));
    for (double v : {r.psnr, r.ssim, r.rv, r.total}) s += "," + format_number(v);
    s += "\n";
  }
  return s;
}

inline std::string sweep_markdown(const std::vector<SweepRow>& rows, std::size_t per_seed_rows, const std::string& axis) {
  std::string s = "| " + axis + " | seed | PSNR | SSIM | RV | total loss |\n|---|---|---|---|---|---|\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const SweepRow& r = rows[k];
    const bool med = k >= per_seed_rows;
    s += "| " + (med ? "**" + r.arm + "**" : r.arm) + " | " + (med ? std::string("median") : std::to_string(r.seed));
    for (double v : {r.psnr, r.ssim, r.rv, r.total}) s += " | " + format_number(v);
    s += " |\n";
  }
  return s;
}

}  // namespace planesynth
