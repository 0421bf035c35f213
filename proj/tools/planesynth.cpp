// planesynth: fit plane stacks to synthetic scenes, sweep placements and
// schedules, render stored stacks and run the self-check suites.
//
// Exit codes: 0 success, 1 failed check or unexpected error, 2 configuration
// error, 3 the fit diverged.

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planesynth.hpp"
#include "planesynth/testing/self_check.hpp"

namespace fs = std::filesystem;
using namespace planesynth;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

// Thrown for invalid flag or config values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run options shared by fit and sweep

struct RunOptions {
  RunConfig cfg;
  std::string placement{"local"};
  std::string mask{"on"};
  std::string config_path;
  std::map<std::string, CLI::Option*> flags;

  void add_to(CLI::App& app) {
    flags["scene"] = app.add_option("--scene", cfg.scene,
                                    "general|uniform|aggregated|occlusion|recovery|single or a scene JSON path");
    flags["planes"] = app.add_option("--planes", cfg.planes, "number of planes N");
    flags["placement"] = app.add_option("--placement", placement, "random|equal|global|local");
    flags["schedule"] = app.add_option("--schedule", cfg.schedule, "uopt|aopt");
    flags["steps"] = app.add_option("--steps", cfg.steps, "optimisation steps");
    flags["lr"] = app.add_option("--lr", cfg.lr, "content learning rate (A-opt stage 1 rate)");
    flags["lr_content_stage2"] = app.add_option("--lr-stage2", cfg.lr_content_stage2, "A-opt stage 2 content rate");
    flags["lambda"] = app.add_option("--lambda", cfg.loss.lambda, "reprojection loss weight");
    flags["beta"] = app.add_option("--beta", cfg.loss.beta, "smoothness weight");
    flags["occ_c"] = app.add_option("--occ-c", cfg.loss.occ_c, "occlusion threshold constant c");
    flags["scale"] = app.add_option("--scale", cfg.loss.scale, "plane scale s");
    flags["mask"] = app.add_option("--mask", mask, "occlusion mask on|off");
    flags["seed"] = app.add_option("--seed", cfg.seed, "run seed");
    flags["log_every"] = app.add_option("--log-every", cfg.log_every, "history row interval");
    flags["height"] = app.add_option("--height", cfg.rig.height, "image height of generated scenes");
    flags["width"] = app.add_option("--width", cfg.rig.width, "image width of generated scenes");
    flags["focal"] = app.add_option("--focal", cfg.rig.focal, "focal length in pixels");
    flags["out"] = app.add_option("--out", cfg.out, "output directory");
    app.add_option("--config", config_path, "JSON config; its values override flags");
  }

  // Applies the config file, printing where every overridden value came from.
  void apply_config() {
    if (config_path.empty()) return;
    if (!fs::exists(config_path)) throw ConfigError("config file '" + config_path + "' does not exist");
    Json j;
    try {
      j = read_json_file(config_path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (!j.is_object()) throw ConfigError("config file '" + config_path + "' must hold a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const Json& v = it.value();
      try {
        if (key == "scene") cfg.scene = v.get<std::string>();
        else if (key == "planes") cfg.planes = v.get<std::size_t>();
        else if (key == "placement") placement = v.get<std::string>();
        else if (key == "schedule") cfg.schedule = v.get<std::string>();
        else if (key == "steps") cfg.steps = v.get<std::size_t>();
        else if (key == "lr") cfg.lr = v.get<double>();
        else if (key == "lr_content_stage2") cfg.lr_content_stage2 = v.get<double>();
        else if (key == "lambda") cfg.loss.lambda = v.get<double>();
        else if (key == "beta") cfg.loss.beta = v.get<double>();
        else if (key == "occ_c") cfg.loss.occ_c = v.get<double>();
        else if (key == "scale") cfg.loss.scale = v.get<double>();
        else if (key == "mask") mask = v.get<std::string>();
        else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (key == "log_every") cfg.log_every = v.get<std::size_t>();
        else if (key == "height") cfg.rig.height = v.get<std::size_t>();
        else if (key == "width") cfg.rig.width = v.get<std::size_t>();
        else if (key == "focal") cfg.rig.focal = v.get<double>();
        else if (key == "out") cfg.out = v.get<std::string>();
        else throw ConfigError("unknown config key '" + key + "' in '" + config_path + "'");
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + key + "' in '" + config_path + "': " + e.what());
      }
      const auto f = flags.find(key);
      const bool on_cli = f != flags.end() && f->second->count() > 0;
      std::cout << "config: " << key << " = " << v.dump() << " from " << config_path
                << (on_cli ? " (overrides the command-line flag)" : "") << "\n";
    }
  }

  RunConfig resolve() {
    apply_config();
    try {
      cfg.placement = parse_placement(placement);
      cfg.loss.mask = parse_mask_mode(mask);
      cfg.validate();
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    } catch (const InvalidRange& e) {
      throw ConfigError(e.what());
    }
    return cfg;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string fmt(double v) { return format_number(v); }

// ---------------------------------------------------------------------------
// fit

int cmd_fit(RunOptions& opts) {
  const RunConfig cfg = opts.resolve();
  PreparedRun run = prepare_run(cfg);
  const View eval = run.problem.metrics_view();
  const View source = run.problem.source;
  const std::size_t planes = run.fit.planes();
  const std::string placement(to_string(cfg.placement));
  FitResult res = fit(std::move(run.problem), std::move(run.fit));

  ensure_dir(cfg.out);
  save_stack(cfg.out / "stack", res.stack);
  write_text_file(cfg.out / "history.csv", history_csv(res.history, planes));
  write_png(cfg.out / "source_render.png", render_image(res.stack));
  write_png(cfg.out / "source_gt.png", source.image);
  const auto novel =
      render_novel_view(res.stack, eval.K, eval.pose, std::array<std::size_t, 2>{eval.image.dim(0), eval.image.dim(1)});
  write_png(cfg.out / "target_render.png", novel.image);
  write_png(cfg.out / "target_gt.png", eval.image);
  write_text_file(cfg.out / "summary.json", summary_json(run_info(cfg), res).dump(2) + "\n");
  write_text_file(cfg.out / "offsets.json", offsets_json(placement, res).dump(2) + "\n");

  std::cout << "fit " << cfg.scene << " seed " << cfg.seed << " placement " << placement << " schedule "
            << cfg.schedule << ": total " << fmt(res.final_loss.total) << ", rv " << fmt(res.final_rv) << ", psnr "
            << fmt(res.final_psnr) << ", ssim " << fmt(res.final_ssim) << "\n";
  std::cout << "wrote " << cfg.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_sweep(RunOptions& opts, const std::string& axis, std::string arms_text, const std::string& seeds_text) {
  const RunConfig base = opts.resolve();
  if (axis != "placement" && axis != "schedule" && axis != "mask")
    throw ConfigError("--axis must be placement, schedule or mask");
  if (arms_text.empty())
    arms_text = axis == "placement" ? "random,equal,global,local" : axis == "schedule" ? "uopt,aopt" : "on,off";
  const auto arms = split_list(arms_text);
  std::vector<std::uint64_t> seeds;
  try {
    for (const auto& s : split_list(seeds_text)) seeds.push_back(std::stoull(s));
  } catch (const std::exception&) {
    throw ConfigError("--seeds must be a comma-separated list of integers");
  }
  if (arms.empty() || seeds.empty()) throw ConfigError("sweep needs at least one arm and one seed");

  // Validate every arm before spending time on runs.
  std::vector<RunConfig> arm_cfgs;
  for (const auto& arm : arms) {
    RunConfig c = base;
    try {
      if (axis == "placement") c.placement = parse_placement(arm);
      if (axis == "schedule") c.schedule = arm;
      if (axis == "mask") c.loss.mask = parse_mask_mode(arm);
      c.validate();
    } catch (const std::exception& e) {
      throw ConfigError("arm '" + arm + "': " + e.what());
    }
    arm_cfgs.push_back(c);
  }

  ensure_dir(base.out / "runs");
  std::vector<SweepRow> rows;
  for (std::uint64_t seed : seeds)
    for (std::size_t a = 0; a < arms.size(); ++a) {
      RunConfig c = arm_cfgs[a];
      c.seed = seed;
      const FitResult res = run_fit(c);
      write_text_file(base.out / "runs" / (arms[a] + "_seed" + std::to_string(seed) + ".csv"),
                      history_csv(res.history, res.stack.planes()));
      rows.push_back({arms[a], seed, res.final_psnr, res.final_ssim, res.final_rv, res.final_loss.total});
      std::cout << axis << " " << arms[a] << " seed " << seed << ": psnr " << fmt(res.final_psnr) << ", rv "
                << fmt(res.final_rv) << ", total " << fmt(res.final_loss.total) << "\n";
    }
  const auto table = with_medians(rows, arms);
  write_text_file(base.out / "sweep.csv", sweep_csv(table, rows.size()));
  const std::string md = sweep_markdown(table, rows.size(), axis);
  write_text_file(base.out / "sweep.md", md);
  std::cout << "\n" << md;
  return 0;
}

// ---------------------------------------------------------------------------
// render

RigidTransform parse_pose(const std::string& text) {
  std::vector<double> v;
  try {
    for (const auto& s : split_list(text)) v.push_back(std::stod(s));
  } catch (const std::exception&) {
    throw ConfigError("--pose expects tx,ty,tz[,rx,ry,rz] (rotation in degrees)");
  }
  if (v.size() != 3 && v.size() != 6) throw ConfigError("--pose expects tx,ty,tz[,rx,ry,rz] (rotation in degrees)");
  RigidTransform p = RigidTransform::translation(v[0], v[1], v[2]);
  if (v.size() == 6) {
    const double k = M_PI / 180.0;
    p.R = (Eigen::AngleAxisd(v[3] * k, Vec3::UnitX()) * Eigen::AngleAxisd(v[4] * k, Vec3::UnitY()) *
           Eigen::AngleAxisd(v[5] * k, Vec3::UnitZ()))
              .toRotationMatrix();
  }
  return p;
}

int cmd_render(const std::string& stack_dir, const std::string& pose_text, std::size_t dolly, double dolly_step,
               const fs::path& out, const std::string& reference) {
  if (!fs::exists(fs::path(stack_dir) / "stack.json"))
    throw ConfigError("stack directory '" + stack_dir + "' has no stack.json");
  const PlaneStack stack = load_stack(stack_dir);
  std::vector<RigidTransform> poses;
  if (dolly > 0) {
    for (std::size_t k = 1; k <= dolly; ++k) poses.push_back(RigidTransform::translation(double(k) * dolly_step, 0, 0));
  } else {
    poses.push_back(pose_text.empty() ? RigidTransform::identity() : parse_pose(pose_text));
  }
  ensure_dir(out);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const RenderOutput r = render_novel_view(stack, stack.K, poses[k]);
    char name[32];
    std::snprintf(name, sizeof name, "render_%02zu.png", k);
    write_png(out / name, r.image);
    std::cout << "wrote " << (out / name).string();
    if (!reference.empty()) {
      const Tensor ref = read_png(reference);
      std::cout << " psnr vs " << reference << ": " << fmt(psnr(read_png(out / name), ref));
    }
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// check, attn-check, attn-bench

int report(const std::vector<testing::SuiteResult>& suites) {
  std::size_t failed = 0;
  for (const auto& s : suites) {
    std::cout << s.name << ": " << s.passed << " passed, " << s.failed << " failed\n";
    for (const auto& f : s.failures) std::cout << "  FAIL " << f << "\n";
    failed += s.failed;
  }
  std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << "\n";
  return failed == 0 ? 0 : kExitFailure;
}

int cmd_check() { return report(testing::run_all_suites()); }

int cmd_attn_check() {
  testing::SuiteResult g{"attention-gradients", 0, 0, {}};
  testing::expect_attention_gradients(g, 104, {});
  return report({testing::attention_suite(), g});
}

int cmd_attn_bench(std::size_t h, std::size_t w, std::size_t c_in, std::size_t c_h, std::string ms_text,
                   std::uint64_t seed) {
  if (h < 1 || w < 1 || c_in < 1 || c_h < 1) throw ConfigError("attn-bench needs positive dimensions");
  const std::size_t hw = h * w;
  std::vector<std::size_t> ms;
  if (ms_text.empty()) {
    for (std::size_t m : {std::size_t(1), hw / 16, hw / 4, hw / 2, hw})
      if (m >= 1 && (ms.empty() || m != ms.back())) ms.push_back(m);
  } else {
    try {
      for (const auto& s : split_list(ms_text)) ms.push_back(std::stoul(s));
    } catch (const std::exception&) {
      throw ConfigError("--m expects a comma-separated list of sample counts");
    }
  }
  AttentionProblem prob = testing::random_attention_problem(h, w, c_in, c_h, seed);
  const Tensor full = full_self_attention(prob);
  std::mt19937_64 rng(substream(seed, "block-sampling"));
  std::cout << "| M | block | est. bytes (f64) | measured peak bytes | est./measured | est. matrix bytes (f32) | "
               "max abs dev. from full |\n|---|---|---|---|---|---|---|\n";
  for (std::size_t m : ms) {
    if (m < 1 || m > hw) throw ConfigError("sample count " + std::to_string(m) + " outside [1, H*W]");
    prob.samples = m;
    const BlockSampleSpec spec = sample_block(h, w, m, rng);
    AllocationTracker::reset();
    double dev = 0.0;
    {
      const AttentionCache c = bs_self_attention_cached(prob, spec);
      dev = testing::max_abs_diff(c.y, full);
    }
    const std::size_t measured = AllocationTracker::peak();
    const auto est = attention_memory_estimate(h, w, m, c_h, sizeof(double));
    const auto est32 = attention_memory_estimate(h, w, m, c_h, sizeof(float));
    std::cout << "| " << m << " | " << spec.bh << "x" << spec.bw << " @(" << spec.row << "," << spec.col << ") | "
              << est.total() << " | " << measured << " | " << fmt(double(est.total()) / double(measured)) << " | "
              << est32.matrix_bytes << " | " << fmt(dev) << " |\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// make-scene

int cmd_make_scene(const std::string& name, std::uint64_t seed, const Rig& rig, const fs::path& out,
                   const std::string& images) {
  RunConfig cfg;
  cfg.scene = name;
  cfg.seed = seed;
  cfg.rig = rig;
  if (!cfg.generated_scene()) throw ConfigError("unknown scene generator '" + name + "'");
  PreparedRun run;
  try {
    run = prepare_run(cfg);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  save_scene_file(out, SceneFile{run.scene, run.rig, run.motion});
  std::cout << "wrote " << out.string() << "\n";
  if (!images.empty()) {
    ensure_dir(images);
    write_png(fs::path(images) / "source.png", run.problem.source.image);
    write_pnm(fs::path(images) / "source.ppm", run.problem.source.image);
    Tensor depth = run.problem.source.depth;
    for (double& z : depth.raw()) z = (z - run.scene.z_min) / (run.scene.z_max - run.scene.z_min);
    write_png(fs::path(images) / "source_depth.png", depth, 16);
    for (std::size_t k = 0; k < run.problem.targets.size(); ++k)
      write_png(fs::path(images) / ("target_" + std::to_string(k) + ".png"), run.problem.targets[k].image);
    std::cout << "wrote images to " << images << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Plane-stack view synthesis: fitting, sweeps, rendering and self-checks"};
  app.require_subcommand(1);

  RunOptions fit_opts;
  auto* fit_cmd = app.add_subcommand("fit", "fit a plane stack to a scene and write its artifacts");
  fit_opts.add_to(*fit_cmd);

  RunOptions sweep_opts;
  std::string axis = "placement", arms, seeds = "1,2,3,4,5";
  auto* sweep_cmd = app.add_subcommand("sweep", "paired runs over one axis; CSV and markdown tables");
  sweep_opts.add_to(*sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "placement|schedule|mask");
  sweep_cmd->add_option("--arms", arms, "comma-separated arms (default: every value of the axis)");
  sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds");

  std::string stack_dir, pose, reference;
  std::size_t dolly = 0;
  double dolly_step = 0.05;
  fs::path render_out = "render";
  auto* render_cmd = app.add_subcommand("render", "render a stored stack from new poses");
  render_cmd->add_option("--stack", stack_dir, "stack directory written by fit")->required();
  render_cmd->add_option("--pose", pose, "tx,ty,tz[,rx,ry,rz] (degrees); identity when absent");
  render_cmd->add_option("--dolly", dolly, "number of lateral dolly frames (overrides --pose)");
  render_cmd->add_option("--dolly-step", dolly_step, "lateral distance between dolly frames");
  render_cmd->add_option("--reference", reference, "PNG to compare each frame against");
  render_cmd->add_option("--out", render_out, "output directory");

  auto* check_cmd = app.add_subcommand("check", "run the invariant, oracle, gradient and attention suites");
  auto* attn_check_cmd = app.add_subcommand("attn-check", "attention oracle and gradient checks");

  std::size_t bh = 16, bw = 16, bc = 8, bch = 4;
  std::string bms;
  std::uint64_t bseed = 1;
  auto* attn_bench_cmd = app.add_subcommand("attn-bench", "memory and accuracy of block sampling across M");
  attn_bench_cmd->add_option("--height", bh);
  attn_bench_cmd->add_option("--width", bw);
  attn_bench_cmd->add_option("--channels", bc, "C_in");
  attn_bench_cmd->add_option("--hidden", bch, "C_h");
  attn_bench_cmd->add_option("--m", bms, "comma-separated sample counts");
  attn_bench_cmd->add_option("--seed", bseed);

  std::string scene_name = "uniform", images;
  std::uint64_t scene_seed = 1;
  Rig scene_rig;
  fs::path scene_out = "scene.json";
  auto* make_scene_cmd = app.add_subcommand("make-scene", "write a generated scene as JSON");
  make_scene_cmd->add_option("--scene", scene_name, "general|uniform|aggregated|occlusion|recovery|single");
  make_scene_cmd->add_option("--seed", scene_seed);
  make_scene_cmd->add_option("--height", scene_rig.height);
  make_scene_cmd->add_option("--width", scene_rig.width);
  make_scene_cmd->add_option("--focal", scene_rig.focal);
  make_scene_cmd->add_option("--out", scene_out, "scene JSON path");
  make_scene_cmd->add_option("--images", images, "also write ground-truth images to this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit_opts);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, axis, arms, seeds);
    if (render_cmd->parsed()) return cmd_render(stack_dir, pose, dolly, dolly_step, render_out, reference);
    if (check_cmd->parsed()) return cmd_check();
    if (attn_check_cmd->parsed()) return cmd_attn_check();
    if (attn_bench_cmd->parsed()) return cmd_attn_bench(bh, bw, bc, bch, bms, bseed);
    if (make_scene_cmd->parsed()) return cmd_make_scene(scene_name, scene_seed, scene_rig, scene_out, images);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const NonFiniteGradient& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const NonFiniteUpdate& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
