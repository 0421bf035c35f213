#pragma once

// Synthetic scenes made of textured fronto-parallel rectangles, rendered
// analytically (one exact ray test per pixel), plus the benchmark families
// used by sweeps and acceptance runs.
//
// Rectangles live in the canonical frame, which is the source camera frame.
// A rectangle's extent is given in scene units at its own depth. Textures are
// functions of the source-image direction (X/Z, Y/Z), so the source view
// samples them at pixel centres and every other view sees the same pattern
// reprojected.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/fit.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/metrics.hpp"
#include "planesynth/plane_sampler.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Named substream of a run seed, e.g. substream(seed, "placement").
inline std::uint64_t substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : name) {
    h ^= std::uint8_t(c);
    h *= 0x100000001B3ull;
  }
  return splitmix64(seed ^ h);
}

// ---------------------------------------------------------------------------
// Textures

struct Texture {
  std::string kind{"noise"};  // noise | solid
  std::uint64_t seed{0};

  friend bool operator==(const Texture&, const Texture&) = default;
};

// Coarsest noise cell in normalised image units (8 px at focal 64) and the
// number of octaves; the finest cell is 4 px.
inline constexpr double kNoiseCell = 0.125;
inline constexpr int kNoiseOctaves = 2;

namespace detail {

inline double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j, int channel, int octave) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(std::uint64_t(i) * 0x9E3779B1ull + std::uint64_t(channel) * 7919ull +
                                                 std::uint64_t(octave) * 104729ull));
  h = splitmix64(h ^ std::uint64_t(j));
  return double(h >> 11) * 0x1.0p-53;
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double value_noise(std::uint64_t seed, double u, double v, int channel, int octave) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto i = std::int64_t(fu), j = std::int64_t(fv);
  const double a = fade(u - fu), b = fade(v - fv);
  const double v00 = lattice(seed, i, j, channel, octave), v10 = lattice(seed, i + 1, j, channel, octave);
  const double v01 = lattice(seed, i, j + 1, channel, octave), v11 = lattice(seed, i + 1, j + 1, channel, octave);
  return (1 - b) * ((1 - a) * v00 + a * v10) + b * ((1 - a) * v01 + a * v11);
}

}  // namespace detail

// Colour of a texture at normalised image direction (u, v) = (X/Z, Y/Z).
inline std::array<double, 3> texture_color(const Texture& tex, double u, double v) {
  std::array<double, 3> c{};
  if (tex.kind == "solid") {
    for (int k = 0; k < 3; ++k) c[k] = 0.15 + 0.7 * detail::lattice(tex.seed, 0, 0, k, 0);
    return c;
  }
  if (tex.kind != "noise") throw InvalidArgument("unknown texture kind '" + tex.kind + "'");
  for (int k = 0; k < 3; ++k) {
    double acc = 0.0, amp = 1.0, norm = 0.0, cell = kNoiseCell;
    for (int o = 0; o < kNoiseOctaves; ++o) {
      acc += amp * detail::value_noise(tex.seed, u / cell, v / cell, k, o);
      norm += amp;
      amp *= 0.5;
      cell *= 0.5;
    }
    c[k] = 0.1 + 0.8 * (acc / norm);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Scenes

struct Layer {
  double z{1.0};
  std::array<double, 4> rect{-1, -1, 1, 1};  // x0, y0, x1, y1 in scene units at depth z
  Texture texture{};

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct SyntheticScene {
  std::vector<Layer> layers;  // sorted near to far
  std::array<double, 3> background{0.5, 0.5, 0.5};
  double z_min{1.0};
  double z_max{20.0};

  void sort_layers() {
    std::stable_sort(layers.begin(), layers.end(), [](const Layer& a, const Layer& b) { return a.z < b.z; });
  }

  void validate() const {
    if (!(z_min > 0.0) || !(z_max > z_min)) throw InvalidRange("scene needs 0 < z_min < z_max");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const Layer& l = layers[k];
      if (!(l.z >= z_min) || !(l.z <= z_max))
        throw InvalidRange("layer " + std::to_string(k) + " depth " + std::to_string(l.z) + " lies outside [z_min, z_max]");
      if (!(l.rect[2] > l.rect[0]) || !(l.rect[3] > l.rect[1]))
        throw InvalidArgument("layer " + std::to_string(k) + " has an empty rectangle");
      if (k > 0 && l.z < layers[k - 1].z) throw InvalidArgument("layers must be sorted near to far");
    }
  }

  friend bool operator==(const SyntheticScene&, const SyntheticScene&) = default;
};

struct RayHit {
  double depth{std::numeric_limits<double>::infinity()};  // camera-axial depth
  int layer{-1};
  Vec3 point{Vec3::Zero()};  // canonical frame
};

// Nearest rectangle along the ray o + s * dir (dir has unit camera-z).
inline RayHit trace(const SyntheticScene& scene, const Vec3& origin, const Vec3& dir) {
  RayHit best;
  for (std::size_t k = 0; k < scene.layers.size(); ++k) {
    const Layer& l = scene.layers[k];
    if (dir.z() <= 0.0) continue;
    const double s = (l.z - origin.z()) / dir.z();
    if (!(s > 0.0) || s >= best.depth) continue;
    const Vec3 p = origin + s * dir;
    if (p.x() >= l.rect[0] && p.x() < l.rect[2] && p.y() >= l.rect[1] && p.y() < l.rect[3]) {
      best.depth = s;
      best.layer = int(k);
      best.point = p;
    }
  }
  return best;
}

struct AnalyticRender {
  Tensor image;  // {H, W, 3}
  Tensor depth;  // {H, W}; background pixels get z_max
};

// pose maps camera points to the canonical frame (source <- camera).
inline AnalyticRender render_scene_analytic(const SyntheticScene& scene, const CameraIntrinsics& k,
                                            const RigidTransform& pose, std::size_t h, std::size_t w) {
  scene.validate();
  for (const Layer& l : scene.layers)
    if (pose.t.z() >= l.z - kDepthEpsilon)
      throw CameraInsideGeometry("camera at z=" + std::to_string(pose.t.z()) + " is not in front of the layer at z=" +
                                 std::to_string(l.z));
  AnalyticRender out{Tensor({h, w, 3}), Tensor({h, w})};
  const Mat3 kinv = k.inverse();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Vec3 dir = pose.R * (kinv * Vec3(double(x), double(y), 1.0));
      const RayHit hit = trace(scene, pose.t, dir);
      if (hit.layer < 0) {
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = scene.background[c];
        out.depth.at(y, x) = scene.z_max;
        continue;
      }
      const auto col = texture_color(scene.layers[hit.layer].texture, hit.point.x() / hit.point.z(),
                                     hit.point.y() / hit.point.z());
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = col[c];
      out.depth.at(y, x) = hit.depth;
    }
  return out;
}

// Ground-truth visibility of target pixels in the source camera (identity
// pose, intrinsics k_s, image h_s x w_s). A pixel is occluded when the source
// ray through its surface point meets a nearer surface first.
struct GroundTruthOcclusion {
  Tensor occluded;  // {H, W}
  Tensor valid;     // {H, W}: the surface point projects inside the source image
};

inline GroundTruthOcclusion ground_truth_occlusion(const SyntheticScene& scene, const CameraIntrinsics& k_t,
                                                   const RigidTransform& pose, std::size_t h, std::size_t w,
                                                   const CameraIntrinsics& k_s, std::size_t h_s, std::size_t w_s) {
  GroundTruthOcclusion g{Tensor({h, w}), Tensor({h, w})};
  const Mat3 kinv = k_t.inverse();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const RayHit hit = trace(scene, pose.t, pose.R * (kinv * Vec3(double(x), double(y), 1.0)));
      if (hit.layer < 0) continue;
      const Vec3& p = hit.point;
      const double xs = k_s.fx * p.x() / p.z() + k_s.cx, ys = k_s.fy * p.y() / p.z() + k_s.cy;
      if (!(xs >= 0.0 && xs <= double(w_s) - 1.0 && ys >= 0.0 && ys <= double(h_s) - 1.0)) continue;
      g.valid.at(y, x) = 1.0;
      const RayHit src = trace(scene, Vec3::Zero(), p / p.z());
      if (src.depth < p.z() - 1e-9) g.occluded.at(y, x) = 1.0;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Rigs and view sets

struct Rig {
  std::size_t height{64};
  std::size_t width{64};
  double focal{64.0};

  CameraIntrinsics intrinsics() const {
    return {focal, focal, (double(width) - 1.0) / 2.0, (double(height) - 1.0) / 2.0};
  }
};

// A target camera sitting at `position` in the canonical frame.
inline RigidTransform camera_at(double x, double y, double z) { return RigidTransform::translation(x, y, z); }

inline View make_view(const SyntheticScene& scene, const Rig& rig, const RigidTransform& pose) {
  const auto k = rig.intrinsics();
  auto r = render_scene_analytic(scene, k, pose, rig.height, rig.width);
  return View{std::move(r.image), std::move(r.depth), k, pose};
}

struct ViewPair {
  View source;
  View target;
  GroundTruthOcclusion occlusion;
};

inline ViewPair make_view_pair(const SyntheticScene& scene, const Rig& rig, const RigidTransform& target_pose) {
  ViewPair vp{make_view(scene, rig, RigidTransform::identity()), make_view(scene, rig, target_pose), {}};
  vp.occlusion = ground_truth_occlusion(scene, vp.target.K, target_pose, rig.height, rig.width, vp.source.K,
                                        rig.height, rig.width);
  return vp;
}

// Training views on a ring of radius `baseline` around the source camera
// (with small forward components) and a held-out view inside the ring.
struct CameraMotion {
  double baseline{0.15};
  std::size_t views{4};
  std::vector<double> forward;  // per training view; zero when absent
  double eval_forward{0.0};
};

inline FitProblem make_fit_problem(const SyntheticScene& scene, const Rig& rig, const CameraMotion& motion) {
  FitProblem p;
  p.source = make_view(scene, rig, RigidTransform::identity());
  const double b = motion.baseline;
  for (std::size_t k = 0; k < motion.views; ++k) {
    const double a = 2.0 * M_PI * double(k) / double(motion.views);
    const double f = k < motion.forward.size() ? motion.forward[k] : 0.0;
    p.targets.push_back(make_view(scene, rig, camera_at(b * std::cos(a), b * std::sin(a), f)));
  }
  p.eval = make_view(scene, rig, camera_at(0.5 * b, -0.5 * b, motion.eval_forward));
  return p;
}

// ---------------------------------------------------------------------------
// Benchmark families

enum class SceneFamily { General, Uniform, Aggregated };

inline std::string_view to_string(SceneFamily f) {
  switch (f) {
    case SceneFamily::General: return "general";
    case SceneFamily::Uniform: return "uniform";
    case SceneFamily::Aggregated: return "aggregated";
  }
  return "?";
}

inline SceneFamily parse_family(std::string_view s) {
  if (s == "general") return SceneFamily::General;
  if (s == "uniform") return SceneFamily::Uniform;
  if (s == "aggregated") return SceneFamily::Aggregated;
  throw InvalidArgument("unknown scene family '" + std::string(s) + "' (expected general|uniform|aggregated)");
}

inline constexpr double kSceneZMin = 1.0;
inline constexpr double kSceneZMax = 20.0;
inline constexpr std::size_t kFamilyBins = 8;

// Half extent of the source field of view at depth z, plus a margin that
// covers the parallax of the benchmark camera motions.
inline double half_view(const Rig& rig, double z) { return z * 0.5 * double(rig.width) / rig.focal; }
inline double backdrop_margin(double z) { return 0.4 * z + 0.5; }

inline Layer backdrop(const Rig& rig, double z, std::uint64_t seed) {
  const double e = half_view(rig, z) + backdrop_margin(z);
  return Layer{z, {-e, -e, e, e}, Texture{"noise", seed}};
}

// Rectangle covering normalised image coordinates [u0, u1] x [v0, v1] at depth z.
inline Layer patch(double z, double u0, double v0, double u1, double v1, std::uint64_t seed) {
  return Layer{z, {u0 * z, v0 * z, u1 * z, v1 * z}, Texture{"noise", seed}};
}

inline DisparityBins family_bins(std::size_t count = kFamilyBins) {
  return bins_from_depth_range(kSceneZMin, kSceneZMax, count);
}

// Depth of a point at in-bin offset v of bin i.
inline double depth_in_bin(const DisparityBins& bins, std::size_t i, double v) {
  return 1.0 / (bins.near_edge(i) - v * bins.width());
}

struct BenchmarkScene {
  SceneFamily family{SceneFamily::General};
  SyntheticScene scene;
  CameraMotion motion;
};

// 2-4 layers: a textured backdrop and up to three nearer patches.
inline SyntheticScene general_scene(const Rig& rig, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SyntheticScene s;
  s.z_min = kSceneZMin;
  s.z_max = kSceneZMax;
  const double zb = 8.0 + 12.0 * u(rng);
  s.layers.push_back(backdrop(rig, zb, rng()));
  const int extra = 1 + int(u(rng) * 3.0) % 3;
  for (int k = 0; k < extra; ++k) {
    const double d = 1.0 / zb + (1.0 - 1.0 / zb) * (0.15 + 0.8 * u(rng));
    const double half = 0.1 + 0.15 * u(rng);
    const double cu = -0.3 + 0.6 * u(rng), cv = -0.3 + 0.6 * u(rng);
    s.layers.push_back(patch(1.0 / d, cu - half, cv - half, cu + half, cv + half, rng()));
  }
  s.sort_layers();
  return s;
}

// Eight full-height strips, each one eighth of the source view wide and each
// at a random offset inside its own disparity bin. Strips extend under nearer
// neighbours so moving cameras never look through gaps.
inline SyntheticScene uniform_scene(const Rig& rig, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const DisparityBins bins = family_bins();
  std::vector<std::size_t> order(kFamilyBins);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> depth(kFamilyBins);
  for (std::size_t k = 0; k < kFamilyBins; ++k) depth[k] = depth_in_bin(bins, order[k], 0.2 + 0.6 * u(rng));
  const double uw = double(rig.width) / rig.focal / double(kFamilyBins);
  const double u_left = -0.5 * double(rig.width) / rig.focal;
  const double v_half = 0.5 * double(rig.height) / rig.focal + 0.5;
  constexpr double margin = 0.35;
  SyntheticScene s;
  s.z_min = kSceneZMin;
  s.z_max = kSceneZMax;
  for (std::size_t k = 0; k < kFamilyBins; ++k) {
    const double left = u_left + double(k) * uw, right = left + uw;
    // Extend across consecutive nearer neighbours only, up to the margin.
    double u0 = left - margin;
    for (std::size_t j = k; j-- > 0;)
      if (!(depth[j] < depth[k])) {
        u0 = std::max(u0, u_left + double(j + 1) * uw);
        break;
      }
    double u1 = right + margin;
    for (std::size_t j = k + 1; j < kFamilyBins; ++j)
      if (!(depth[j] < depth[k])) {
        u1 = std::min(u1, u_left + double(j) * uw);
        break;
      }
    s.layers.push_back(patch(depth[k], u0, -v_half, u1, v_half, rng()));
  }
  s.sort_layers();
  return s;
}

// Two clusters far apart in disparity: a backdrop in one of the two farthest
// bins and two patches sharing one of the two nearest bins.
inline SyntheticScene aggregated_scene(const Rig& rig, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const DisparityBins bins = family_bins();
  SyntheticScene s;
  s.z_min = kSceneZMin;
  s.z_max = kSceneZMax;
  const std::size_t far_bin = kFamilyBins - 2 + std::size_t(u(rng) * 2.0) % 2;
  s.layers.push_back(backdrop(rig, depth_in_bin(bins, far_bin, 0.2 + 0.6 * u(rng)), rng()));
  const std::size_t near_bin = std::size_t(u(rng) * 2.0) % 2;
  for (int k = 0; k < 2; ++k) {
    const double z = depth_in_bin(bins, near_bin, 0.2 + 0.6 * u(rng));
    const double half = 0.12 + 0.1 * u(rng);
    const double cu = (k == 0 ? -0.22 : 0.22) + 0.06 * (u(rng) - 0.5), cv = -0.2 + 0.4 * u(rng);
    s.layers.push_back(patch(z, cu - half, cv - half, cu + half, cv + half, rng()));
  }
  s.sort_layers();
  return s;
}

inline CameraMotion draw_motion(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> b(0.1, 0.2), f(-0.05, 0.05);
  CameraMotion m;
  m.baseline = b(rng);
  m.forward.resize(m.views);
  for (double& x : m.forward) x = f(rng);
  m.eval_forward = f(rng);
  return m;
}

inline BenchmarkScene make_benchmark_scene(SceneFamily family, std::uint64_t seed, const Rig& rig = {}) {
  std::mt19937_64 rng(substream(seed, std::string("scene/") + std::string(to_string(family))));
  BenchmarkScene b;
  b.family = family;
  switch (family) {
    case SceneFamily::General: b.scene = general_scene(rig, rng); break;
    case SceneFamily::Uniform: b.scene = uniform_scene(rig, rng); break;
    case SceneFamily::Aggregated: b.scene = aggregated_scene(rig, rng); break;
  }
  b.motion = draw_motion(rng);
  return b;
}

inline std::vector<BenchmarkScene> make_benchmark_suite(std::uint64_t seed, std::size_t count,
                                                        SceneFamily family = SceneFamily::General,
                                                        const Rig& rig = {}) {
  std::vector<BenchmarkScene> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(make_benchmark_scene(family, splitmix64(seed + k), rig));
  return out;
}

// Per-bin pixel counts of a ground-truth depth map (pixels outside the bins
// are ignored).
inline std::vector<std::size_t> disparity_histogram(const Tensor& depth, const DisparityBins& bins) {
  std::vector<std::size_t> h(bins.count, 0);
  for (double z : depth.data()) {
    const std::size_t b = bins.bin_of(1.0 / z);
    if (b < bins.count) ++h[b];
  }
  return h;
}

// ---------------------------------------------------------------------------
// Designated scenes

// A textured backdrop with one near patch in front of it; lateral camera
// motion uncovers backdrop regions next to the patch.
inline BenchmarkScene occlusion_scene(std::uint64_t seed, const Rig& rig = {}) {
  std::mt19937_64 rng(substream(seed, "scene/occlusion"));
  BenchmarkScene b;
  b.scene.z_min = kSceneZMin;
  b.scene.z_max = kSceneZMax;
  b.scene.layers.push_back(patch(1.6, -0.2, -0.22, 0.2, 0.22, rng()));
  b.scene.layers.push_back(backdrop(rig, 9.0, rng()));
  b.scene.sort_layers();
  b.motion.baseline = 0.18;
  return b;
}

// Three layers whose disparities sit strictly inside three distinct bins of
// the eight family bins (zero-based indices, default 1, 3 and 7).
struct RecoveryScene {
  BenchmarkScene bench;
  std::array<std::size_t, 3> bins{1, 3, 7};
  std::array<double, 3> disparity{};
};

inline RecoveryScene recovery_scene(std::uint64_t seed, const Rig& rig = {}, std::array<std::size_t, 3> layer_bins = {1, 3, 7}) {
  std::mt19937_64 rng(substream(seed, "scene/recovery"));
  std::uniform_real_distribution<double> u(0.25, 0.75);
  const DisparityBins bins = family_bins();
  RecoveryScene r;
  r.bins = layer_bins;
  r.bench.scene.z_min = kSceneZMin;
  r.bench.scene.z_max = kSceneZMax;
  std::array<double, 3> z{};
  for (std::size_t k = 0; k < 3; ++k) {
    z[k] = depth_in_bin(bins, r.bins[k], u(rng));
    r.disparity[k] = 1.0 / z[k];
  }
  r.bench.scene.layers.push_back(patch(z[0], -0.32, -0.3, 0.02, 0.06, rng()));
  r.bench.scene.layers.push_back(patch(z[1], -0.05, -0.12, 0.36, 0.34, rng()));
  r.bench.scene.layers.push_back(backdrop(rig, z[2], rng()));
  r.bench.scene.sort_layers();
  r.bench.motion.baseline = 0.15;
  return r;
}

// A single textured plane filling the view.
inline BenchmarkScene single_plane_scene(std::uint64_t seed, double z = 4.0, const Rig& rig = {}) {
  std::mt19937_64 rng(substream(seed, "scene/single"));
  BenchmarkScene b;
  b.scene.z_min = kSceneZMin;
  b.scene.z_max = kSceneZMax;
  b.scene.layers.push_back(backdrop(rig, z, rng()));
  b.motion.baseline = 0.15;
  return b;
}

inline FitProblem make_fit_problem(const BenchmarkScene& b, const Rig& rig = {}) {
  return make_fit_problem(b.scene, rig, b.motion);
}

}  // namespace planesynth
