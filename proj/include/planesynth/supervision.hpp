#pragma once

// Loss terms: L1 appearance, edge-aware disparity smoothness, occlusion
// detection and the occlusion-aware reprojection loss.

#include <cmath>
#include <string_view>

#include "planesynth/errors.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

inline constexpr double kDisparityEpsilon = 1e-6;
inline constexpr double kOcclusionConstant = 0.2;

enum class MaskMode { On, Off };

inline MaskMode parse_mask_mode(std::string_view s) {
  if (s == "on") return MaskMode::On;
  if (s == "off") return MaskMode::Off;
  throw InvalidArgument("unknown mask mode '" + std::string(s) + "' (expected on|off)");
}
inline std::string_view to_string(MaskMode m) { return m == MaskMode::On ? "on" : "off"; }

struct LossConfig {
  double lambda{1.0};
  double beta{1e-3};
  double occ_c{kOcclusionConstant};
  double scale{1.0};
  MaskMode mask{MaskMode::On};

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (!(beta >= 0.0)) throw InvalidArgument("beta must be >= 0");
    if (!(occ_c >= 0.0)) throw InvalidArgument("occlusion constant must be >= 0");
    if (!(scale > 0.0)) throw InvalidArgument("plane scale must be > 0");
  }
};

struct OcclusionMask {
  Tensor occluded;  // {H, W}, 1 = occluded
  Tensor valid;     // {H, W}, 1 = projection lands inside the source image
};

struct LossReport {
  double l1{0.0};
  double smooth{0.0};
  double rep{0.0};
  double total{0.0};
  double lambda{1.0};
  double beta{1e-3};
};

// ---------------------------------------------------------------------------
// Reprojection of target pixels into the source view through a target depth
// map: X_s = R * backproject(x_t, D_t) + t, then project with K_s.

struct Reprojection {
  Tensor coords;  // {H, W, 3}: x_s, y_s, Z_s
  Tensor valid;   // {H, W}: in front of the source camera and inside its image
};

// Pulls coordinates within round-off of [0, hi] onto the border so that a
// static camera keeps its edge pixels valid.
inline double snap_to_range(double v, double hi) {
  constexpr double eps = 1e-9;
  if (v < 0.0 && v > -eps) return 0.0;
  if (v > hi && v < hi + eps) return hi;
  return v;
}

inline Reprojection reproject(const Tensor& depth_t, const CameraIntrinsics& k_t, const CameraIntrinsics& k_s,
                              const RigidTransform& pose, std::size_t source_h, std::size_t source_w) {
  if (depth_t.rank() != 2) throw DimensionMismatch("reproject expects an {H, W} depth map");
  const std::size_t h = depth_t.dim(0), w = depth_t.dim(1);
  Reprojection r{Tensor({h, w, 3}), Tensor({h, w})};
  const Mat3 kinv = k_t.inverse();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double d = depth_t.at(y, x);
      const Vec3 xs = pose.R * (kinv * Vec3(double(x), double(y), 1.0)) * d + pose.t;
      double* c = &r.coords.at(y, x, 0);
      c[2] = xs.z();
      if (!(d > kDepthEpsilon) || !(xs.z() > kDepthEpsilon)) {
        c[0] = c[1] = -1.0;
        continue;
      }
      c[0] = snap_to_range(k_s.fx * xs.x() / xs.z() + k_s.cx, double(source_w) - 1.0);
      c[1] = snap_to_range(k_s.fy * xs.y() / xs.z() + k_s.cy, double(source_h) - 1.0);
      const bool in = c[0] >= 0.0 && c[0] <= double(source_w) - 1.0 && c[1] >= 0.0 && c[1] <= double(source_h) - 1.0;
      r.valid.at(y, x) = in ? 1.0 : 0.0;
    }
  return r;
}

// Vector-Jacobian product of reproject's coords w.r.t. the target depth map.
inline Tensor reproject_backward(const Tensor& depth_t, const CameraIntrinsics& k_t, const CameraIntrinsics& k_s,
                                 const RigidTransform& pose, const Tensor& grad_coords) {
  const std::size_t h = depth_t.dim(0), w = depth_t.dim(1);
  Tensor g({h, w});
  const Mat3 kinv = k_t.inverse();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double d = depth_t.at(y, x);
      const Vec3 a = pose.R * (kinv * Vec3(double(x), double(y), 1.0));
      const Vec3 xs = a * d + pose.t;
      if (!(d > kDepthEpsilon) || !(xs.z() > kDepthEpsilon)) continue;
      const double* gc = &grad_coords.at(y, x, 0);
      const double iz2 = 1.0 / (xs.z() * xs.z());
      const double dxd = k_s.fx * (a.x() * xs.z() - xs.x() * a.z()) * iz2;
      const double dyd = k_s.fy * (a.y() * xs.z() - xs.y() * a.z()) * iz2;
      g.at(y, x) = gc[0] * dxd + gc[1] * dyd + gc[2] * a.z();
    }
  return g;
}

inline SampleGrid grid_from_coords(const Tensor& coords, const Tensor& valid) {
  const std::size_t h = coords.dim(0), w = coords.dim(1);
  SampleGrid g(h, w);
  for (std::size_t p = 0; p < h * w; ++p) {
    g.xs[p] = coords[p * 3];
    g.ys[p] = coords[p * 3 + 1];
    g.valid[p] = valid[p] != 0.0 ? 1 : 0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Occlusion mask: a target pixel is occluded when its reprojected source depth
// exceeds the source rendered depth at the landing point by at least c*s.

inline OcclusionMask occlusion_mask(const Tensor& depth_t, const Tensor& depth_s, const RigidTransform& pose,
                                    const CameraIntrinsics& k_s, const CameraIntrinsics& k_t, double c, double s) {
  if (depth_s.rank() != 2) throw DimensionMismatch("occlusion_mask expects an {H, W} source depth");
  const std::size_t hs = depth_s.dim(0), ws = depth_s.dim(1);
  const auto rp = reproject(depth_t, k_t, k_s, pose, hs, ws);
  const std::size_t h = depth_t.dim(0), w = depth_t.dim(1);
  OcclusionMask m{Tensor({h, w}), rp.valid};
  const double threshold = c * s;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (rp.valid[p] == 0.0) continue;
    const auto tap = BilinearTap::make(rp.coords[p * 3], rp.coords[p * 3 + 1], hs, ws, Boundary::Zero);
    double sampled = 0.0;
    sample_tap(depth_s.data(), ws, 1, tap, Boundary::Zero, &sampled);
    if (rp.coords[p * 3 + 2] - sampled >= threshold) m.occluded[p] = 1.0;
  }
  return m;
}

struct ReprojectedImage {
  Tensor image;  // {H, W, C}
  Tensor valid;  // {H, W}
};

inline ReprojectedImage reprojection_image(const Tensor& image_s, const Tensor& depth_t, const RigidTransform& pose,
                                           const CameraIntrinsics& k_s, const CameraIntrinsics& k_t) {
  if (image_s.rank() != 3) throw DimensionMismatch("reprojection_image expects an {H, W, C} source image");
  const auto rp = reproject(depth_t, k_t, k_s, pose, image_s.dim(0), image_s.dim(1));
  auto img = bilinear_sample(image_s, grid_from_coords(rp.coords, rp.valid), Boundary::Zero);
  // Zero-boundary sampling already zeroes out-of-bounds pixels; also clear
  // pixels rejected for depth reasons.
  const std::size_t ch = image_s.dim(2);
  for (std::size_t p = 0; p < rp.valid.size(); ++p)
    if (rp.valid[p] == 0.0)
      for (std::size_t c = 0; c < ch; ++c) img[p * ch + c] = 0.0;
  return {std::move(img), rp.valid};
}

// ---------------------------------------------------------------------------
// Reprojection loss: (1/HW) sum_p valid_p (1 - M_p) mean_c |I_t - I_t^r|.

inline double reprojection_loss(const Tensor& image_t, const Tensor& reprojected, const OcclusionMask& mask) {
  require_same_shape(image_t.shape(), reprojected.shape(), "reprojection_loss images");
  const std::size_t h = image_t.dim(0), w = image_t.dim(1), ch = image_t.dim(2);
  require_same_shape(mask.occluded.shape(), Shape{h, w}, "reprojection_loss mask");
  require_same_shape(mask.valid.shape(), Shape{h, w}, "reprojection_loss validity");
  double acc = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (mask.valid[p] == 0.0 || mask.occluded[p] != 0.0) continue;
    double px = 0.0;
    for (std::size_t c = 0; c < ch; ++c) px += std::abs(image_t[p * ch + c] - reprojected[p * ch + c]);
    acc += px / double(ch);
  }
  return acc / double(h * w);
}

// d reprojection_loss / d reprojected
inline Tensor reprojection_loss_backward(const Tensor& image_t, const Tensor& reprojected, const OcclusionMask& mask) {
  const std::size_t h = image_t.dim(0), w = image_t.dim(1), ch = image_t.dim(2);
  Tensor g(image_t.shape());
  const double k = 1.0 / double(h * w * ch);
  for (std::size_t p = 0; p < h * w; ++p) {
    if (mask.valid[p] == 0.0 || mask.occluded[p] != 0.0) continue;
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = reprojected[p * ch + c] - image_t[p * ch + c];
      g[p * ch + c] = d > 0.0 ? k : (d < 0.0 ? -k : 0.0);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// L1 appearance loss: mean |a - b| over all entries.

inline double l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "l1_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / double(a.size());
}

inline Tensor l1_loss_backward(const Tensor& a, const Tensor& b) {
  Tensor g(a.shape());
  const double k = 1.0 / double(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    g[i] = d > 0.0 ? k : (d < 0.0 ? -k : 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Edge-aware smoothness on a normalised disparity map d* = disp / mean(disp):
//   mean_x |dx d*| exp(-|dx I|) + mean_y |dy d*| exp(-|dy I|)
// with forward differences and |dI| averaged over channels. A direction with
// no differences (width or height 1) contributes 0.

struct EdgeWeights {
  Tensor x;  // {H, W-1}
  Tensor y;  // {H-1, W}
};

inline EdgeWeights edge_weights(const Tensor& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  EdgeWeights e{Tensor({h, w > 0 ? w - 1 : 0}), Tensor({h > 0 ? h - 1 : 0, w})};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      double g = 0.0;
      for (std::size_t c = 0; c < ch; ++c) g += std::abs(image.at(y, x + 1, c) - image.at(y, x, c));
      e.x.at(y, x) = std::exp(-g / double(ch));
    }
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double g = 0.0;
      for (std::size_t c = 0; c < ch; ++c) g += std::abs(image.at(y + 1, x, c) - image.at(y, x, c));
      e.y.at(y, x) = std::exp(-g / double(ch));
    }
  return e;
}

inline double edge_aware_smoothness_normalized(const Tensor& dstar, const Tensor& image) {
  const std::size_t h = dstar.dim(0), w = dstar.dim(1);
  require_same_shape(Shape{image.dim(0), image.dim(1)}, dstar.shape(), "edge_aware_smoothness");
  const auto e = edge_weights(image);
  double sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) sx += std::abs(dstar.at(y, x + 1) - dstar.at(y, x)) * e.x.at(y, x);
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) sy += std::abs(dstar.at(y + 1, x) - dstar.at(y, x)) * e.y.at(y, x);
  const double nx = double(h * (w - 1)), ny = double((h - 1) * w);
  return (nx > 0 ? sx / nx : 0.0) + (ny > 0 ? sy / ny : 0.0);
}

inline Tensor edge_aware_smoothness_normalized_backward(const Tensor& dstar, const Tensor& image) {
  const std::size_t h = dstar.dim(0), w = dstar.dim(1);
  const auto e = edge_weights(image);
  Tensor g(dstar.shape());
  const double nx = double(h * (w - 1)), ny = double((h - 1) * w);
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double s = sgn(dstar.at(y, x + 1) - dstar.at(y, x)) * e.x.at(y, x) / nx;
      g.at(y, x + 1) += s;
      g.at(y, x) -= s;
    }
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double s = sgn(dstar.at(y + 1, x) - dstar.at(y, x)) * e.y.at(y, x) / ny;
      g.at(y + 1, x) += s;
      g.at(y, x) -= s;
    }
  return g;
}

inline double mean_of(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return acc / double(t.size());
}

inline double edge_aware_smoothness(const Tensor& disp, const Tensor& image) {
  const double m = mean_of(disp);
  Tensor dstar(disp.shape());
  for (std::size_t i = 0; i < disp.size(); ++i) dstar[i] = disp[i] / m;
  return edge_aware_smoothness_normalized(dstar, image);
}

inline Tensor edge_aware_smoothness_backward(const Tensor& disp, const Tensor& image) {
  const double m = mean_of(disp);
  Tensor dstar(disp.shape());
  for (std::size_t i = 0; i < disp.size(); ++i) dstar[i] = disp[i] / m;
  const Tensor gs = edge_aware_smoothness_normalized_backward(dstar, image);
  double dot = 0.0;
  for (std::size_t i = 0; i < disp.size(); ++i) dot += gs[i] * disp[i];
  Tensor g(disp.shape());
  const double n = double(disp.size());
  for (std::size_t i = 0; i < disp.size(); ++i) g[i] = gs[i] / m - dot / (m * m * n);
  return g;
}

// Rendered disparity 1 / max(D, eps).
inline Tensor disparity_from_depth(const Tensor& depth) {
  Tensor d(depth.shape());
  for (std::size_t i = 0; i < depth.size(); ++i) d[i] = 1.0 / std::max(depth[i], kDisparityEpsilon);
  return d;
}

// ---------------------------------------------------------------------------
// Total loss for one target view.

inline LossReport total_loss(const RenderOutput& target_render, const Tensor& image_t, const Tensor& image_s,
                             const Tensor& source_depth, const RigidTransform& pose, const CameraIntrinsics& k_s,
                             const CameraIntrinsics& k_t, const LossConfig& cfg) {
  cfg.validate();
  LossReport r;
  r.lambda = cfg.lambda;
  r.beta = cfg.beta;
  r.l1 = l1_loss(target_render.image, image_t);
  r.smooth = edge_aware_smoothness(disparity_from_depth(target_render.depth), image_t);
  auto mask = occlusion_mask(target_render.depth, source_depth, pose, k_s, k_t, cfg.occ_c, cfg.scale);
  if (cfg.mask == MaskMode::Off) mask.occluded.fill(0.0);
  const auto reproj = reprojection_image(image_s, target_render.depth, pose, k_s, k_t);
  r.rep = reprojection_loss(image_t, reproj.image, mask);
  r.total = r.l1 + cfg.beta * r.smooth + cfg.lambda * r.rep;
  return r;
}

}  // namespace planesynth
