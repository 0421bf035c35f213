#pragma once

// Plane-stack scene representation and the front-to-back volume compositor.
//
// A PlaneStack holds N fronto-parallel RGB/density planes in the frame of its
// reference camera, ordered near to far (strictly decreasing disparity).
// Rendering weights follow
//   T_i = exp(-sum_{j<i} sigma_j delta_j),   w_i = T_i (1 - exp(-sigma_i delta_i)),
// where delta_i is the metric distance between planes i and i+1 along each
// pixel ray. The last plane uses a virtual far neighbour (see
// virtual_far_disparity). Depth is the unnormalised sum w_i z_i.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

struct PlaneStack {
  Tensor rgb;                      // {N, H, W, 3}, values in [0, 1]
  Tensor sigma;                    // {N, H, W}, density >= 0
  std::vector<double> disparity;   // N, strictly decreasing
  CameraIntrinsics K;
  double scale{1.0};

  std::size_t planes() const { return disparity.size(); }
  std::size_t height() const { return sigma.dim(1); }
  std::size_t width() const { return sigma.dim(2); }
  double depth(std::size_t i) const { return 1.0 / disparity[i]; }
  std::vector<double> depths() const {
    std::vector<double> z(disparity.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 1.0 / disparity[i];
    return z;
  }

  static PlaneStack blank(std::size_t n, std::size_t h, std::size_t w, std::vector<double> disparity,
                          CameraIntrinsics k) {
    PlaneStack s;
    s.rgb = Tensor({n, h, w, 3});
    s.sigma = Tensor({n, h, w});
    s.disparity = std::move(disparity);
    s.K = k;
    return s;
  }

  void validate() const {
    const std::size_t n = disparity.size();
    if (n < 1) throw InvalidArgument("plane stack needs at least one plane");
    if (sigma.rank() != 3 || sigma.dim(0) != n)
      throw DimensionMismatch("plane stack sigma must be {N, H, W}, got " + shape_string(sigma.shape()));
    require_same_shape(rgb.shape(), Shape{n, sigma.dim(1), sigma.dim(2), 3}, "plane stack rgb");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(disparity[i] > 0.0)) throw InvalidArgument("plane disparities must be positive");
      if (i > 0 && !(disparity[i] < disparity[i - 1]))
        throw InvalidArgument("plane disparities must be strictly decreasing (near to far)");
    }
    K.validate();
  }
};

struct RenderOutput {
  Tensor image;     // {H, W, 3}
  Tensor depth;     // {H, W}
  Tensor weights;   // {N, H, W}
  Tensor residual;  // {H, W}, T_{N+1}
};

// ---------------------------------------------------------------------------
// Plane spacings

// Disparity of the virtual plane behind the last one: the last spacing is
// mirrored, floored at half the last disparity.
inline double virtual_far_disparity(std::span<const double> disparity) {
  const std::size_t n = disparity.size();
  const double last = disparity[n - 1];
  const double floor_d = 0.5 * last;
  if (n == 1) return floor_d;
  return std::max(2.0 * last - disparity[n - 2], floor_d);
}

// Per-plane distance along the principal ray between plane i and the next one.
inline std::vector<double> axial_spacings(std::span<const double> depths) {
  const std::size_t n = depths.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = 1.0 / depths[i];
  std::vector<double> out(n);
  for (std::size_t i = 0; i + 1 < n; ++i) out[i] = depths[i + 1] - depths[i];
  out[n - 1] = 1.0 / virtual_far_disparity(d) - depths[n - 1];
  return out;
}

// Vector-Jacobian product of axial_spacings w.r.t. depths.
inline std::vector<double> axial_spacings_backward(std::span<const double> depths, std::span<const double> grad) {
  const std::size_t n = depths.size();
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    g[i + 1] += grad[i];
    g[i] -= grad[i];
  }
  const double zn = depths[n - 1];
  if (n == 1) {
    // L = 2 z - z
    g[0] += grad[0];
    return g;
  }
  const double zp = depths[n - 2];
  const double mirrored = 2.0 / zn - 1.0 / zp;
  if (mirrored >= 0.5 / zn) {
    const double zv = 1.0 / mirrored;
    g[n - 1] += grad[n - 1] * (2.0 * zv * zv / (zn * zn) - 1.0);
    g[n - 2] += grad[n - 1] * (-zv * zv / (zp * zp));
  } else {
    g[n - 1] += grad[n - 1] * (2.0 - 1.0);
  }
  return g;
}

// ||K^-1 [x, y, 1]||, the length of a unit-depth ray step through pixel (x, y).
inline Tensor ray_lengths(const CameraIntrinsics& k, std::size_t h, std::size_t w) {
  Tensor r({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double a = (double(x) - k.cx) / k.fx;
      const double b = (double(y) - k.cy) / k.fy;
      r.at(y, x) = std::sqrt(a * a + b * b + 1.0);
    }
  return r;
}

inline Tensor plane_spacings(std::span<const double> depths, const CameraIntrinsics& k, std::size_t h,
                             std::size_t w) {
  const auto axial = axial_spacings(depths);
  const Tensor rays = ray_lengths(k, h, w);
  Tensor out({depths.size(), h, w});
  for (std::size_t i = 0; i < depths.size(); ++i) {
    auto slab = out.slab(i);
    for (std::size_t p = 0; p < h * w; ++p) slab[p] = axial[i] * rays[p];
  }
  return out;
}

inline Tensor plane_spacings(const PlaneStack& stack) {
  return plane_spacings(stack.depths(), stack.K, stack.height(), stack.width());
}

// ---------------------------------------------------------------------------
// Compositing kernels. sigma and delta are {N, H, W}.

struct CompositeResult {
  Tensor weights;        // {N, H, W}
  Tensor transmittance;  // {N+1, H, W}; T_1 = 1
};

inline CompositeResult composite(const Tensor& sigma, const Tensor& delta) {
  require_same_shape(sigma.shape(), delta.shape(), "composite");
  const std::size_t n = sigma.dim(0), hw = sigma.dim(1) * sigma.dim(2);
  CompositeResult r{Tensor(sigma.shape()), Tensor({n + 1, sigma.dim(1), sigma.dim(2)})};
  for (std::size_t p = 0; p < hw; ++p) {
    double acc = 0.0;
    r.transmittance[p] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double tau = sigma[i * hw + p] * delta[i * hw + p];
      const double t_i = std::exp(-acc);
      r.weights[i * hw + p] = t_i * -std::expm1(-tau);
      acc += tau;
      r.transmittance[(i + 1) * hw + p] = std::exp(-acc);
    }
  }
  return r;
}

// Gradient of a loss w.r.t. sigma*delta given the gradient w.r.t. weights.
inline Tensor composite_backward_tau(const CompositeResult& fwd, const Tensor& grad_weights) {
  const std::size_t n = grad_weights.dim(0), hw = grad_weights.dim(1) * grad_weights.dim(2);
  Tensor g(grad_weights.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    // dw_i/dtau_i = T_{i+1}; dw_i/dtau_j = -w_i for i > j.
    double suffix = 0.0;
    for (std::size_t i = n; i-- > 0;) {
      g[i * hw + p] = grad_weights[i * hw + p] * fwd.transmittance[(i + 1) * hw + p] - suffix;
      suffix += grad_weights[i * hw + p] * fwd.weights[i * hw + p];
    }
  }
  return g;
}

// sum_i w_i c_i over an {N, H, W, C} stack.
inline Tensor blend(const Tensor& weights, const Tensor& values) {
  const std::size_t n = weights.dim(0), h = weights.dim(1), w = weights.dim(2);
  const std::size_t ch = values.dim(3);
  require_same_shape(values.shape(), Shape{n, h, w, ch}, "blend");
  Tensor out({h, w, ch});
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      const double wi = weights[i * hw + p];
      for (std::size_t c = 0; c < ch; ++c) out[p * ch + c] += wi * values[(i * hw + p) * ch + c];
    }
  return out;
}

inline Tensor blend_depth(const Tensor& weights, std::span<const double> depths) {
  const std::size_t n = weights.dim(0), h = weights.dim(1), w = weights.dim(2);
  if (depths.size() != n) throw DimensionMismatch("blend_depth: depth count does not match plane count");
  Tensor out({h, w});
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) out[p] += weights[i * hw + p] * depths[i];
  return out;
}

// ---------------------------------------------------------------------------
// Rendering a stack in its own view

struct RenderWeights {
  Tensor weights;
  Tensor transmittance;
};

inline RenderWeights render_weights(const PlaneStack& stack) {
  stack.validate();
  auto r = composite(stack.sigma, plane_spacings(stack));
  return {std::move(r.weights), std::move(r.transmittance)};
}

inline RenderOutput render(const PlaneStack& stack) {
  auto rw = render_weights(stack);
  RenderOutput out;
  out.image = blend(rw.weights, stack.rgb);
  out.depth = blend_depth(rw.weights, stack.depths());
  const std::size_t n = stack.planes(), hw = stack.height() * stack.width();
  out.residual = Tensor({stack.height(), stack.width()});
  for (std::size_t p = 0; p < hw; ++p) out.residual[p] = rw.transmittance[n * hw + p];
  out.weights = std::move(rw.weights);
  return out;
}

inline Tensor render_image(const PlaneStack& stack) { return render(stack).image; }
inline Tensor render_depth(const PlaneStack& stack) { return render(stack).depth; }

// ---------------------------------------------------------------------------
// Warping to another view

// Plane i of a source stack, seen from a target camera whose pose takes
// target points to the source frame. The plane z = z_i in the source frame is
// n_t^T X_t = z_i - t_z in the target frame with n_t = R^T e_z.
struct TargetPlane {
  Vec3 normal;
  double offset;        // z_i - t_z
  double axial_depth;   // depth of the plane along the target principal ray
};

inline TargetPlane target_plane(const RigidTransform& pose, double source_depth) {
  TargetPlane p;
  p.normal = pose.R.transpose() * Vec3::UnitZ();
  p.offset = source_depth - pose.t.z();
  p.axial_depth = p.offset / p.normal.z();
  return p;
}

inline std::vector<Homography> stack_homographies(std::span<const double> source_depths, const CameraIntrinsics& k_s,
                                                  const CameraIntrinsics& k_t, const RigidTransform& pose) {
  std::vector<Homography> hs;
  hs.reserve(source_depths.size());
  // A static camera maps every pixel onto itself; use the exact identity so
  // sampling gathers pixels without round-off from K * K^-1.
  const bool still = pose.is_identity() && k_s == k_t;
  for (std::size_t i = 0; i < source_depths.size(); ++i) {
    if (still) {
      if (!(source_depths[i] > kDepthEpsilon))
        throw NonPositiveDepth("plane " + std::to_string(i) + " lies behind the target camera");
      hs.push_back(Homography{});
      continue;
    }
    const auto tp = target_plane(pose, source_depths[i]);
    if (!(tp.axial_depth > kDepthEpsilon))
      throw NonPositiveDepth("plane " + std::to_string(i) + " lies behind the target camera");
    try {
      hs.push_back(plane_homography(k_s, k_t, pose, tp.offset, tp.normal));
    } catch (const DegenerateHomography& e) {
      throw DegenerateHomography("plane " + std::to_string(i) + ": " + e.what());
    }
  }
  return hs;
}

// Warps every plane of an {N, H, W, C} stack through its own homography into
// an {N, Ht, Wt, C} stack.
inline Tensor warp_planes(const Tensor& values, std::span<const Homography> hs, std::size_t ht, std::size_t wt,
                          Boundary boundary) {
  const std::size_t n = values.dim(0), h = values.dim(1), w = values.dim(2), ch = values.dim(3);
  if (hs.size() != n) throw DimensionMismatch("warp_planes: one homography per plane required");
  Tensor out({n, ht, wt, ch});
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = values.slab(i);
    auto dst = out.slab(i);
    const Mat3& H = hs[i].H;
    for (std::size_t y = 0; y < ht; ++y)
      for (std::size_t x = 0; x < wt; ++x) {
        const Vec3 p = H * Vec3(double(x), double(y), 1.0);
        double xs = -1.0, ys = -1.0;
        if (std::abs(p.z()) >= kHomogeneousEpsilon) {
          xs = p.x() / p.z();
          ys = p.y() / p.z();
        }
        const auto tap = BilinearTap::make(xs, ys, h, w, boundary);
        sample_tap(src, w, ch, tap, boundary, dst.data() + (y * wt + x) * ch);
      }
  }
  return out;
}

struct WarpGradients {
  Tensor values;                          // same shape as the input stack
  std::vector<Mat3> homographies;         // dL/dH per plane
};

inline WarpGradients warp_planes_backward(const Tensor& values, std::span<const Homography> hs, std::size_t ht,
                                          std::size_t wt, Boundary boundary, const Tensor& grad_out,
                                          bool need_values = true) {
  const std::size_t n = values.dim(0), h = values.dim(1), w = values.dim(2), ch = values.dim(3);
  WarpGradients g;
  if (need_values) g.values = Tensor(values.shape());
  g.homographies.assign(n, Mat3::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = values.slab(i);
    std::span<double> gsrc = need_values ? g.values.slab(i) : std::span<double>();
    const auto gout = grad_out.slab(i);
    const Mat3& H = hs[i].H;
    Mat3& gH = g.homographies[i];
    for (std::size_t y = 0; y < ht; ++y)
      for (std::size_t x = 0; x < wt; ++x) {
        const Vec3 pt(double(x), double(y), 1.0);
        const Vec3 p = H * pt;
        if (std::abs(p.z()) < kHomogeneousEpsilon) continue;
        const double xs = p.x() / p.z(), ys = p.y() / p.z();
        const auto tap = BilinearTap::make(xs, ys, h, w, boundary);
        const Vec2 d = sample_tap_backward(src, w, ch, tap, boundary, gout.data() + (y * wt + x) * ch, gsrc);
        if (d.x() == 0.0 && d.y() == 0.0) continue;
        const double iw = 1.0 / p.z();
        // x_s = u/w, y_s = v/w with [u, v, w] = H [x, y, 1]
        gH.row(0) += d.x() * iw * pt.transpose();
        gH.row(1) += d.y() * iw * pt.transpose();
        gH.row(2) -= (d.x() * xs + d.y() * ys) * iw * pt.transpose();
      }
  }
  return g;
}

inline PlaneStack warp_stack(const PlaneStack& stack, const CameraIntrinsics& k_t, const RigidTransform& pose,
                             std::optional<std::array<std::size_t, 2>> target_dims = std::nullopt) {
  stack.validate();
  pose.validate();
  const std::size_t ht = target_dims ? (*target_dims)[0] : stack.height();
  const std::size_t wt = target_dims ? (*target_dims)[1] : stack.width();
  const auto z = stack.depths();
  const auto hs = stack_homographies(z, stack.K, k_t, pose);
  PlaneStack out;
  out.K = k_t;
  out.scale = stack.scale;
  out.rgb = warp_planes(stack.rgb, hs, ht, wt, Boundary::Clamp);
  const std::size_t n = stack.planes();
  const Tensor sig4 = stack.sigma.reshaped({n, stack.height(), stack.width(), 1});
  out.sigma = warp_planes(sig4, hs, ht, wt, Boundary::Clamp).reshaped({n, ht, wt});
  out.disparity.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.disparity[i] = 1.0 / target_plane(pose, z[i]).axial_depth;
  return out;
}

inline RenderOutput render_novel_view(const PlaneStack& stack, const CameraIntrinsics& k_t,
                                      const RigidTransform& pose,
                                      std::optional<std::array<std::size_t, 2>> target_dims = std::nullopt) {
  return render(warp_stack(stack, k_t, pose, target_dims));
}

// ---------------------------------------------------------------------------
// Rendering variance: mean over valid pixels of sum_i w_i (s z_i - z)^2.

struct RenderingVariance {
  double value{0.0};
  double scale{1.0};
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw EmptyMask("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

// weights {N, H, W}; valid_mask {H, W} (nonzero = valid) or empty for all.
inline RenderingVariance rendering_variance(const Tensor& weights, std::span<const double> depths,
                                            const Tensor& gt_depth, std::optional<double> scale,
                                            const Tensor& valid_mask = {}) {
  const std::size_t n = weights.dim(0), hw = weights.dim(1) * weights.dim(2);
  require_same_shape(gt_depth.shape(), Shape{weights.dim(1), weights.dim(2)}, "rendering_variance gt_depth");
  if (!valid_mask.empty()) require_same_shape(valid_mask.shape(), gt_depth.shape(), "rendering_variance mask");
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < hw; ++p)
    if (valid_mask.empty() || valid_mask[p] != 0.0) idx.push_back(p);
  if (idx.empty()) throw EmptyMask("rendering_variance: no valid pixels");
  RenderingVariance rv;
  if (scale) {
    rv.scale = *scale;
  } else {
    std::vector<double> gt, pred;
    for (auto p : idx) {
      gt.push_back(gt_depth[p]);
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) d += weights[i * hw + p] * depths[i];
      pred.push_back(d);
    }
    rv.scale = median_of(gt) / median_of(pred);
  }
  double acc = 0.0;
  for (auto p : idx) {
    double px = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rv.scale * depths[i] - gt_depth[p];
      px += weights[i * hw + p] * e * e;
    }
    acc += px;
  }
  rv.value = acc / double(idx.size());
  return rv;
}

inline RenderingVariance rendering_variance(const PlaneStack& stack, const Tensor& gt_depth,
                                            std::optional<double> scale = std::nullopt,
                                            const Tensor& valid_mask = {}) {
  const auto rw = render_weights(stack);
  return rendering_variance(rw.weights, stack.depths(), gt_depth, scale, valid_mask);
}

}  // namespace planesynth
