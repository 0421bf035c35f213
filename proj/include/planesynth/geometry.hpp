#pragma once

// Pinhole camera math, plane-induced homographies and bilinear resampling.
//
// Conventions used throughout the library:
//  * integer pixel coordinates sit at pixel centers, x in [0, W-1];
//  * a RigidTransform maps points of one camera frame into another,
//    X_dst = R * X_src + t. Poses handed to warping and supervision code are
//    "source <- target", i.e. they take target-frame points to the source frame.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

inline constexpr double kDepthEpsilon = 1e-9;
inline constexpr double kHomogeneousEpsilon = 1e-12;

struct CameraIntrinsics {
  double fx{1.0};
  double fy{1.0};
  double cx{0.0};
  double cy{0.0};

  static CameraIntrinsics identity() { return {}; }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }
  Mat3 inverse() const {
    Mat3 k;
    k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return k;
  }
  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw InvalidArgument("camera intrinsics need positive focal lengths");
  }
  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct RigidTransform {
  Mat3 R{Mat3::Identity()};
  Vec3 t{Vec3::Zero()};

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(double x, double y, double z) {
    RigidTransform p;
    p.t = Vec3(x, y, z);
    return p;
  }

  Vec3 apply(const Vec3& x) const { return R * x + t; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.R = R.transpose();
    inv.t = -(inv.R * t);
    return inv;
  }

  // (a * b)(X) = a(b(X))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform c;
    c.R = a.R * b.R;
    c.t = a.R * b.t + a.t;
    return c;
  }

  bool is_identity() const { return R == Mat3::Identity() && t == Vec3::Zero(); }

  void validate(double tol = 1e-9) const {
    if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(R.determinant() - 1.0) > tol)
      throw InvalidArgument("rotation matrix is not orthonormal with det 1");
    if (!t.allFinite()) throw InvalidArgument("translation has non-finite entries");
  }
};

// Maps homogeneous target pixels to homogeneous source pixels.
struct Homography {
  Mat3 H{Mat3::Identity()};

  Vec2 apply(double x, double y) const {
    const Vec3 p = H * Vec3(x, y, 1.0);
    return {p.x() / p.z(), p.y() / p.z()};
  }
};

// Per target pixel source coordinates plus an in-bounds flag, row-major.
struct SampleGrid {
  std::size_t height{0};
  std::size_t width{0};
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<std::uint8_t> valid;

  SampleGrid() = default;
  SampleGrid(std::size_t h, std::size_t w) : height(h), width(w), xs(h * w), ys(h * w), valid(h * w, 0) {}

  std::size_t index(std::size_t row, std::size_t col) const { return row * width + col; }
};

enum class Boundary { Clamp, Zero };

// ---------------------------------------------------------------------------
// Projection

template <typename T>
Eigen::Matrix<T, 2, 1> project(const Eigen::Matrix<T, 3, 1>& p, const CameraIntrinsics& k) {
  if (!(p.z() > T(kDepthEpsilon)))
    throw NonPositiveDepth("project: point depth " + std::to_string(double(p.z())) + " is not positive");
  return {T(k.fx) * p.x() / p.z() + T(k.cx), T(k.fy) * p.y() / p.z() + T(k.cy)};
}

template <typename T>
Eigen::Matrix<T, 3, 1> backproject(const Eigen::Matrix<T, 2, 1>& q, T z, const CameraIntrinsics& k) {
  if (!(z > T(kDepthEpsilon)))
    throw NonPositiveDepth("backproject: depth " + std::to_string(double(z)) + " is not positive");
  return {(q.x() - T(k.cx)) * z / T(k.fx), (q.y() - T(k.cy)) * z / T(k.fy), z};
}

// ---------------------------------------------------------------------------
// Plane-induced homography.
//
// For a plane n^T X_t = depth in the target frame and a pose taking target
// points to the source frame (X_s = R X_t + t), every point on the plane
// satisfies X_s = (R + t n^T / depth) X_t, so target pixels map to source
// pixels through H = K_s (R + t n^T / depth) K_t^-1.

inline Homography plane_homography(const CameraIntrinsics& k_s, const CameraIntrinsics& k_t,
                                   const RigidTransform& pose, double depth,
                                   const Vec3& normal = Vec3::UnitZ()) {
  if (!(depth > kDepthEpsilon))
    throw NonPositiveDepth("plane_homography: plane depth " + std::to_string(depth) + " is not positive");
  Homography h;
  h.H = k_s.matrix() * (pose.R + pose.t * normal.transpose() / depth) * k_t.inverse();
  if (!(std::abs(h.H.determinant()) > kHomogeneousEpsilon))
    throw DegenerateHomography("plane_homography: plane passes through the source camera center");
  return h;
}

// d H / d depth for the homography above.
inline Mat3 plane_homography_depth_derivative(const CameraIntrinsics& k_s, const CameraIntrinsics& k_t,
                                              const RigidTransform& pose, double depth,
                                              const Vec3& normal = Vec3::UnitZ()) {
  return -k_s.matrix() * (pose.t * normal.transpose()) * k_t.inverse() / (depth * depth);
}

// Applies H to every target pixel center. Pixels whose homogeneous coordinate
// vanishes, or whose source location falls outside [0, W_s-1] x [0, H_s-1],
// are flagged invalid.
inline SampleGrid warp_grid(const Homography& h, std::size_t height, std::size_t width,
                            std::size_t source_height, std::size_t source_width) {
  SampleGrid g(height, width);
  const double xmax = double(source_width) - 1.0;
  const double ymax = double(source_height) - 1.0;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const Vec3 p = h.H * Vec3(double(c), double(r), 1.0);
      const std::size_t i = g.index(r, c);
      if (std::abs(p.z()) < kHomogeneousEpsilon) {
        g.xs[i] = -1.0;
        g.ys[i] = -1.0;
        g.valid[i] = 0;
        continue;
      }
      g.xs[i] = p.x() / p.z();
      g.ys[i] = p.y() / p.z();
      g.valid[i] = (g.xs[i] >= 0.0 && g.xs[i] <= xmax && g.ys[i] >= 0.0 && g.ys[i] <= ymax) ? 1 : 0;
    }
  }
  return g;
}

inline SampleGrid warp_grid(const Homography& h, std::size_t height, std::size_t width) {
  return warp_grid(h, height, width, height, width);
}

// ---------------------------------------------------------------------------
// Bilinear sampling

// The four neighbours and weights used to interpolate at (x, y). Uses the
// right-continuous branch: at integer x the cell [x, x+1] is used, except at
// the last column where [W-2, W-1] is used.
struct BilinearTap {
  std::size_t x0{0}, y0{0}, x1{0}, y1{0};
  double ax{0.0}, ay{0.0};  // fractional offsets toward x1 / y1
  bool dx_live{false};      // d/dx is nonzero (not clamped)
  bool dy_live{false};
  bool inside{false};

  static BilinearTap make(double x, double y, std::size_t h, std::size_t w, Boundary boundary) {
    BilinearTap tap;
    const double xmax = double(w) - 1.0;
    const double ymax = double(h) - 1.0;
    tap.inside = std::isfinite(x) && std::isfinite(y) && x >= 0.0 && x <= xmax && y >= 0.0 && y <= ymax;
    if (!tap.inside && boundary == Boundary::Zero) return tap;
    double cxv = x, cyv = y;
    tap.dx_live = true;
    tap.dy_live = true;
    if (!std::isfinite(cxv) || cxv < 0.0 || cxv > xmax) {
      cxv = std::isfinite(cxv) ? std::clamp(cxv, 0.0, xmax) : 0.0;
      tap.dx_live = false;
    }
    if (!std::isfinite(cyv) || cyv < 0.0 || cyv > ymax) {
      cyv = std::isfinite(cyv) ? std::clamp(cyv, 0.0, ymax) : 0.0;
      tap.dy_live = false;
    }
    split(cxv, w, tap.x0, tap.x1, tap.ax);
    split(cyv, h, tap.y0, tap.y1, tap.ay);
    return tap;
  }

  bool exact() const { return ax == 0.0 && ay == 0.0; }

 private:
  static void split(double v, std::size_t n, std::size_t& i0, std::size_t& i1, double& a) {
    if (n == 1) {
      i0 = i1 = 0;
      a = 0.0;
      return;
    }
    double f = std::floor(v);
    if (f >= double(n) - 1.0) f = double(n) - 2.0;
    i0 = std::size_t(f);
    i1 = i0 + 1;
    a = v - f;
  }
};

// Interpolates channel values of an {H, W, C} image (given as a flat span) at a tap.
inline void sample_tap(std::span<const double> img, std::size_t w, std::size_t channels, const BilinearTap& tap,
                       Boundary boundary, double* out) {
  if (!tap.inside && boundary == Boundary::Zero) {
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = 0.0;
    return;
  }
  const double* p00 = img.data() + (tap.y0 * w + tap.x0) * channels;
  if (tap.exact()) {
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = p00[ch];
    return;
  }
  const double* p01 = img.data() + (tap.y0 * w + tap.x1) * channels;
  const double* p10 = img.data() + (tap.y1 * w + tap.x0) * channels;
  const double* p11 = img.data() + (tap.y1 * w + tap.x1) * channels;
  const double w00 = (1.0 - tap.ax) * (1.0 - tap.ay);
  const double w01 = tap.ax * (1.0 - tap.ay);
  const double w10 = (1.0 - tap.ax) * tap.ay;
  const double w11 = tap.ax * tap.ay;
  for (std::size_t ch = 0; ch < channels; ++ch)
    out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
}

// Vector-Jacobian product of sample_tap. Accumulates into grad_img (if non-empty)
// and returns (dL/dx, dL/dy).
inline Vec2 sample_tap_backward(std::span<const double> img, std::size_t w, std::size_t channels,
                                const BilinearTap& tap, Boundary boundary, const double* grad_out,
                                std::span<double> grad_img) {
  if (!tap.inside && boundary == Boundary::Zero) return Vec2::Zero();
  const std::size_t i00 = (tap.y0 * w + tap.x0) * channels;
  const std::size_t i01 = (tap.y0 * w + tap.x1) * channels;
  const std::size_t i10 = (tap.y1 * w + tap.x0) * channels;
  const std::size_t i11 = (tap.y1 * w + tap.x1) * channels;
  const double w00 = (1.0 - tap.ax) * (1.0 - tap.ay);
  const double w01 = tap.ax * (1.0 - tap.ay);
  const double w10 = (1.0 - tap.ax) * tap.ay;
  const double w11 = tap.ax * tap.ay;
  double gx = 0.0, gy = 0.0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double go = grad_out[ch];
    if (go == 0.0) continue;
    if (!grad_img.empty()) {
      grad_img[i00 + ch] += w00 * go;
      grad_img[i01 + ch] += w01 * go;
      grad_img[i10 + ch] += w10 * go;
      grad_img[i11 + ch] += w11 * go;
    }
    const double v00 = img[i00 + ch], v01 = img[i01 + ch], v10 = img[i10 + ch], v11 = img[i11 + ch];
    if (tap.dx_live && tap.x1 != tap.x0)
      gx += go * ((1.0 - tap.ay) * (v01 - v00) + tap.ay * (v11 - v10));
    if (tap.dy_live && tap.y1 != tap.y0)
      gy += go * ((1.0 - tap.ax) * (v10 - v00) + tap.ax * (v11 - v01));
  }
  return {gx, gy};
}

// Resamples an {H, W, C} image at every grid location into an {Ht, Wt, C} image.
inline Tensor bilinear_sample(const Tensor& values, const SampleGrid& grid, Boundary boundary) {
  if (values.rank() != 3) throw DimensionMismatch("bilinear_sample expects an {H, W, C} image");
  if (grid.xs.size() != grid.height * grid.width || grid.ys.size() != grid.xs.size())
    throw DimensionMismatch("bilinear_sample: sample grid is inconsistent with its dims");
  const std::size_t h = values.dim(0), w = values.dim(1), ch = values.dim(2);
  Tensor out({grid.height, grid.width, ch});
  for (std::size_t i = 0; i < grid.xs.size(); ++i) {
    const auto tap = BilinearTap::make(grid.xs[i], grid.ys[i], h, w, boundary);
    sample_tap(values.data(), w, ch, tap, boundary, out.data().data() + i * ch);
  }
  return out;
}

struct BilinearGradients {
  Tensor values;          // same shape as the sampled image
  std::vector<double> dx;  // per grid location
  std::vector<double> dy;
};

inline BilinearGradients bilinear_sample_backward(const Tensor& values, const SampleGrid& grid, Boundary boundary,
                                                  const Tensor& grad_out) {
  const std::size_t h = values.dim(0), w = values.dim(1), ch = values.dim(2);
  require_same_shape(grad_out.shape(), Shape{grid.height, grid.width, ch}, "bilinear_sample_backward");
  BilinearGradients g{Tensor(values.shape()), std::vector<double>(grid.xs.size()), std::vector<double>(grid.xs.size())};
  for (std::size_t i = 0; i < grid.xs.size(); ++i) {
    const auto tap = BilinearTap::make(grid.xs[i], grid.ys[i], h, w, boundary);
    const Vec2 d = sample_tap_backward(values.data(), w, ch, tap, boundary, grad_out.data().data() + i * ch,
                                       g.values.data());
    g.dx[i] = d.x();
    g.dy[i] = d.y();
  }
  return g;
}

}  // namespace planesynth
