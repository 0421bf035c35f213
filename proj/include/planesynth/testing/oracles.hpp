#pragma once

// Independent reference implementations used by the test suites, the
// acceptance binary and `planesynth check`. Each one is a plain scalar loop
// written straight from the defining formula, sharing no code with the
// library path it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "planesynth/attention.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/scene_lab.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth::testing {

// Camera point on the ray through pixel (x, y) at axial depth z.
inline void naive_backproject(const CameraIntrinsics& k, double x, double y, double z, double out[3]) {
  out[0] = (x - k.cx) * z / k.fx;
  out[1] = (y - k.cy) * z / k.fy;
  out[2] = z;
}

// Spacing between plane i and the next plane (or the mirrored virtual plane
// behind the last one) measured along the pixel ray.
inline double naive_spacing(const std::vector<double>& disparity, const CameraIntrinsics& k, std::size_t i, double x,
                            double y) {
  const std::size_t n = disparity.size();
  double d_next;
  if (i + 1 < n) {
    d_next = disparity[i + 1];
  } else {
    const double mirrored = n > 1 ? 2.0 * disparity[n - 1] - disparity[n - 2] : 0.0;
    d_next = std::max(mirrored, disparity[n - 1] / 2.0);
  }
  double a[3], b[3];
  naive_backproject(k, x, y, 1.0 / disparity[i], a);
  naive_backproject(k, x, y, 1.0 / d_next, b);
  return std::sqrt((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1]) + (b[2] - a[2]) * (b[2] - a[2]));
}

struct NaiveRender {
  Tensor image;     // {H, W, 3}
  Tensor depth;     // {H, W}
  Tensor weights;   // {N, H, W}
  Tensor residual;  // {H, W}
};

// Front-to-back compositing, one pixel at a time, transmittance carried as a
// running product of per-plane survival probabilities.
inline NaiveRender naive_composite(const PlaneStack& s) {
  const std::size_t n = s.planes(), h = s.height(), w = s.width();
  NaiveRender r{Tensor({h, w, 3}), Tensor({h, w}), Tensor({n, h, w}), Tensor({h, w})};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double trans = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double delta = naive_spacing(s.disparity, s.K, i, double(x), double(y));
        const double alpha = 1.0 - std::exp(-s.sigma.at(i, y, x) * delta);
        const double wgt = trans * alpha;
        r.weights.at(i, y, x) = wgt;
        for (std::size_t c = 0; c < 3; ++c) r.image.at(y, x, c) += wgt * s.rgb.at(i, y, x, c);
        r.depth.at(y, x) += wgt / s.disparity[i];
        trans *= 1.0 - alpha;
      }
      r.residual.at(y, x) = trans;
    }
  return r;
}

// Mean over pixels of sum_i w_i (s z_i - z_gt)^2 with a fixed scale.
inline double naive_rendering_variance(const Tensor& weights, const std::vector<double>& depths, const Tensor& gt,
                                       double scale) {
  const std::size_t n = depths.size(), h = gt.dim(0), w = gt.dim(1);
  double acc = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t i = 0; i < n; ++i) {
        const double e = scale * depths[i] - gt.at(y, x);
        acc += weights.at(i, y, x) * e * e;
      }
  return acc / double(h * w);
}

// ---------------------------------------------------------------------------
// Visibility

// Exhaustive geometric visibility of target pixels in the source camera. For
// every target pixel, every rectangle is intersected with the target ray and
// the nearest hit kept; the hit point is then tested against every rectangle
// on the segment from the source centre. occluded = 1 when another rectangle
// cuts that segment strictly before the point; valid = 1 when the point
// projects inside the source image; gap is the point's depth minus the depth
// of the nearest rectangle on the segment (0 when visible).
struct VisibilityOracle {
  Tensor occluded;
  Tensor valid;
  Tensor gap;
};

inline VisibilityOracle exhaustive_visibility(const SyntheticScene& scene, const CameraIntrinsics& k_t,
                                              const RigidTransform& pose, std::size_t h, std::size_t w,
                                              const CameraIntrinsics& k_s, std::size_t h_s, std::size_t w_s) {
  VisibilityOracle v{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  auto inside = [](const Layer& l, double x, double y) {
    return x >= l.rect[0] && x < l.rect[2] && y >= l.rect[1] && y < l.rect[3];
  };
  for (std::size_t py = 0; py < h; ++py)
    for (std::size_t px = 0; px < w; ++px) {
      // Target ray in the canonical frame: origin pose.t, direction R * K_t^-1 [x y 1].
      const double cx = (double(px) - k_t.cx) / k_t.fx, cy = (double(py) - k_t.cy) / k_t.fy;
      double dir[3];
      for (int r = 0; r < 3; ++r) dir[r] = pose.R(r, 0) * cx + pose.R(r, 1) * cy + pose.R(r, 2);
      double best = std::numeric_limits<double>::infinity();
      double hit[3] = {0, 0, 0};
      for (const Layer& l : scene.layers) {
        if (!(dir[2] > 0.0)) continue;
        const double s = (l.z - pose.t.z()) / dir[2];
        if (!(s > 0.0)) continue;
        const double X = pose.t.x() + s * dir[0], Y = pose.t.y() + s * dir[1];
        if (inside(l, X, Y) && s < best) {
          best = s;
          hit[0] = X, hit[1] = Y, hit[2] = l.z;
        }
      }
      if (!std::isfinite(best)) continue;
      const double xs = k_s.fx * hit[0] / hit[2] + k_s.cx, ys = k_s.fy * hit[1] / hit[2] + k_s.cy;
      if (xs < 0.0 || xs > double(w_s) - 1.0 || ys < 0.0 || ys > double(h_s) - 1.0) continue;
      v.valid.at(py, px) = 1.0;
      double first = hit[2];
      for (const Layer& l : scene.layers) {
        if (!(l.z < hit[2] - 1e-12)) continue;
        const double f = l.z / hit[2];
        if (inside(l, hit[0] * f, hit[1] * f)) first = std::min(first, l.z);
      }
      if (first < hit[2]) {
        v.occluded.at(py, px) = 1.0;
        v.gap.at(py, px) = hit[2] - first;
      }
    }
  return v;
}

// ---------------------------------------------------------------------------
// Attention

struct NaiveAttention {
  std::vector<std::vector<double>> rows;  // one softmaxed row per query position
  Tensor y;                               // {H, W, C_in}
};

// Attention for the listed query positions with nested loops; unlisted
// positions pass V through.
inline NaiveAttention naive_attention(const AttentionProblem& p, const std::vector<std::size_t>& queries) {
  const std::size_t hw = p.positions(), c_in = p.x.dim(2), c_h = p.weights.wq.dim(0);
  auto proj = [&](const Tensor& wt, std::size_t pos, std::size_t o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c_in; ++i) acc += wt.at(o, i) * p.x[pos * c_in + i];
    return acc;
  };
  std::vector<double> v(hw * c_h);
  for (std::size_t pos = 0; pos < hw; ++pos)
    for (std::size_t o = 0; o < c_h; ++o) v[pos * c_h + o] = proj(p.weights.wv, pos, o);
  std::vector<double> r = v;
  NaiveAttention out;
  for (std::size_t q : queries) {
    std::vector<double> logits(hw);
    for (std::size_t j = 0; j < hw; ++j) {
      double acc = 0.0;
      for (std::size_t o = 0; o < c_h; ++o) acc += proj(p.weights.wq, q, o) * proj(p.weights.wk, j, o);
      logits[j] = acc;
    }
    double mx = logits[0];
    for (double l : logits) mx = l > mx ? l : mx;
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (double& l : logits) l /= z;
    for (std::size_t o = 0; o < c_h; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < hw; ++j) acc += logits[j] * v[j * c_h + o];
      r[q * c_h + o] = acc;
    }
    out.rows.push_back(std::move(logits));
  }
  out.y = p.x;
  for (std::size_t pos = 0; pos < hw; ++pos)
    for (std::size_t o = 0; o < c_in; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c_h; ++i) acc += p.weights.wz.at(o, i) * r[pos * c_h + i];
      out.y[pos * c_in + o] += acc;
    }
  return out;
}

}  // namespace planesynth::testing
