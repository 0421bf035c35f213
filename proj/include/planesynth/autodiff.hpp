#pragma once

// Reverse-mode differentiation over a fixed set of tensor primitives.
//
// A Tape records nodes in evaluation order. Every node stores its value, the
// ids of its inputs and a closure that turns the node's output gradient into
// input gradients. backward() sweeps the tape once in reverse; a second sweep
// throws TapeReuse. Leaves created with requires_grad = false (constants and
// disabled parameter groups) never receive a gradient.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "planesynth/attention.hpp"
#include "planesynth/errors.hpp"
#include "planesynth/geometry.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/plane_sampler.hpp"
#include "planesynth/supervision.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

class Tape;

struct Var {
  Tape* tape{nullptr};
  std::size_t id{0};

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Var leaf(Tensor value, bool requires_grad = true, std::string name = "leaf") {
    nodes_.push_back(Node{std::move(value), Tensor(), nullptr, std::move(name), requires_grad, {}});
    return {this, nodes_.size() - 1};
  }
  Var constant(Tensor value) { return leaf(std::move(value), false, "constant"); }

  Var record(std::string op, Tensor value, std::vector<Var> inputs, Backward backward) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape != this) throw InvalidArgument("op '" + op + "' mixes variables from different tapes");
      rg = rg || nodes_[v.id].requires_grad;
      ids.push_back(v.id);
    }
    nodes_.push_back(Node{std::move(value), Tensor(), rg ? std::move(backward) : nullptr, std::move(op), rg,
                          std::move(ids)});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Zero-initialised gradient buffer of v; only valid when v requires grad.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor(n.value.shape());
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void accumulate(Var v, const Tensor& g) {
    if (!requires_grad(v)) return;
    Tensor& buf = grad_buffer(v);
    require_same_shape(buf.shape(), g.shape(), "gradient accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  // Gradient of the last backward sweep w.r.t. v; zeros when none flowed.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
    return Tensor(n.value.shape());
  }

  void backward(Var loss) {
    if (consumed_) throw TapeReuse("backward() was already run on this tape");
    consumed_ = true;
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1)
      throw DimensionMismatch("backward() needs a scalar loss, got shape " + shape_string(root.value.shape()));
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
      for (std::size_t in : n.inputs) {
        const Node& src = nodes_[in];
        if (!src.requires_grad || src.grad.empty()) continue;
        for (double g : src.grad.data())
          if (!std::isfinite(g))
            throw NonFiniteGradient("non-finite gradient produced by op '" + n.op + "' (node " + std::to_string(id) +
                                    ")");
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    std::string op;
    bool requires_grad{false};
    std::vector<std::size_t> inputs;
  };
  std::vector<Node> nodes_;
  bool consumed_{false};
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace ad {

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives

inline Var sigmoid(Var x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = logistic(x.value()[i]);
  Tensor yc = y;
  return x.tape->record("sigmoid", std::move(y), {x}, [x, yc](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * yc[i] * (1.0 - yc[i]);
    t.accumulate(x, gx);
  });
}

inline double softplus_value(double a) { return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

inline Var softplus(Var x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = softplus_value(x.value()[i]);
  return x.tape->record("softplus", std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * logistic(x.value()[i]);
    t.accumulate(x, gx);
  });
}

inline Var reciprocal(Var x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / x.value()[i];
  Tensor yc = y;
  return x.tape->record("reciprocal", std::move(y), {x}, [x, yc](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = -g[i] * yc[i] * yc[i];
    t.accumulate(x, gx);
  });
}

inline Var square(Var x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * x.value()[i];
  return x.tape->record("square", std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = 2.0 * g[i] * x.value()[i];
    t.accumulate(x, gx);
  });
}

// a * x + b elementwise.
inline Var affine(Var x, double a, double b) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a * x.value()[i] + b;
  return x.tape->record("affine", std::move(y), {x}, [x, a](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = a * g[i];
    t.accumulate(x, gx);
  });
}

inline Var scale(Var x, double a) { return affine(x, a, 0.0); }

inline Var add(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return a.tape->record("add", std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var mul(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return a.tape->record("mul", std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * b.value()[i];
      gb[i] = g[i] * a.value()[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

// sum_k c_k x_k over same-shaped inputs.
inline Var linear(const std::vector<Var>& xs, const std::vector<double>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) throw DimensionMismatch("linear: one coefficient per input");
  Tensor y(xs[0].shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(xs[k].shape(), y.shape(), "linear");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += coeffs[k] * xs[k].value()[i];
  }
  return xs[0].tape->record("linear", std::move(y), xs, [xs, coeffs](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      Tensor gk(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gk[i] = coeffs[k] * g[i];
      t.accumulate(xs[k], gk);
    }
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, Tensor(x.shape(), g[0]));
  });
}

inline Var mean(Var x) {
  const double n = double(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("mean", Tensor::scalar(s / n), {x}, [x, n](Tape& t, const Tensor& g) {
    t.accumulate(x, Tensor(x.shape(), g[0] / n));
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, g.reshaped(x.shape()));
  });
}

// Multiplies slab i of x (leading axis) by factors[i].
inline Var scale_planes(Var x, std::vector<double> factors) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.dim(0) != factors.size()) throw DimensionMismatch("scale_planes: one factor per plane");
  Tensor y = xv;
  const std::size_t n = factors.size(), per = y.size() / n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < per; ++p) y[i * per + p] *= factors[i];
  return x.tape->record("scale_planes", std::move(y), {x}, [x, factors, n, per](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < per; ++p) gx[i * per + p] = g[i * per + p] * factors[i];
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Plane placement

// In-bin offsets a (pre-logistic, {N}) to disparities {N}.
inline Var bin_locations(Var a, const DisparityBins& bins) {
  std::vector<double> v(a.value().size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = logistic(a.value()[i]);
  auto d = locations_from_offsets(bins, v);
  const double slope = offset_location_slope(bins);
  return a.tape->record("bin_locations", Tensor(Shape{d.size()}, d), {a},
                        [a, v, slope](Tape& t, const Tensor& g) {
                          Tensor ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * slope * v[i] * (1.0 - v[i]);
                          t.accumulate(a, ga);
                        });
}

// N+1 global logits to disparities {N}.
inline Var global_locations(Var logits, const DisparityBins& bins) {
  auto d = planesynth::global_locations(bins, logits.value().data());
  return logits.tape->record("global_locations", Tensor(Shape{d.size()}, d), {logits},
                             [logits, bins](Tape& t, const Tensor& g) {
                               auto gl = global_locations_backward(bins, logits.value().data(), g.data());
                               t.accumulate(logits, Tensor(Shape{gl.size()}, gl));
                             });
}

// ---------------------------------------------------------------------------
// Rendering primitives

// Depths {N} to per-pixel ray spacings {N, H, W}.
inline Var plane_spacings(Var z, const CameraIntrinsics& k, std::size_t h, std::size_t w) {
  Tensor y = planesynth::plane_spacings(z.value().data(), k, h, w);
  return z.tape->record("plane_spacings", std::move(y), {z}, [z, k, h, w](Tape& t, const Tensor& g) {
    const Tensor rays = ray_lengths(k, h, w);
    const std::size_t n = z.value().size(), hw = h * w;
    std::vector<double> ga(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) ga[i] += g[i * hw + p] * rays[p];
    auto gz = axial_spacings_backward(z.value().data(), ga);
    t.accumulate(z, Tensor({n}, std::move(gz)));
  });
}

// Rendering weights {N, H, W} from densities and spacings.
inline Var composite(Var sigma, Var delta) {
  auto fwd = std::make_shared<CompositeResult>(planesynth::composite(sigma.value(), delta.value()));
  Tensor w = fwd->weights;
  return sigma.tape->record("composite", std::move(w), {sigma, delta}, [sigma, delta, fwd](Tape& t, const Tensor& g) {
    const Tensor gtau = composite_backward_tau(*fwd, g);
    if (t.requires_grad(sigma)) {
      Tensor gs(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] = gtau[i] * delta.value()[i];
      t.accumulate(sigma, gs);
    }
    if (t.requires_grad(delta)) {
      Tensor gd(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gd[i] = gtau[i] * sigma.value()[i];
      t.accumulate(delta, gd);
    }
  });
}

// sum_i w_i c_i; weights {N, H, W}, values {N, H, W, C}.
inline Var blend(Var weights, Var values) {
  Tensor y = planesynth::blend(weights.value(), values.value());
  return weights.tape->record("blend", std::move(y), {weights, values}, [weights, values](Tape& t, const Tensor& g) {
    const Tensor& w = weights.value();
    const Tensor& c = values.value();
    const std::size_t n = w.dim(0), hw = w.dim(1) * w.dim(2), ch = c.dim(3);
    if (t.requires_grad(weights)) {
      Tensor gw(w.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          double acc = 0.0;
          for (std::size_t k = 0; k < ch; ++k) acc += g[p * ch + k] * c[(i * hw + p) * ch + k];
          gw[i * hw + p] = acc;
        }
      t.accumulate(weights, gw);
    }
    if (t.requires_grad(values)) {
      Tensor gc(c.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t k = 0; k < ch; ++k) gc[(i * hw + p) * ch + k] = w[i * hw + p] * g[p * ch + k];
      t.accumulate(values, gc);
    }
  });
}

// sum_i w_i z_i; weights {N, H, W}, z {N}.
inline Var blend_depth(Var weights, Var z) {
  Tensor y = planesynth::blend_depth(weights.value(), z.value().data());
  return weights.tape->record("blend_depth", std::move(y), {weights, z}, [weights, z](Tape& t, const Tensor& g) {
    const Tensor& w = weights.value();
    const std::size_t n = w.dim(0), hw = w.dim(1) * w.dim(2);
    if (t.requires_grad(weights)) {
      Tensor gw(w.shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) gw[i * hw + p] = g[p] * z.value()[i];
      t.accumulate(weights, gw);
    }
    if (t.requires_grad(z)) {
      Tensor gz({n});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) gz[i] += g[p] * w[i * hw + p];
      t.accumulate(z, gz);
    }
  });
}

// Warps a source stack ({N, H, W, C} or {N, H, W}) into a target view. Each
// plane's homography is built from its source depth z_i, so gradients reach
// both the plane contents and the plane depths.
inline Var warp_planes(Var values, Var z, const CameraIntrinsics& k_s, const CameraIntrinsics& k_t,
                       const RigidTransform& pose, std::size_t ht, std::size_t wt, Boundary boundary) {
  const Tensor& v = values.value();
  const bool scalar_planes = v.rank() == 3;
  const std::size_t n = v.dim(0);
  const Tensor v4 = scalar_planes ? v.reshaped({n, v.dim(1), v.dim(2), 1}) : v;
  const auto hs = stack_homographies(z.value().data(), k_s, k_t, pose);
  Tensor out = planesynth::warp_planes(v4, hs, ht, wt, boundary);
  if (scalar_planes) out = out.reshaped({n, ht, wt});
  auto v4c = std::make_shared<Tensor>(v4);
  return values.tape->record(
      "warp_planes", std::move(out), {values, z},
      [values, z, k_s, k_t, pose, ht, wt, boundary, hs, v4c, scalar_planes](Tape& t, const Tensor& g) {
        const std::size_t n = v4c->dim(0);
        const Tensor g4 = scalar_planes ? g.reshaped({n, ht, wt, 1}) : g;
        const bool need_values = t.requires_grad(values);
        auto wg = warp_planes_backward(*v4c, hs, ht, wt, boundary, g4, need_values);
        if (need_values) t.accumulate(values, scalar_planes ? wg.values.reshaped(values.shape()) : wg.values);
        if (t.requires_grad(z)) {
          Tensor gz({n});
          for (std::size_t i = 0; i < n; ++i) {
            const auto tp = target_plane(pose, z.value()[i]);
            const Mat3 dH = plane_homography_depth_derivative(k_s, k_t, pose, tp.offset, tp.normal);
            gz[i] = (wg.homographies[i].array() * dH.array()).sum();
          }
          t.accumulate(z, gz);
        }
      });
}

// Source-frame plane depths to target-frame axial depths.
inline Var target_depths(Var z, const RigidTransform& pose) {
  const double r22 = pose.R(2, 2);
  return affine(z, 1.0 / r22, -pose.t.z() / r22);
}

// ---------------------------------------------------------------------------
// Supervision primitives

// Target depth map {H, W} to source coordinates {H, W, 3} (x_s, y_s, Z_s).
// The validity map is written to *valid when given.
inline Var reproject(Var depth, const CameraIntrinsics& k_t, const CameraIntrinsics& k_s, const RigidTransform& pose,
                     std::size_t source_h, std::size_t source_w, Tensor* valid = nullptr) {
  auto rp = planesynth::reproject(depth.value(), k_t, k_s, pose, source_h, source_w);
  if (valid) *valid = rp.valid;
  return depth.tape->record("reproject", std::move(rp.coords), {depth}, [depth, k_t, k_s, pose](Tape& t, const Tensor& g) {
    t.accumulate(depth, reproject_backward(depth.value(), k_t, k_s, pose, g));
  });
}

// Bilinear lookup of an {H, W, C} image at coords {Ht, Wt, >=2} (x, y first).
inline Var sample(Var image, Var coords, Boundary boundary) {
  const Tensor& img = image.value();
  const Tensor& c = coords.value();
  if (img.rank() != 3 || c.rank() != 3 || c.dim(2) < 2) throw DimensionMismatch("sample: bad image or coords shape");
  const std::size_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
  const std::size_t ht = c.dim(0), wt = c.dim(1), cs = c.dim(2);
  Tensor out({ht, wt, ch});
  for (std::size_t p = 0; p < ht * wt; ++p) {
    const auto tap = BilinearTap::make(c[p * cs], c[p * cs + 1], h, w, boundary);
    sample_tap(img.data(), w, ch, tap, boundary, out.data().data() + p * ch);
  }
  return image.tape->record("sample", std::move(out), {image, coords}, [image, coords, boundary](Tape& t, const Tensor& g) {
    const Tensor& img = image.value();
    const Tensor& c = coords.value();
    const std::size_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
    const std::size_t n = c.dim(0) * c.dim(1), cs = c.dim(2);
    const bool need_img = t.requires_grad(image);
    Tensor gimg = need_img ? Tensor(img.shape()) : Tensor();
    Tensor gc(c.shape());
    for (std::size_t p = 0; p < n; ++p) {
      const auto tap = BilinearTap::make(c[p * cs], c[p * cs + 1], h, w, boundary);
      const Vec2 d = sample_tap_backward(img.data(), w, ch, tap, boundary, g.data().data() + p * ch,
                                         need_img ? gimg.data() : std::span<double>());
      gc[p * cs] = d.x();
      gc[p * cs + 1] = d.y();
    }
    if (need_img) t.accumulate(image, gimg);
    t.accumulate(coords, gc);
  });
}

inline Var l1(Var a, Var b) {
  const double v = l1_loss(a.value(), b.value());
  return a.tape->record("l1", Tensor::scalar(v), {a, b}, [a, b](Tape& t, const Tensor& g) {
    Tensor ga = l1_loss_backward(a.value(), b.value());
    for (double& x : ga.raw()) x *= g[0];
    if (t.requires_grad(b)) {
      Tensor gb = ga;
      for (double& x : gb.raw()) x = -x;
      t.accumulate(b, gb);
    }
    t.accumulate(a, ga);
  });
}

// Occlusion-aware reprojection loss between a target image and the source
// image reprojected into the target view.
inline Var reprojection_loss(Var image_t, Var reprojected, const OcclusionMask& mask) {
  const double v = planesynth::reprojection_loss(image_t.value(), reprojected.value(), mask);
  return image_t.tape->record("reprojection_loss", Tensor::scalar(v), {image_t, reprojected},
                              [image_t, reprojected, mask](Tape& t, const Tensor& g) {
                                Tensor gr = reprojection_loss_backward(image_t.value(), reprojected.value(), mask);
                                for (double& x : gr.raw()) x *= g[0];
                                if (t.requires_grad(image_t)) {
                                  Tensor gi = gr;
                                  for (double& x : gi.raw()) x = -x;
                                  t.accumulate(image_t, gi);
                                }
                                t.accumulate(reprojected, gr);
                              });
}

// Edge-aware smoothness of a disparity map {H, W} against a fixed image.
inline Var smoothness(Var disp, const Tensor& image) {
  const double v = edge_aware_smoothness(disp.value(), image);
  return disp.tape->record("smoothness", Tensor::scalar(v), {disp}, [disp, image](Tape& t, const Tensor& g) {
    Tensor gd = edge_aware_smoothness_backward(disp.value(), image);
    for (double& x : gd.raw()) x *= g[0];
    t.accumulate(disp, gd);
  });
}

// 1 / max(D, eps).
inline Var disparity(Var depth) {
  Tensor y = disparity_from_depth(depth.value());
  return depth.tape->record("disparity", std::move(y), {depth}, [depth](Tape& t, const Tensor& g) {
    const Tensor& d = depth.value();
    Tensor gd(d.shape());
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] > kDisparityEpsilon) gd[i] = -g[i] / (d[i] * d[i]);
    t.accumulate(depth, gd);
  });
}

// ---------------------------------------------------------------------------
// Attention

// Full attention when block is empty, block-sampled attention otherwise.
inline Var attention(Var x, Var wq, Var wk, Var wv, Var wz, std::optional<BlockSampleSpec> block = std::nullopt) {
  AttentionProblem prob{x.value(), {wq.value(), wk.value(), wv.value(), wz.value()}, 1};
  prob.samples = block ? block->count() : prob.positions();
  auto cache = std::make_shared<AttentionCache>(block ? bs_self_attention_cached(prob, *block)
                                                      : full_self_attention_cached(prob));
  Tensor y = cache->y;
  return x.tape->record(block ? "bs_self_attention" : "full_self_attention", std::move(y), {x, wq, wk, wv, wz},
                        [x, wq, wk, wv, wz, cache, prob](Tape& t, const Tensor& g) {
                          auto ag = attention_backward(prob, *cache, g);
                          t.accumulate(x, ag.x);
                          t.accumulate(wq, ag.weights.wq);
                          t.accumulate(wk, ag.weights.wk);
                          t.accumulate(wv, ag.weights.wv);
                          t.accumulate(wz, ag.weights.wz);
                        });
}

}  // namespace ad
}  // namespace planesynth
