#pragma once

// Direct optimisation of a plane stack against posed views.
//
// Plane colours are logistic(rgb_logits), densities are
// softplus(sigma_pre) * density_scale_i, and plane disparities come from the
// placement strategy. density_scale_i is the reciprocal of the axial spacing
// between bin-centre planes, so a unit pre-activation means roughly unit
// optical thickness on every plane regardless of where it sits in depth.
//
// Each step renders the source view and every target view, and minimises
//   mean over views of [ l1 + beta * smooth ] + lambda * (sum over targets of rep) / views
// where the reprojection term uses the source ground-truth image, the
// rendered target depth and an occlusion mask computed from the rendered
// source depth.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "planesynth/autodiff.hpp"
#include "planesynth/errors.hpp"
#include "planesynth/metrics.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/optim.hpp"
#include "planesynth/plane_sampler.hpp"
#include "planesynth/supervision.hpp"

namespace planesynth {

struct View {
  Tensor image;          // {H, W, 3}
  Tensor depth;          // {H, W} ground truth; may be empty
  CameraIntrinsics K;
  RigidTransform pose;   // source <- this view
};

struct FitProblem {
  View source;                // pose must be the identity
  std::vector<View> targets;  // at least one
  std::optional<View> eval;   // metrics view; the first target when absent

  const View& metrics_view() const { return eval ? *eval : targets.front(); }

  void validate() const {
    if (targets.empty()) throw InvalidArgument("fit needs a source view and at least one target view");
    if (!source.pose.is_identity()) throw InvalidArgument("the source view pose must be the identity");
    if (source.image.rank() != 3 || source.image.dim(2) != 3)
      throw DimensionMismatch("source image must be {H, W, 3}");
    for (const auto& v : targets) {
      if (v.image.rank() != 3 || v.image.dim(2) != 3) throw DimensionMismatch("target image must be {H, W, 3}");
      v.pose.validate();
      v.K.validate();
    }
    source.K.validate();
  }
};

struct FitConfig {
  DisparityBins bins{1.0, 0.05, 8};
  PlacementKind placement{PlacementKind::Local};
  OptSchedule schedule{};
  LossConfig loss{};
  std::size_t log_every{10};
  std::uint64_t seed{0};     // placement substream
  // Initial opacity of every plane but the farthest, and of the farthest.
  double init_front_alpha{0.02};
  double init_back_alpha{0.95};

  std::size_t planes() const { return bins.count; }

  void validate() const {
    bins.validate();
    schedule.validate();
    loss.validate();
    if (log_every < 1) throw InvalidArgument("log_every must be >= 1");
    if (!(init_front_alpha > 0.0) || !(init_front_alpha < 1.0)) throw InvalidArgument("init_front_alpha must lie in (0, 1)");
    if (!(init_back_alpha > 0.0) || !(init_back_alpha < 1.0)) throw InvalidArgument("init_back_alpha must lie in (0, 1)");
  }
};

struct HistoryRow {
  std::size_t step{0};
  double l1{0}, smooth{0}, rep{0}, total{0};
  double rv{0}, psnr{0}, ssim{0};
  std::vector<double> disparity;
};

struct FitResult {
  PlaneStack stack;
  std::vector<HistoryRow> history;
  std::vector<double> offsets;  // v_i for locally learned placement
  std::vector<double> global_logits;
  LossReport final_loss;
  double final_rv{0};
  double final_psnr{0};         // metrics view
  double final_ssim{0};
  double final_source_psnr{0};
};

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

// Per-plane density multipliers shared by every placement strategy.
inline std::vector<double> density_scales(const DisparityBins& bins) {
  std::vector<double> z(bins.count);
  for (std::size_t i = 0; i < bins.count; ++i) z[i] = 1.0 / bins.center(i);
  auto s = axial_spacings(z);
  for (double& v : s) v = 1.0 / v;
  return s;
}

class Fitter {
 public:
  Fitter(FitProblem problem, FitConfig config)
      : prob_(std::move(problem)), cfg_(std::move(config)), strategy_(make_strategy(cfg_.placement, cfg_.planes(), cfg_.seed)) {
    prob_.validate();
    cfg_.validate();
    h_ = prob_.source.image.dim(0);
    w_ = prob_.source.image.dim(1);
    scales_ = density_scales(cfg_.bins);
    init_parameters();
    disparity_ = place(strategy_, cfg_.bins);
  }

  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }
  const std::vector<double>& density_scale() const { return scales_; }
  bool learnable_placement() const {
    return cfg_.placement == PlacementKind::Local || cfg_.placement == PlacementKind::Global;
  }

  // Loss of the current parameters; when grads is given it receives one
  // gradient per parameter group (empty for groups that are disabled).
  LossReport evaluate(std::vector<Tensor>* grads = nullptr) {
    Tape tape;
    const bool want = grads != nullptr;
    auto& G = params_.groups();
    Var rgb_l = tape.leaf(G[0].value, want && G[0].enabled, "rgb_logits");
    Var sig_p = tape.leaf(G[1].value, want && G[1].enabled, "sigma_pre");
    std::optional<Var> place_leaf;
    Var d;
    if (learnable_placement()) {
      place_leaf = tape.leaf(G[2].value, want && G[2].enabled, "placement");
      d = cfg_.placement == PlacementKind::Local ? ad::bin_locations(*place_leaf, cfg_.bins)
                                                  : ad::global_locations(*place_leaf, cfg_.bins);
    } else {
      d = tape.constant(Tensor({disparity_.size()}, disparity_));
    }
    disparity_ = d.value().raw();
    // Saturated placement parameters can merge neighbouring planes.
    for (std::size_t i = 0; i < disparity_.size(); ++i)
      if (!std::isfinite(disparity_[i]) || !(disparity_[i] > 0.0) || (i > 0 && !(disparity_[i] < disparity_[i - 1])))
        throw Diverged("plane locations collapsed or became non-finite at plane " + std::to_string(i + 1));

    Var z = ad::reciprocal(d);
    Var rgb = ad::sigmoid(rgb_l);
    Var sigma = ad::scale_planes(ad::softplus(sig_p), scales_);
    const CameraIntrinsics& K = prob_.source.K;

    std::vector<Var> terms;
    std::vector<double> coeffs;
    const double views = double(1 + prob_.targets.size());
    LossReport rep;
    rep.lambda = cfg_.loss.lambda;
    rep.beta = cfg_.loss.beta;

    Var w = ad::composite(sigma, ad::plane_spacings(z, K, h_, w_));
    Var img = ad::blend(w, rgb);
    Var dep = ad::blend_depth(w, z);
    Var l1s = ad::l1(img, tape.constant(prob_.source.image));
    Var sms = ad::smoothness(ad::disparity(dep), prob_.source.image);
    terms.insert(terms.end(), {l1s, sms});
    coeffs.insert(coeffs.end(), {1.0 / views, cfg_.loss.beta / views});
    rep.l1 += l1s.item() / views;
    rep.smooth += sms.item() / views;
    const Tensor depth_s = dep.value();
    Var image_s = tape.constant(prob_.source.image);

    for (const View& v : prob_.targets) {
      const std::size_t ht = v.image.dim(0), wt = v.image.dim(1);
      Var rgb_t = ad::warp_planes(rgb, z, K, v.K, v.pose, ht, wt, Boundary::Clamp);
      Var sig_t = ad::warp_planes(sigma, z, K, v.K, v.pose, ht, wt, Boundary::Clamp);
      Var z_t = ad::target_depths(z, v.pose);
      Var w_t = ad::composite(sig_t, ad::plane_spacings(z_t, v.K, ht, wt));
      Var img_t = ad::blend(w_t, rgb_t);
      Var dep_t = ad::blend_depth(w_t, z_t);
      Var l1t = ad::l1(img_t, tape.constant(v.image));
      Var smt = ad::smoothness(ad::disparity(dep_t), v.image);

      OcclusionMask mask = occlusion_mask(dep_t.value(), depth_s, v.pose, K, v.K, cfg_.loss.occ_c, cfg_.loss.scale);
      if (cfg_.loss.mask == MaskMode::Off) mask.occluded.fill(0.0);
      Var coords = ad::reproject(dep_t, v.K, K, v.pose, h_, w_, &mask.valid);
      Var reproj = ad::sample(image_s, coords, Boundary::Zero);
      Var rpt = ad::reprojection_loss(tape.constant(v.image), reproj, mask);

      terms.insert(terms.end(), {l1t, smt, rpt});
      coeffs.insert(coeffs.end(), {1.0 / views, cfg_.loss.beta / views, cfg_.loss.lambda / views});
      rep.l1 += l1t.item() / views;
      rep.smooth += smt.item() / views;
      rep.rep += rpt.item() / views;
    }
    Var total = ad::linear(terms, coeffs);
    rep.total = total.item();
    if (!std::isfinite(rep.total)) throw Diverged("loss became non-finite");

    if (want) {
      tape.backward(total);
      grads->clear();
      grads->push_back(G[0].enabled ? tape.grad(rgb_l) : Tensor());
      grads->push_back(G[1].enabled ? tape.grad(sig_p) : Tensor());
      if (place_leaf) grads->push_back(G[2].enabled ? tape.grad(*place_leaf) : Tensor());
    }
    return rep;
  }

  PlaneStack stack() const {
    const std::size_t n = cfg_.planes();
    PlaneStack s = PlaneStack::blank(n, h_, w_, disparity_, prob_.source.K);
    s.scale = cfg_.loss.scale;
    const auto& G = params_.groups();
    for (std::size_t i = 0; i < s.rgb.size(); ++i) s.rgb[i] = logistic(G[0].value[i]);
    const std::size_t hw = h_ * w_;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) s.sigma[i * hw + p] = ad::softplus_value(G[1].value[i * hw + p]) * scales_[i];
    return s;
  }

  HistoryRow metrics_row(std::size_t step, const LossReport& r) const {
    HistoryRow row;
    row.step = step;
    row.l1 = r.l1;
    row.smooth = r.smooth;
    row.rep = r.rep;
    row.total = r.total;
    row.disparity = disparity_;
    const PlaneStack s = stack();
    row.rv = prob_.source.depth.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : rendering_variance(s, prob_.source.depth, cfg_.loss.scale).value;
    const View& mv = prob_.metrics_view();
    const auto out = render_novel_view(s, mv.K, mv.pose, std::array<std::size_t, 2>{mv.image.dim(0), mv.image.dim(1)});
    row.psnr = psnr(out.image, mv.image);
    row.ssim = ssim(out.image, mv.image);
    return row;
  }

  FitResult run() {
    const std::size_t steps = cfg_.schedule.total_steps;
    FitResult res;
    std::vector<Tensor> grads;
    for (std::size_t step = 0; step <= steps; ++step) {
      const bool update = step < steps;
      const SchedulePhase phase = cfg_.schedule.at(update ? step : steps - 1);
      if (cfg_.placement == PlacementKind::Random && update) disparity_ = place(strategy_, cfg_.bins);
      auto& G = params_.groups();
      if (learnable_placement()) G[2].enabled = phase.placement_enabled;
      const LossReport r = evaluate(update ? &grads : nullptr);
      if (step % cfg_.log_every == 0 || step == steps) res.history.push_back(metrics_row(step, r));
      if (!update) {
        res.final_loss = r;
        break;
      }
      // Learning rates enter through the group multipliers.
      G[0].lr_multiplier = phase.content_lr;
      G[1].lr_multiplier = phase.content_lr;
      if (learnable_placement()) G[2].lr_multiplier = phase.placement_lr;
      adam_step(params_, grads, 1.0);
    }
    res.stack = stack();
    const HistoryRow& last = res.history.back();
    res.final_rv = last.rv;
    res.final_psnr = last.psnr;
    res.final_ssim = last.ssim;
    res.final_source_psnr = psnr(render_image(res.stack), prob_.source.image);
    if (cfg_.placement == PlacementKind::Local)
      for (double a : params_.group("placement").value.data()) res.offsets.push_back(logistic(a));
    if (cfg_.placement == PlacementKind::Global) res.global_logits = params_.group("placement").value.raw();
    return res;
  }

 private:
  void init_parameters() {
    const std::size_t n = cfg_.planes();
    // Every plane starts with the source image as colour.
    Tensor rgb({n, h_, w_, 3});
    const std::size_t per = h_ * w_ * 3;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < per; ++p) {
        const double c = std::clamp(prob_.source.image[p], 0.02, 0.98);
        rgb[i * per + p] = std::log(c / (1.0 - c));
      }
    // Nearly transparent front planes over an opaque back plane. Starting from
    // evenly shared weights leaves the weight spread over many planes, which
    // biases the blended depth and drags the planes away from the surfaces.
    Tensor sig({n, h_, w_});
    const std::size_t hw = h_ * w_;
    for (std::size_t i = 0; i < n; ++i) {
      const double alpha = i + 1 < n ? cfg_.init_front_alpha : cfg_.init_back_alpha;
      const double pre = inverse_softplus(-std::log1p(-alpha));
      for (std::size_t p = 0; p < hw; ++p) sig[i * hw + p] = pre;
    }
    params_.add("rgb", std::move(rgb));
    params_.add("sigma", std::move(sig));
    if (cfg_.placement == PlacementKind::Local) params_.add("placement", Tensor({n}));
    if (cfg_.placement == PlacementKind::Global) params_.add("placement", Tensor({n + 1}));
  }

  FitProblem prob_;
  FitConfig cfg_;
  PlacementStrategy strategy_;
  ParameterSet params_;
  std::vector<double> scales_;
  std::vector<double> disparity_;
  std::size_t h_{0}, w_{0};
};

inline FitResult fit(FitProblem problem, FitConfig config) { return Fitter(std::move(problem), std::move(config)).run(); }

}  // namespace planesynth
