#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "planesynth.hpp"
#include "planesynth/testing/gradcheck.hpp"
#include "planesynth/testing/oracles.hpp"
#include "planesynth/testing/self_check.hpp"

using namespace planesynth;
namespace pt = planesynth::testing;

namespace {

Tensor gray_image(std::size_t h, std::size_t w, std::vector<double> values) {
  Tensor img({h, w, 3});
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < 3; ++c) img[p * 3 + c] = values[p];
  return img;
}

double smooth_texture(double x, double y, std::size_t c) {
  return 0.5 + 0.3 * std::sin(0.09 * x + 0.3 * double(c)) * std::cos(0.07 * y);
}

}  // namespace

TEST(OcclusionMask, IdentityPoseIsClear) {
  std::mt19937_64 rng(1);
  const Tensor d = pt::random_tensor({6, 7}, rng, 1, 5);
  const CameraIntrinsics k{7, 7, 3, 2.5};
  const OcclusionMask m = occlusion_mask(d, d, RigidTransform::identity(), k, k, kOcclusionConstant, 1.0);
  for (double v : m.occluded.data()) EXPECT_EQ(v, 0.0);
  for (double v : m.valid.data()) EXPECT_EQ(v, 1.0);
}

TEST(OcclusionMask, DepthGapAboveThresholdIsOccluded) {
  const CameraIntrinsics k{1, 1, 0, 0};
  // Principal pixel at target depth 1.0 lands at source depth 1.5.
  const Tensor dt({1, 1}, {1.0}), ds({1, 1}, {1.0});
  const auto pose = RigidTransform::translation(0, 0, 0.5);
  EXPECT_EQ(occlusion_mask(dt, ds, pose, k, k, 0.2, 1.0).occluded[0], 1.0);
  // A gap of 0.1 stays below c*s = 0.2.
  EXPECT_EQ(occlusion_mask(dt, ds, RigidTransform::translation(0, 0, 0.1), k, k, 0.2, 1.0).occluded[0], 0.0);
}

TEST(OcclusionMask, MatchesExhaustiveRayTestOutsideBand) {
  const SyntheticScene scene = pt::two_plane_oracle_scene();
  const CameraIntrinsics k{8, 8, 3.5, 3.5};
  const auto pose = RigidTransform::translation(0.5, 0, 0);
  const auto src = render_scene_analytic(scene, k, RigidTransform::identity(), 8, 8);
  const auto tgt = render_scene_analytic(scene, k, pose, 8, 8);
  const OcclusionMask m = occlusion_mask(tgt.depth, src.depth, pose, k, k, kOcclusionConstant, 1.0);
  const pt::VisibilityOracle ref = pt::exhaustive_visibility(scene, k, pose, 8, 8, k, 8, 8);
  std::size_t occluded = 0, compared = 0;
  for (std::size_t p = 0; p < 64; ++p) {
    EXPECT_EQ(m.valid[p], ref.valid[p]) << "pixel " << p;
    if (ref.valid[p] == 0.0) continue;
    if (ref.gap[p] > 0.0 && ref.gap[p] < kOcclusionConstant) continue;
    ++compared;
    occluded += ref.occluded[p] != 0.0;
    EXPECT_EQ(m.occluded[p], ref.occluded[p]) << "pixel " << p;
  }
  EXPECT_GT(occluded, 0u);
  EXPECT_GT(compared, 30u);
}

TEST(OcclusionMask, ScaleConsistent) {
  std::mt19937_64 rng(2);
  const Tensor dt = pt::random_tensor({6, 6}, rng, 1, 4), ds = pt::random_tensor({6, 6}, rng, 1, 4);
  const CameraIntrinsics k{6, 6, 2.5, 2.5};
  const auto pose = RigidTransform::translation(0.3, -0.1, 0.2);
  const OcclusionMask a = occlusion_mask(dt, ds, pose, k, k, 0.2, 1.0);
  const double f = 3.0;
  Tensor dt2 = dt, ds2 = ds;
  for (double& v : dt2.raw()) v *= f;
  for (double& v : ds2.raw()) v *= f;
  const OcclusionMask b = occlusion_mask(dt2, ds2, RigidTransform::translation(0.3 * f, -0.1 * f, 0.2 * f), k, k, 0.2, f);
  EXPECT_EQ(a.occluded.raw(), b.occluded.raw());
  EXPECT_EQ(a.valid.raw(), b.valid.raw());
}

TEST(ReprojectionImage, IdentityPoseReturnsSource) {
  std::mt19937_64 rng(3);
  const Tensor img = pt::random_tensor({5, 6, 3}, rng, 0, 1);
  const Tensor d = pt::random_tensor({5, 6}, rng, 1, 3);
  const CameraIntrinsics k{6, 6, 2.5, 2};
  const auto r = reprojection_image(img, d, RigidTransform::identity(), k, k);
  for (std::size_t p = 0; p < 30; ++p) {
    ASSERT_EQ(r.valid[p], 1.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.image[p * 3 + c], img[p * 3 + c], 1e-12);
  }
}

TEST(ReprojectionImage, PlanarSceneMatchesAnalyticShift) {
  const std::size_t n = 32;
  const CameraIntrinsics k{32, 32, 15.5, 15.5};
  Tensor img({n, n, 3});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = smooth_texture(double(x), double(y), c);
  const double z = 3.0, b = 0.15, by = -0.1;
  const Tensor depth({n, n}, z);
  const auto r = reprojection_image(img, depth, RigidTransform::translation(b, by, 0), k, k);
  for (std::size_t y = 3; y < n - 3; ++y)
    for (std::size_t x = 3; x < n - 3; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(r.image.at(y, x, c), smooth_texture(double(x) + k.fx * b / z, double(y) + k.fy * by / z, c), 1e-3);
}

TEST(ReprojectionImage, OutOfBoundsPoseHasNoSupport) {
  std::mt19937_64 rng(4);
  const Tensor img = pt::random_tensor({4, 4, 3}, rng, 0, 1), other = pt::random_tensor({4, 4, 3}, rng, 0, 1);
  const CameraIntrinsics k{4, 4, 1.5, 1.5};
  const Tensor depth({4, 4}, 2.0);
  const auto pose = RigidTransform::translation(100, 0, 0);
  const auto r = reprojection_image(img, depth, pose, k, k);
  for (double v : r.valid.data()) EXPECT_EQ(v, 0.0);
  const OcclusionMask m = occlusion_mask(depth, depth, pose, k, k, 0.2, 1.0);
  EXPECT_EQ(reprojection_loss(other, r.image, m), 0.0);
}

TEST(ReprojectionLoss, Examples) {
  std::mt19937_64 rng(5);
  const Tensor a = pt::random_tensor({3, 3, 3}, rng, 0, 1), b = pt::random_tensor({3, 3, 3}, rng, 0, 1);
  OcclusionMask clear{Tensor({3, 3}), Tensor({3, 3}, 1.0)};
  EXPECT_EQ(reprojection_loss(a, a, clear), 0.0);

  const Tensor it = gray_image(1, 2, {0.5, 0.5}), ir = gray_image(1, 2, {0.9, -0.1});
  OcclusionMask m{Tensor({1, 2}, {0.0, 1.0}), Tensor({1, 2}, 1.0)};
  EXPECT_DOUBLE_EQ(reprojection_loss(it, ir, m), 0.2);

  OcclusionMask all{Tensor({3, 3}, 1.0), Tensor({3, 3}, 1.0)};
  EXPECT_EQ(reprojection_loss(a, b, all), 0.0);
}

TEST(ReprojectionLoss, NonIncreasingInMaskCoverage) {
  std::mt19937_64 rng(6);
  const Tensor a = pt::random_tensor({6, 6, 3}, rng, 0, 1), b = pt::random_tensor({6, 6, 3}, rng, 0, 1);
  OcclusionMask m{Tensor({6, 6}), Tensor({6, 6}, 1.0)};
  double prev = reprojection_loss(a, b, m);
  EXPECT_GT(prev, 0.0);
  for (std::size_t p = 0; p < 36; p += 5) {
    m.occluded[p] = 1.0;
    const double cur = reprojection_loss(a, b, m);
    EXPECT_LE(cur, prev);
    EXPECT_GE(cur, 0.0);
    prev = cur;
  }
}

TEST(Smoothness, Examples) {
  std::mt19937_64 rng(7);
  const Tensor img = pt::random_tensor({4, 5, 3}, rng, 0, 1);
  EXPECT_EQ(edge_aware_smoothness(Tensor({4, 5}, 0.7), img), 0.0);

  const Tensor flat({1, 3, 3}, 0.5);
  EXPECT_DOUBLE_EQ(edge_aware_smoothness_normalized(Tensor({1, 3}, {1.0, 1.0, 2.0}), flat), 0.5);

  // Same disparity step, with and without a colocated image edge.
  Tensor step({4, 4});
  Tensor edge({4, 4, 3}, 0.1);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 2; x < 4; ++x) {
      step.at(y, x) = 1.0;
      for (std::size_t c = 0; c < 3; ++c) edge.at(y, x, c) = 0.9;
    }
  for (double& v : step.raw()) v += 1.0;
  EXPECT_LT(edge_aware_smoothness(step, edge), edge_aware_smoothness(step, Tensor({4, 4, 3}, 0.5)));
}

TEST(TotalLoss, PerfectRenderOnOcclusionFreePair) {
  // Target pixel x sees source pixel x + 1: fx*b/z = 8*0.5/4.
  std::mt19937_64 rng(8);
  const std::size_t h = 6, w = 8;
  const CameraIntrinsics k{8, 8, 3.5, 2.5};
  const Tensor is = pt::random_tensor({h, w, 3}, rng, 0, 1);
  Tensor it({h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) it.at(y, x, c) = is.at(y, std::min(x + 1, w - 1), c);
  RenderOutput r;
  r.image = it;
  r.depth = Tensor({h, w}, 4.0);
  const Tensor ds({h, w}, 4.0);
  const auto pose = RigidTransform::translation(0.5, 0, 0);
  LossConfig cfg;
  const LossReport rep = total_loss(r, it, is, ds, pose, k, k, cfg);
  EXPECT_EQ(rep.l1, 0.0);
  EXPECT_NEAR(rep.rep, 0.0, 1e-15);
  EXPECT_NEAR(rep.total, cfg.beta * rep.smooth, 1e-15);
  EXPECT_GE(rep.smooth, 0.0);
}

TEST(TotalLoss, LambdaZeroIsAppearanceOnly) {
  std::mt19937_64 rng(9);
  const CameraIntrinsics k{6, 6, 2.5, 2.5};
  RenderOutput r;
  r.image = pt::random_tensor({6, 6, 3}, rng, 0, 1);
  r.depth = pt::random_tensor({6, 6}, rng, 1, 3);
  const Tensor it = pt::random_tensor({6, 6, 3}, rng, 0, 1), is = pt::random_tensor({6, 6, 3}, rng, 0, 1);
  LossConfig cfg;
  cfg.lambda = 0.0;
  const LossReport rep = total_loss(r, it, is, r.depth, RigidTransform::translation(0.1, 0, 0), k, k, cfg);
  EXPECT_GT(rep.rep, 0.0);
  EXPECT_EQ(rep.total, rep.l1 + cfg.beta * rep.smooth);
  cfg.lambda = 1.0;
  const LossReport full = total_loss(r, it, is, r.depth, RigidTransform::translation(0.1, 0, 0), k, k, cfg);
  EXPECT_EQ(full.total, full.l1 + cfg.beta * full.smooth + full.rep);
  EXPECT_GE(full.l1, 0.0);
  EXPECT_GE(full.smooth, 0.0);
}

TEST(TotalLoss, DroppingTheMaskRaisesReprojection) {
  const Rig rig{32, 32, 32};
  const BenchmarkScene b = occlusion_scene(1, rig);
  const auto pose = camera_at(0.18, 0.0, 0.0);
  const ViewPair vp = make_view_pair(b.scene, rig, pose);
  RenderOutput r;
  r.image = vp.target.image;
  r.depth = vp.target.depth;
  LossConfig on, off;
  off.mask = MaskMode::Off;
  const double with_mask = total_loss(r, vp.target.image, vp.source.image, vp.source.depth, pose, vp.source.K,
                                      vp.target.K, on).rep;
  const double without = total_loss(r, vp.target.image, vp.source.image, vp.source.depth, pose, vp.source.K,
                                    vp.target.K, off).rep;
  EXPECT_GT(without, with_mask);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.beta = -0.1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.scale = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(parse_mask_mode("off"), MaskMode::Off);
  EXPECT_THROW(parse_mask_mode("maybe"), InvalidArgument);
}

TEST(Disparity, FloorsDepth) {
  const Tensor d = disparity_from_depth(Tensor({1, 3}, {2.0, 0.0, -1.0}));
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 1.0 / kDisparityEpsilon);
  EXPECT_DOUBLE_EQ(d[2], 1.0 / kDisparityEpsilon);
}
