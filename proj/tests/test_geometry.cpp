#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "planesynth.hpp"
#include "planesynth/testing/gradcheck.hpp"

using namespace planesynth;
namespace pt = planesynth::testing;

namespace {

const CameraIntrinsics kK100{100, 100, 50, 50};

Homography random_projective(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.02, 0.02);
  Homography h;
  h.H << 1 + u(rng) * 5, u(rng) * 5, u(rng) * 50, u(rng) * 5, 1 + u(rng) * 5, u(rng) * 50, u(rng) * 0.05,
      u(rng) * 0.05, 1.0;
  return h;
}

}  // namespace

TEST(Project, PrincipalRayWithIdentityIntrinsics) {
  const Vec2 q = project(Vec3(0, 0, 2), CameraIntrinsics::identity());
  EXPECT_DOUBLE_EQ(q.x(), 0.0);
  EXPECT_DOUBLE_EQ(q.y(), 0.0);
}

TEST(Project, DirectSubstitution) {
  const Vec2 q = project(Vec3(1, 2, 4), kK100);
  EXPECT_DOUBLE_EQ(q.x(), 75.0);
  EXPECT_DOUBLE_EQ(q.y(), 100.0);
}

TEST(Project, RoundTripThroughBackproject) {
  const Vec2 q = project(backproject(Vec2(13.5, 7.25), 3.7, kK100), kK100);
  EXPECT_NEAR(q.x(), 13.5, 1e-12);
  EXPECT_NEAR(q.y(), 7.25, 1e-12);
}

TEST(Project, RejectsNonPositiveDepth) {
  EXPECT_THROW(project(Vec3(1, 1, 0), kK100), NonPositiveDepth);
  EXPECT_THROW(project(Vec3(1, 1, -2), kK100), NonPositiveDepth);
  EXPECT_THROW(backproject(Vec2(1, 1), 0.0, kK100), NonPositiveDepth);
}

TEST(Backproject, Examples) {
  EXPECT_TRUE(backproject(Vec2(0, 0), 5.0, CameraIntrinsics::identity()).isApprox(Vec3(0, 0, 5)));
  const Vec3 p = backproject(Vec2(75, 100), 4.0, kK100);
  EXPECT_DOUBLE_EQ(p.x(), 1.0);
  EXPECT_DOUBLE_EQ(p.y(), 2.0);
  EXPECT_DOUBLE_EQ(p.z(), 4.0);
  EXPECT_TRUE(backproject(Vec2(50, 50), 1.0, kK100).isApprox(Vec3(0, 0, 1)));
}

TEST(Backproject, CameraSpaceRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3, 3), z(0.1, 50);
  for (int k = 0; k < 200; ++k) {
    const Vec3 p(u(rng), u(rng), z(rng));
    const Vec3 r = backproject(project(p, kK100), p.z(), kK100);
    EXPECT_LE((r - p).norm(), 1e-9 * p.norm());
  }
}

TEST(PlaneHomography, StaticCameraIsIdentity) {
  for (double z : {0.5, 1.0, 7.0, 1e6})
    EXPECT_TRUE(plane_homography(kK100, kK100, RigidTransform::identity(), z).H.isApprox(Mat3::Identity(), 1e-15));
}

// With X_s = R X_t + t a target point on the plane moves by +t/z in source
// normalized coordinates. The same matrix with -tx arises from the inverse
// translation, which is how a target<-source pose would be written.
TEST(PlaneHomography, TranslationColumnScalesWithInverseDepth) {
  const auto k = CameraIntrinsics::identity();
  const Homography h1 = plane_homography(k, k, RigidTransform::translation(0.5, 0, 0), 1.0);
  Mat3 expected = Mat3::Identity();
  expected(0, 2) = 0.5;
  EXPECT_TRUE(h1.H.isApprox(expected, 1e-15));
  const Homography h2 = plane_homography(k, k, RigidTransform::translation(0.5, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(h2.H(0, 2), 0.25);
  const Homography h3 = plane_homography(k, k, RigidTransform::translation(-0.5, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(h3.H(0, 2), -0.5);
}

TEST(PlaneHomography, InfiniteDepthLimit) {
  RigidTransform pose = RigidTransform::translation(0.3, -0.2, 0.1);
  pose.R = Eigen::AngleAxisd(0.05, Vec3(0.2, 1, 0.1).normalized()).toRotationMatrix();
  const CameraIntrinsics kt{90, 95, 31, 29};
  const Mat3 limit = kK100.matrix() * pose.R * kt.inverse();
  const Mat3 h = plane_homography(kK100, kt, pose, 1e9).H;
  EXPECT_LE((h - limit).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PlaneHomography, RejectsBadDepth) {
  EXPECT_THROW(plane_homography(kK100, kK100, RigidTransform::identity(), 0.0), NonPositiveDepth);
  EXPECT_THROW(plane_homography(kK100, kK100, RigidTransform::identity(), -1.0), NonPositiveDepth);
  // The plane passes through the source centre: det(I + t n^T / z) = 1 + t_z / z = 0.
  EXPECT_THROW(plane_homography(kK100, kK100, RigidTransform::translation(0, 0, -2), 2.0), DegenerateHomography);
}

TEST(PlaneHomography, DepthDerivativeMatchesDifferences) {
  const RigidTransform pose = RigidTransform::translation(0.2, 0.1, -0.05);
  const double z = 2.5, h = 1e-6;
  const Mat3 fd = (plane_homography(kK100, kK100, pose, z + h).H - plane_homography(kK100, kK100, pose, z - h).H) / (2 * h);
  EXPECT_LE((fd - plane_homography_depth_derivative(kK100, kK100, pose, z)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(WarpGrid, IdentityGivesPixelCoordinates) {
  const SampleGrid g = warp_grid(Homography{}, 3, 5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(g.xs[g.index(r, c)], double(c));
      EXPECT_EQ(g.ys[g.index(r, c)], double(r));
      EXPECT_EQ(g.valid[g.index(r, c)], 1);
    }
}

TEST(WarpGrid, ShiftedColumnIsInvalid) {
  Homography h;
  h.H(0, 2) = -0.5;
  const SampleGrid g = warp_grid(h, 4, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(g.xs[g.index(r, 0)], -0.5);
    EXPECT_EQ(g.valid[g.index(r, 0)], 0);
    for (std::size_t c = 1; c < 4; ++c) EXPECT_EQ(g.valid[g.index(r, c)], 1);
  }
}

TEST(WarpGrid, CompositionMatchesNestedApplication) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Homography h1 = random_projective(rng), h2 = random_projective(rng);
    Homography h12;
    h12.H = h1.H * h2.H;
    const SampleGrid g = warp_grid(h12, 16, 16), inner = warp_grid(h2, 16, 16);
    for (std::size_t r = 2; r < 14; ++r)
      for (std::size_t c = 2; c < 14; ++c) {
        const std::size_t i = g.index(r, c);
        const Vec2 p = h1.apply(inner.xs[i], inner.ys[i]);
        EXPECT_NEAR(g.xs[i], p.x(), 1e-9);
        EXPECT_NEAR(g.ys[i], p.y(), 1e-9);
      }
  }
}

TEST(BilinearSample, IntegerCoordinatesGather) {
  std::mt19937_64 rng(3);
  const Tensor v = pt::random_tensor({4, 5, 2}, rng, 0, 1);
  SampleGrid g(2, 2);
  const double xs[] = {0, 4, 2, 3}, ys[] = {0, 3, 1, 2};
  for (int i = 0; i < 4; ++i) g.xs[i] = xs[i], g.ys[i] = ys[i], g.valid[i] = 1;
  const Tensor out = bilinear_sample(v, g, Boundary::Clamp);
  for (int i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_EQ(out[std::size_t(i) * 2 + c], v.at(std::size_t(ys[i]), std::size_t(xs[i]), c));
}

TEST(BilinearSample, LinearInterpolationAndCoordinateGradient) {
  Tensor v({1, 2, 1}, {0.0, 1.0});
  SampleGrid g(1, 1);
  g.xs[0] = 0.25;
  g.ys[0] = 0.0;
  g.valid[0] = 1;
  EXPECT_DOUBLE_EQ(bilinear_sample(v, g, Boundary::Clamp)[0], 0.25);

  Tensor ones({1, 1, 1}, {1.0});
  const BilinearGradients bg = bilinear_sample_backward(v, g, Boundary::Clamp, ones);
  EXPECT_DOUBLE_EQ(bg.dx[0], 1.0);
  const double h = 1e-6;
  SampleGrid gp = g, gm = g;
  gp.xs[0] += h;
  gm.xs[0] -= h;
  const double fd = (bilinear_sample(v, gp, Boundary::Clamp)[0] - bilinear_sample(v, gm, Boundary::Clamp)[0]) / (2 * h);
  EXPECT_NEAR(bg.dx[0], fd, 1e-6);
}

TEST(BilinearSample, ZeroBoundaryIsZeroOutside) {
  Tensor v({1, 2, 1}, {1.0, 1.0});
  SampleGrid g(1, 2);
  g.xs = {-0.5, 1.5};
  g.ys = {0.0, 0.0};
  const Tensor z = bilinear_sample(v, g, Boundary::Zero);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
  const Tensor c = bilinear_sample(v, g, Boundary::Clamp);
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[1], 1.0);
}

TEST(Warp, InversePoseRoundTrip) {
  // Smooth content on a plane at depth z in the target frame.
  const std::size_t n = 32;
  const CameraIntrinsics k{32, 32, 15.5, 15.5};
  Tensor img({n, n, 1});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) img.at(y, x, 0) = 0.5 + 0.3 * std::sin(0.2 * x) * std::cos(0.15 * y);
  RigidTransform pose = RigidTransform::translation(0.1, -0.05, 0.02);
  pose.R = Eigen::AngleAxisd(0.01, Vec3::UnitY()).toRotationMatrix();
  const double z_t = 3.0;
  const Homography h_ts = plane_homography(k, k, pose, z_t);  // target pixels -> source pixels
  // The same plane seen from the source: n_s = R n_t, depth_s = z_t + n_s . t.
  const Vec3 n_s = pose.R * Vec3::UnitZ();
  const double z_s = z_t + n_s.dot(pose.t);
  const Homography h_st = plane_homography(k, k, pose.inverse(), z_s, n_s);
  Homography round;
  round.H = h_ts.H * h_st.H;
  const Tensor back = bilinear_sample(img, warp_grid(round, n, n), Boundary::Clamp);
  for (std::size_t y = 4; y < n - 4; ++y)
    for (std::size_t x = 4; x < n - 4; ++x) EXPECT_NEAR(back.at(y, x, 0), img.at(y, x, 0), 1e-3);
}

TEST(RigidTransform, ValidateRejectsNonRotation) {
  RigidTransform p;
  p.R(0, 0) = 2.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  EXPECT_NO_THROW(RigidTransform::translation(1, 2, 3).validate());
}
