#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "mef/errors.hpp"
#include "mef/harness.hpp"

using namespace mef;

namespace {

SyntheticScene plane_scene(int size, const lie::Vec6& twist) {
  SyntheticScene sc;
  sc.surface.kind = Surface::Kind::Plane;
  sc.surface.depth = 5.0;
  sc.twists = {twist};
  sc.grid = PixelGrid::with_default_intrinsics(size, size);
  return sc;
}

lie::Vec6 forward_twist() {
  lie::Vec6 t = lie::Vec6::Zero();
  t(5) = -1.0;
  return t;
}

}  // namespace

TEST(Scene, PlaneDisparityFollowsForwardMotion) {
  const Sequence seq = generate_sequence(plane_scene(8, forward_twist()), 3);
  ASSERT_EQ(seq.disparity.size(), 4u);
  ASSERT_EQ(seq.forward.size(), 3u);
  for (int k = 0; k < 4; ++k) {
    const auto& d = seq.disparity[static_cast<std::size_t>(k)];
    EXPECT_LT((d.array() - 1.0 / (5.0 - k)).abs().maxCoeff(), 1e-12) << "frame " << k;
  }
}

TEST(Scene, ZeroTrajectoryGivesZeroFlow) {
  SyntheticScene sc = plane_scene(8, lie::Vec6::Zero());
  sc.surface.kind = Surface::Kind::SinusoidalRelief;
  const Sequence seq = generate_sequence(sc, 2);
  for (const auto& f : seq.forward) EXPECT_LT(f.vectors.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(seq.disparity[0], seq.disparity[2]);
  EXPECT_LT(seq.pose[2].log().norm(), 1e-15);
}

TEST(Scene, RayCastHitsSurface) {
  SyntheticScene sc = plane_scene(12, lie::Vec6::Zero());
  sc.surface.kind = Surface::Kind::SinusoidalRelief;
  sc.surface.amplitude = 1.0;
  sc.surface.wavelength = 3.0;
  lie::Vec6 xi;
  xi << 0.05, -0.03, 0.02, 0.3, -0.2, 0.5;
  const lie::SE3 pose = lie::SE3::exp(xi);
  const Eigen::VectorXd d = ray_cast_disparity(sc.surface, pose, sc.grid);
  for (Eigen::Index i = 0; i < sc.grid.size(); ++i) {
    const Vec2 z = sc.grid.point(i);
    const lie::Vec3 Xw = pose * (lie::Vec3(z.x(), z.y(), 1.0) / d(i));
    EXPECT_NEAR(Xw.z(), sc.surface.height(Xw.x(), Xw.y()), 1e-9);
  }
  sc.surface.depth = 0.5;
  EXPECT_THROW(ray_cast_disparity(sc.surface, lie::SE3::identity(), sc.grid), DataError);
}

TEST(Scene, FlowsAreConsistentWithMotion) {
  SyntheticScene sc = plane_scene(16, lie::Vec6::Zero());
  sc.surface.kind = Surface::Kind::SinusoidalRelief;
  lie::Vec6 tw;
  tw << 0.002, -0.003, 0.001, 0.05, 0.01, -0.02;
  sc.twists = {tw};
  const Sequence seq = generate_sequence(sc, 2);
  const FlowField u = induced_flow(seq.motion[1], seq.disparity[1], sc.grid);
  EXPECT_EQ(u.vectors, seq.forward[1].vectors);
  const Mask m = fb_consistency_mask(seq.forward[0], seq.backward[0], sc.grid, 1.0 / 16.0);
  EXPECT_GT(std::count(m.begin(), m.end(), 1), 200);
}

TEST(Noise, StandardDeviationAndDeterminism) {
  const Eigen::Index n = 100000;
  const FlowField f = FlowField::zeros(n);
  const FlowField a = add_noise(f, 0.01, 7);
  const double sd = std::sqrt(a.vectors.squaredNorm() / (2.0 * static_cast<double>(n)));
  EXPECT_NEAR(sd, 0.01, 0.05 * 0.01);
  EXPECT_EQ(add_noise(f, 0.01, 7).vectors, a.vectors);
  EXPECT_NE(add_noise(f, 0.01, 8).vectors, a.vectors);
  EXPECT_EQ(add_noise(f, 0.0, 7).vectors, f.vectors);
}

TEST(Outliers, ExactCountAndMagnitude) {
  const FlowField f = FlowField::zeros(1000);
  std::vector<Eigen::Index> chosen;
  const FlowField o = inject_outliers(f, 0.1, 2.5, 3, &chosen);
  ASSERT_EQ(chosen.size(), 100u);
  EXPECT_EQ(std::set<Eigen::Index>(chosen.begin(), chosen.end()).size(), 100u);
  int changed = 0;
  for (Eigen::Index i = 0; i < 1000; ++i) {
    if (o.vectors.col(i).isZero(0.0)) continue;
    ++changed;
    EXPECT_NEAR(o.vectors.col(i).norm(), 2.5, 1e-12);
  }
  EXPECT_EQ(changed, 100);
  EXPECT_THROW(inject_outliers(f, 1.5, 1.0, 3), DomainError);
}

TEST(Outliers, MedianFlowMagnitude) {
  FlowField f = FlowField::zeros(5);
  for (Eigen::Index i = 0; i < 5; ++i) f.vectors.col(i) = Vec2(0.0, static_cast<double>(i + 1));
  f.valid[4] = 0;
  EXPECT_DOUBLE_EQ(median_flow_magnitude(f), 2.5);
}

TEST(ConsistencyMask, DetectsCorruptedPixels) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(10, 10);
  FlowField fwd = FlowField::zeros(g.size());
  FlowField bwd = FlowField::zeros(g.size());
  fwd.vectors.col(g.index(5, 5)) = Vec2(0.0, 0.3);
  const Mask m = fb_consistency_mask(fwd, bwd, g, 0.1);
  EXPECT_EQ(m[static_cast<std::size_t>(g.index(5, 5))], 0);
  EXPECT_EQ(std::count(m.begin(), m.end(), 1), 99);
}

TEST(Evaluation, ScaleCorrection) {
  const Eigen::VectorXd gt = Eigen::VectorXd::LinSpaced(10, 0.1, 0.5);
  const Mask all(10, 1);
  const auto s = scale_correct(2.0 * gt, gt, all);
  EXPECT_DOUBLE_EQ(s.scale, 0.5);
  EXPECT_LT((s.corrected - gt).norm(), 1e-15);
  // Equivariance: scaling the estimate does not change the corrected map.
  const Eigen::VectorXd est = gt + Eigen::VectorXd::LinSpaced(10, -0.01, 0.02);
  const auto a = scale_correct(est, gt, all);
  const auto b = scale_correct(3.0 * est, gt, all);
  EXPECT_LT((a.corrected - b.corrected).norm(), 1e-14);
  EXPECT_THROW(scale_correct(est, gt, Mask(10, 0)), DataError);
}

TEST(Evaluation, OutlierPercentages) {
  Eigen::VectorXd gt = Eigen::VectorXd::Constant(10, 1.0);
  Eigen::VectorXd est = gt;
  est(0) += 4.0;  // > 3 px, < 5 px
  est(1) += 6.0;  // > 5 px
  Mask noc(10, 1);
  noc[1] = 0;
  const auto r = disparity_errors(est, gt, Mask(10, 1), noc, Mask(10, 1), 1.0);
  EXPECT_DOUBLE_EQ(r.p3px_occ, 20.0);
  EXPECT_DOUBLE_EQ(r.p5px_occ, 10.0);
  EXPECT_NEAR(r.p3px_noc, 100.0 / 9.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.p5px_noc, 0.0);
  EXPECT_DOUBLE_EQ(r.median_rel_depth_err, 0.0);
}

TEST(Evaluation, EpipoleExclusion) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(9, 9);
  const Mask m = epipole_exclusion_mask(g, Vec2(0.0, 0.0), 1.5);
  EXPECT_EQ(std::count(m.begin(), m.end(), 0), 9);
  const Mask none = epipole_exclusion_mask(g, std::nullopt, 1.5);
  EXPECT_EQ(std::count(none.begin(), none.end(), 0), 0);
  EXPECT_NEAR(default_exclusion_px(1242), 50.0, 1e-12);
}

TEST(Evaluation, MotionErrors) {
  const lie::SE3 a(lie::SO3::exp(lie::Vec3(0, 0, 0.01)), lie::Vec3(1, 0, 0));
  const lie::SE3 b(lie::SO3(), lie::Vec3(0, 2, 0));
  EXPECT_NEAR(rotation_error_deg(a, b), 0.01 * 180.0 / std::numbers::pi, 1e-9);
  EXPECT_NEAR(translation_error_deg(a, b), 90.0, 1e-9);
  EXPECT_NEAR(rotation_error_deg(a, a), 0.0, 1e-7);
}

TEST(Evaluation, ExactEstimateHasZeroError) {
  SyntheticScene sc = plane_scene(16, lie::Vec6::Zero());
  sc.surface.kind = Surface::Kind::SinusoidalRelief;
  lie::Vec6 tw;
  tw << 0.002, -0.003, 0.001, 0.05, 0.01, -0.02;
  sc.twists = {tw};
  const Sequence seq = generate_sequence(sc, 1);
  const Mask all(static_cast<std::size_t>(sc.grid.size()), 1);
  const auto r = evaluate_frame(2.0 * seq.disparity[0], seq.disparity[0], seq.motion[0], seq.motion[0],
                                sc.grid, all, all, 1.0, 16.0);
  EXPECT_DOUBLE_EQ(r.scale, 0.5);
  EXPECT_LT(r.median_rel_depth_err, 1e-12);
  EXPECT_EQ(r.p3px_occ, 0.0);
  EXPECT_LT(r.rotation_err_deg, 1e-6);
}
