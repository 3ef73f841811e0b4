#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mef/errors.hpp"
#include "mef/observation.hpp"

using namespace mef;

namespace {

PixelGrid single_pixel() {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  return PixelGrid(1, 1, K);
}

}  // namespace

TEST(Project, Examples) {
  EXPECT_EQ(project(lie::Vec3(2, 4, 2)), Vec2(1, 2));
  EXPECT_EQ(project(lie::Vec3(0, 0, 1)), Vec2(0, 0));
  EXPECT_EQ(project(lie::Vec3(1, 0, 2)), Vec2(0.5, 0));
  EXPECT_THROW(project(lie::Vec3(1, 1, 0)), DomainError);
}

TEST(PixelGrid, RowMajorAndConversions) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(4, 3);
  EXPECT_EQ(g.size(), 12);
  EXPECT_EQ(g.index(1, 2), 9);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    EXPECT_LT((g.to_normalized(g.to_pixels(g.point(i))) - g.point(i)).norm(), 1e-15);
  }
  EXPECT_LT((g.to_pixels(g.point(g.index(3, 2))) - Vec2(3, 2)).norm(), 1e-14);
}

TEST(InducedFlow, StaticCameraGivesZeroFlow) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(5, 5);
  const FlowField u = induced_flow(lie::SE3::identity(), Eigen::VectorXd::Constant(25, 0.3), g);
  EXPECT_TRUE(u.vectors.isZero(1e-15));
}

TEST(InducedFlow, Examples) {
  const PixelGrid g = single_pixel();
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(1, 0.5);
  const FlowField a = induced_flow(lie::SE3(lie::SO3(), lie::Vec3(1, 0, 0)), d, g);
  EXPECT_LT((a.vectors.col(0) - Vec2(0.5, 0)).norm(), 1e-15);
  const FlowField b = induced_flow(lie::SE3(lie::SO3(), lie::Vec3(0, 0, -1)), d, g);
  EXPECT_LT(b.vectors.col(0).norm(), 1e-15);
  const FlowField c = induced_flow(lie::SE3(lie::SO3(), lie::Vec3(0, 0, -2)), d, g);
  EXPECT_FALSE(c.is_valid(0));
}

TEST(Charbonnier, Examples) {
  for (double nu : {1e-3, 0.1, 2.0}) {
    for (double beta : {0.3, 0.5, 1.0}) EXPECT_EQ(charbonnier(0.0, nu, beta), 0.0);
  }
  for (double x : {0.0, 0.5, 3.0, 100.0}) {
    EXPECT_NEAR(charbonnier(x, 1e-3, 1.0), x, 1e-12 * (1.0 + x));
    EXPECT_DOUBLE_EQ(charbonnier_deriv(x, 1e-3, 1.0), 1.0);
  }
  EXPECT_NEAR(charbonnier(1.0, 1e-3, 0.5), std::sqrt(1.001) - std::sqrt(0.001), 1e-15);
  EXPECT_NEAR(charbonnier(1.0, 1e-3, 0.5), 0.968877, 1e-6);
}

TEST(Charbonnier, DerivativeMatchesFiniteDifferences) {
  const Penalty p = Penalty::charbonnier(1e-3, 0.5);
  for (double x = 0.01; x <= 1000.0; x *= 1.7) {
    const double h = 1e-5 * x;
    const double fd = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
    EXPECT_NEAR(p.deriv(x), fd, 1e-8 * std::abs(fd)) << "x = " << x;
    const double fd2 = (p.deriv(x + h) - p.deriv(x - h)) / (2.0 * h);
    EXPECT_NEAR(p.deriv2(x), fd2, 1e-6 * std::abs(fd2)) << "x = " << x;
  }
  EXPECT_LE(p.deriv(0.0), 0.5 * std::pow(1e-3, -0.5) * (1 + 1e-15));
}

TEST(Charbonnier, StrictlyIncreasing) {
  const Penalty p = Penalty::charbonnier(0.01, 0.4);
  double prev = -1.0;
  for (double x = 0.0; x < 50.0; x += 0.25) {
    EXPECT_GT(p.value(x), prev);
    prev = p.value(x);
  }
}

TEST(MeasurementEnergy, Examples) {
  const PixelGrid g = single_pixel();
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(1, 0.5);
  FlowField y = FlowField::zeros(1);
  y.vectors.col(0) = Vec2(1, 0);
  const WeightField W = WeightField::uniform(1, Mat2::Identity());
  EXPECT_NEAR(measurement_energy(lie::SE3::identity(), d, y, W, Penalty::charbonnier(1e-3, 1.0), g), 0.5, 1e-12);
  EXPECT_NEAR(measurement_energy(lie::SE3::identity(), d, y, W, Penalty::charbonnier(1e-3, 0.5), g),
              std::sqrt(0.501) - std::sqrt(0.001), 1e-15);
  EXPECT_NEAR(measurement_energy(lie::SE3::identity(), d, y, W, Penalty::charbonnier(1e-3, 0.5), g), 0.676191,
              1e-6);
}

TEST(MeasurementEnergy, ZeroAtTruthAndQuadraticAtBetaOne) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(8, 8);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.15, 0.35);
  Eigen::VectorXd d(g.size());
  for (auto& v : d) v = u(rng);
  lie::Vec6 xi;
  xi << 0.01, -0.02, 0.005, 0.1, 0.05, -0.1;
  const lie::SE3 E = lie::SE3::exp(xi);
  FlowField y = induced_flow(E, d, g);
  const WeightField W = WeightField::uniform(g.size(), Mat2::Identity() * 64.0);
  EXPECT_LT(measurement_energy(E, d, y, W, Penalty::charbonnier(1e-3, 0.5), g), 1e-12);

  std::normal_distribution<double> n(0.0, 0.05);
  for (Eigen::Index i = 0; i < g.size(); ++i) y.vectors.col(i) += Vec2(n(rng), n(rng));
  const FlowField h = induced_flow(E, d, g);
  double quad = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const Vec2 e = y.vectors.col(i) - h.vectors.col(i);
    quad += 0.5 * e.dot(W.weight[static_cast<std::size_t>(i)] * e);
  }
  EXPECT_NEAR(measurement_energy(E, d, y, W, Penalty::quadratic(), g), quad, 1e-12 * quad);
  EXPECT_NEAR(measurement_energy(E, d, y, W, Penalty::charbonnier(1e-3, 1.0), g), quad, 1e-12 * quad);
}

TEST(MeasurementEnergy, InvalidPixelsContributeNothing) {
  const PixelGrid g = single_pixel();
  FlowField y = FlowField::zeros(1);
  y.vectors.col(0) = Vec2(3, 3);
  y.valid[0] = 0;
  const WeightField W = WeightField::uniform(1, Mat2::Identity());
  EXPECT_EQ(measurement_energy(lie::SE3::identity(), Eigen::VectorXd::Constant(1, 0.5), y, W,
                               Penalty::quadratic(), g),
            0.0);
}

TEST(PairwiseSum, OrderInsensitiveToRounding) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(1000);
  for (auto& x : v) x = u(rng);
  const double a = pairwise_sum(v);
  std::shuffle(v.begin(), v.end(), rng);
  EXPECT_NEAR(pairwise_sum(v), a, 1e-12 * a);
  EXPECT_EQ(pairwise_sum(v), pairwise_sum(v));
}

TEST(WeightField, RejectsNonSpdCovariance) {
  std::vector<Mat2> Q{Mat2::Identity(), Mat2::Zero()};
  EXPECT_THROW(WeightField::from_covariance(Q), DomainError);
  Q[1] = Mat2::Identity() * 4.0;
  const WeightField W = WeightField::from_covariance(Q);
  EXPECT_LT((W.weight[1] - Mat2::Identity() * 0.25).norm(), 1e-15);
}

TEST(EpipoleWeight, Examples) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(9, 9);
  // Pure rotation: no epipole.
  const auto w0 = epipole_weight(g, lie::SE3(lie::SO3::exp(lie::Vec3(0, 0.1, 0)), lie::Vec3::Zero()), 0.2);
  for (double w : w0) EXPECT_EQ(w, 1.0);
  // Forward motion: epipole at the principal point (pixel (4, 4)).
  const lie::SE3 E(lie::SO3(), lie::Vec3(0, 0, -1));
  const double rho = 4.0 / 9.0;  // four pixels
  const auto w = epipole_weight(g, E, rho);
  EXPECT_EQ(w[static_cast<std::size_t>(g.index(4, 4))], 0.0);
  EXPECT_NEAR(w[static_cast<std::size_t>(g.index(6, 4))], 0.25, 1e-12);
  EXPECT_EQ(w[static_cast<std::size_t>(g.index(0, 0))], 1.0);
}
