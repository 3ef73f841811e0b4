#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mef/errors.hpp"
#include "mef/harness.hpp"
#include "mef/propagation.hpp"

using namespace mef;

namespace {

lie::SE3 translation(double x, double y, double z) { return lie::SE3(lie::SO3(), lie::Vec3(x, y, z)); }

int count_valid(const Mask& m) { return static_cast<int>(std::count(m.begin(), m.end(), 1)); }

}  // namespace

TEST(Delaunay, SquareAndEmptyCircumcircles) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<Eigen::Vector2d> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(u(rng), u(rng));
  const Delaunay tri(pts);
  // Euler: 2n - 2 - hull triangles; at least n triangles for 200 random points.
  EXPECT_GT(tri.triangles().size(), 200u);
  for (const auto& t : tri.triangles()) {
    const auto& a = pts[t.v[0]];
    const auto& b = pts[t.v[1]];
    const auto& c = pts[t.v[2]];
    ASSERT_GT(orient2d(a, b, c), 0.0);
    for (std::size_t k = 0; k < pts.size(); k += 7) ASSERT_LE(incircle(a, b, c, pts[k]), 1e-9);
  }
  const auto loc = tri.locate(Eigen::Vector2d(5.0, 5.0));
  ASSERT_TRUE(loc.has_value());
  EXPECT_NEAR(loc->bary.sum(), 1.0, 1e-12);
  EXPECT_TRUE((loc->bary.array() >= -1e-12).all());
  EXPECT_FALSE(tri.locate(Eigen::Vector2d(-5.0, 50.0)).has_value());
}

TEST(CloughTocher, ReproducesQuadratics) {
  std::vector<Eigen::Vector2d> pts;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) pts.emplace_back(x + 0.1 * ((x * 7 + y * 3) % 5), y + 0.1 * ((x + y * 5) % 3));
  const auto f = [](const Eigen::Vector2d& p) { return 1.0 + 0.3 * p.x() - 0.2 * p.y() + 0.05 * p.x() * p.y() + 0.02 * p.x() * p.x(); };
  Eigen::MatrixXd s(1, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) s(0, static_cast<Eigen::Index>(i)) = f(pts[i]);
  const CloughTocherInterpolator ct(pts, 3.0);
  Eigen::Matrix2Xd q(2, 3);
  q << 2.5, 3.3, 5.1, 2.5, 4.7, 3.9;
  const auto r = ct.interpolate(s, q);
  for (int j = 0; j < 3; ++j) {
    ASSERT_TRUE(r.valid[static_cast<std::size_t>(j)]);
    EXPECT_NEAR(r.values(0, j), f(q.col(j)), 1e-9);
  }
}

TEST(Warp, IdentityAndTranslation) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(8, 8);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(g.size(), 0.2);
  const WarpedGrid id = warp_grid(lie::SE3::identity(), d, g);
  EXPECT_EQ(id.positions, g.points());
  EXPECT_EQ(count_valid(id.valid), 64);
  const WarpedGrid t = warp_grid(translation(0.1, 0, 0), d, g);
  for (Eigen::Index i = 0; i < g.size(); ++i) EXPECT_NEAR(t.positions(0, i) - g.point(i).x(), 0.02, 1e-15);
  const WarpedGrid far = warp_grid(translation(100, 0, 0), d, g);
  EXPECT_EQ(count_valid(far.valid), 0);
}

TEST(Propagate, IdentityIsExact) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(16, 16);
  Eigen::VectorXd d(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) d(i) = 0.2 + 0.05 * std::sin(0.7 * static_cast<double>(i));
  const auto r = propagate(lie::SE3::identity(), d, g);
  EXPECT_EQ(count_valid(r.valid), 256);
  EXPECT_EQ(r.disparity, d);
}

TEST(Propagate, FrontoParallelPlaneMovingForward) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(16, 16);
  const auto r = propagate(translation(0, 0, -1), Eigen::VectorXd::Constant(g.size(), 0.2), g);
  EXPECT_GT(count_valid(r.valid), 100);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (r.valid[static_cast<std::size_t>(i)]) {
      EXPECT_NEAR(r.disparity(i), 0.25, 1e-6);
    } else {
      EXPECT_EQ(r.disparity(i), 0.2);
    }
  }
}

TEST(Propagate, CarriedFields) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(16, 16);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(g.size(), 0.2);
  Eigen::MatrixXd carried(2, g.size());
  const auto quad = [](const Vec2& z) { return 1.0 + z.x() - 0.5 * z.y() + 2.0 * z.x() * z.x() + z.x() * z.y(); };
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    carried(0, i) = 3.0;
    carried(1, i) = quad(g.point(i));
  }
  const auto r = propagate(translation(0.1, 0, 0), d, g, carried);
  int checked = 0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!r.valid[static_cast<std::size_t>(i)]) continue;
    EXPECT_NEAR(r.carried(0, i), 3.0, 1e-12);
    const Vec2 source = g.point(i) - Vec2(0.02, 0.0);
    EXPECT_NEAR(r.carried(1, i), quad(source), 1e-3 * std::abs(quad(source)));
    ++checked;
  }
  EXPECT_GT(checked, 200);
}

TEST(Propagate, RoundTrip) {
  SyntheticScene sc;
  sc.grid = PixelGrid::with_default_intrinsics(32, 32);
  sc.surface.depth = 5.0;
  sc.surface.amplitude = 1.0;
  sc.surface.wavelength = 3.0;
  lie::Vec6 tw;
  tw << 0.002, -0.003, 0.001, 0.05, 0.01, -0.02;
  sc.twists = {tw};
  const Sequence seq = generate_sequence(sc, 2);
  const auto fwd = propagate(seq.motion[0], seq.disparity[0], sc.grid);
  const auto back = propagate(seq.motion[0].inverse(), fwd.disparity, sc.grid);
  std::vector<double> e;
  for (Eigen::Index i = 0; i < sc.grid.size(); ++i) {
    if (!back.valid[static_cast<std::size_t>(i)]) continue;
    e.push_back(std::abs(back.disparity(i) - seq.disparity[0](i)) / seq.disparity[0](i));
  }
  ASSERT_GT(e.size(), 700u);
  EXPECT_LT(median(e), 5e-3);
}

TEST(Propagate, TooFewSamplesThrows) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(8, 8);
  EXPECT_THROW(propagate(translation(100, 0, 0), Eigen::VectorXd::Constant(64, 0.2), g), NumericalError);
}
