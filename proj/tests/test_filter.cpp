#include <gtest/gtest.h>

#include <cmath>

#include "mef/checks.hpp"
#include "mef/errors.hpp"
#include "mef/filter.hpp"

using namespace mef;

namespace {

State sample_state(Eigen::Index n) {
  State x = State::initial(n);
  lie::Vec6 xi;
  xi << 0.01, -0.02, 0.005, 0.1, 0.05, -0.1;
  x.E = lie::SE3::exp(xi);
  x.v << 0.001, 0.002, -0.003, 0.04, -0.05, 0.06;
  for (Eigen::Index i = 0; i < n; ++i) x.d(i) = 0.2 + 0.01 * static_cast<double>(i);
  return x;
}

bool is_symmetric(const GainMatrix& P, double tol) {
  const Eigen::MatrixXd D = P.to_dense();
  return (D - D.transpose()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

TEST(BlockMatrix, DenseRoundTripAndApply) {
  GainMatrix P = initial_gain(FilterConfig{}, 3);
  P.cd.setRandom();
  const Eigen::MatrixXd D = P.to_dense();
  EXPECT_EQ(D.rows(), 15);
  EXPECT_EQ(GainMatrix::from_dense(D).to_dense(), D);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(15, -1.0, 1.0);
  EXPECT_LT((P.apply(x) - D * x).norm(), 1e-13);
  EXPECT_DOUBLE_EQ(P.trace(), D.trace());
}

TEST(Filter, PropagationFieldIsTwistOnPose) {
  const State x = sample_state(4);
  const Eigen::VectorXd f = propagation_field(x);
  ASSERT_EQ(f.size(), 16);
  EXPECT_EQ(Vec6(f.segment<6>(kPoseOffset)), x.v);
  EXPECT_TRUE(f.tail(10).isZero(0.0));
}

TEST(Filter, GradientVanishesAtZeroResidual) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(6, 6);
  State x = sample_state(g.size());
  const FlowField y = induced_flow(x.E, x.d, g);
  const WeightField W = WeightField::uniform(g.size(), Mat2::Identity() * 36.0);
  const Eigen::VectorXd G = hamiltonian_gradient(x, y, W, Penalty::charbonnier(1e-3, 0.5), g);
  EXPECT_LT(G.norm(), 1e-10);
}

TEST(Filter, TwistBlocksOfGradientAndHessianVanish) {
  const auto p = checks::random_instance(3, 6, 6);
  const Eigen::VectorXd G = hamiltonian_gradient(p.x, p.y, p.W, p.phi, p.grid);
  EXPECT_TRUE(G.segment<6>(kTwistOffset).isZero(0.0));
  const GainMatrix H = riccati_H(p.x, p.y, p.W, p.phi, p.grid);
  EXPECT_TRUE(H.cc.middleRows<6>(kTwistOffset).isZero(0.0));
  EXPECT_TRUE(H.cc.middleCols<6>(kTwistOffset).isZero(0.0));
  EXPECT_TRUE(H.cd.middleRows<6>(kTwistOffset).isZero(0.0));
}

TEST(Filter, GaussNewtonHessianIsPsdAtZeroResidual) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(5, 5);
  const State x = sample_state(g.size());
  const FlowField y = induced_flow(x.E, x.d, g);
  const WeightField W = WeightField::uniform(g.size(), Mat2::Identity() * 25.0);
  const auto md = measurement_derivatives(x, y, W, Penalty::charbonnier(1e-3, 0.5), g, true,
                                          HessianMode::GaussNewton);
  const Eigen::MatrixXd D = md.hessian.to_dense();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-9 * es.eigenvalues().maxCoeff());
  // At zero residual the exact Hessian equals Gauss-Newton.
  const auto ex = measurement_derivatives(x, y, W, Penalty::charbonnier(1e-3, 0.5), g, true,
                                          HessianMode::Exact);
  EXPECT_LT((ex.hessian.to_dense() - D).norm(), 1e-9 * D.norm());
}

TEST(Filter, GradientAndHessianMatchFiniteDifferences) {
  EXPECT_TRUE(checks::gradient_check(11, 5, 6).pass());
  EXPECT_TRUE(checks::hessian_check(11, 3, 5).pass());
}

TEST(Filter, GradientCheckCatchesSabotage) {
  const checks::GradientFn wrong = [](const State& x, const FlowField& y, const WeightField& W,
                                      const Penalty& phi, const PixelGrid& g) {
    Eigen::VectorXd G = hamiltonian_gradient(x, y, W, phi, g);
    G(1) *= 1.01;
    return G;
  };
  EXPECT_FALSE(checks::gradient_check(11, 3, 6, wrong).pass());
}

TEST(Riccati, ClosedForms) {
  for (const auto& r : checks::riccati_checks()) EXPECT_TRUE(r.pass()) << r.name << " " << r.error;
}

TEST(Riccati, ConstantRateWithoutCurvature) {
  const Eigen::Index n = 3;
  GainMatrix P = initial_gain(FilterConfig{}, n);
  const GainMatrix P0 = P;
  const GainMatrix H = GainMatrix::zeros(n);
  const Mat12 R = Mat12::Identity() * 0.5;
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(n, 0.25);
  for (int i = 0; i < 10; ++i) P = riccati_step(P, Mat12::Zero(), H, R, r, 0.1);
  EXPECT_LT((P.cc - (P0.cc + R)).norm(), 1e-12);
  EXPECT_LT((P.dd - (P0.dd + r)).norm(), 1e-12);
}

TEST(Riccati, StaysSymmetricOver100Steps) {
  const auto p = checks::random_instance(5, 5, 5);
  GainMatrix P = initial_gain(FilterConfig{}, p.grid.size());
  const GainMatrix H = riccati_H(p.x, p.y, p.W, p.phi, p.grid);
  const Mat12 C = riccati_C(p.x, propagation_field(p.x));
  const FilterConfig cfg;
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(p.grid.size(), cfg.r_dd);
  for (int i = 0; i < 100; ++i) {
    const double h = 0.5 / gain_hessian_spectral_radius(P, H);
    P = riccati_step(P, C, H, cfg.R_cc, r, h);
    ASSERT_TRUE(P.to_dense().allFinite());
    ASSERT_TRUE(is_symmetric(P, 1e-12 * P.to_dense().norm())) << "step " << i;
    ASSERT_TRUE((P.dd.array() >= 0.0).all());
  }
}

TEST(Riccati, CameraOnlyC) {
  const State x = sample_state(2);
  const Mat12 C = riccati_C(x, propagation_field(x));
  EXPECT_TRUE(C.allFinite());
  GainMatrix P = initial_gain(FilterConfig{}, 2);
  P.cd.setConstant(0.1);
  const GainMatrix CP = riccati_C_apply(C, P);
  EXPECT_LT((CP.cc - C * P.cc).norm(), 1e-14);
  EXPECT_LT((CP.cd - C * P.cd).norm(), 1e-14);
  EXPECT_TRUE(CP.dd.isZero(0.0));
}

TEST(Riccati, SparsifySymmetrizes) {
  GainMatrix P = initial_gain(FilterConfig{}, 2);
  P.cc(0, 1) = 1.0;
  const GainMatrix S = sparsify(P);
  EXPECT_DOUBLE_EQ(S.cc(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(S.cc(1, 0), 0.5);
  EXPECT_EQ(S.dd, P.dd);
}

TEST(FilterConfig, Validation) {
  FilterConfig c;
  EXPECT_NO_THROW(c.validate());
  c.substeps = 0;
  EXPECT_THROW(c.validate(), DomainError);
  c = FilterConfig{};
  c.penalty.nu = 0.0;
  EXPECT_THROW(c.validate(), DomainError);
  c = FilterConfig{};
  c.R_cc(0, 0) = -1.0;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Filter, ZeroFlowIsFixedPointForStaticState) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(8, 8);
  FilterConfig cfg;
  const State x0 = State::initial(g.size());
  MinimumEnergyFilter f(g, cfg, x0);
  Frame frame{FlowField::zeros(g.size()), WeightField::uniform(g.size(), Mat2::Identity() * 64.0), {}};
  for (int k = 0; k < 3; ++k) f.process(frame);
  EXPECT_LT(f.state().E.log().norm(), 1e-12);
  EXPECT_LT(f.state().v.norm(), 1e-12);
  EXPECT_LT((f.state().d - x0.d).norm(), 1e-12);
  EXPECT_EQ(f.frames_processed(), 3);
}

TEST(Filter, DenseEquivalence) {
  for (auto mode : {HessianMode::GaussNewton, HessianMode::Exact}) {
    const auto r = checks::dense_check(4, mode, 3, 2);
    EXPECT_TRUE(r.pass()) << r.name << " " << r.error;
  }
}

TEST(Filter, BetaOneMatchesQuadratic) {
  const auto r = checks::quadratic_limit_check(4, 8);
  EXPECT_TRUE(r.pass()) << r.error;
}

TEST(Filter, DeterministicAcrossRuns) {
  const auto p = checks::random_instance(8, 8, 8);
  const FilterConfig cfg;
  Frame frame{p.y, p.W, {}};
  MinimumEnergyFilter a(p.grid, cfg), b(p.grid, cfg);
  a.process(frame);
  b.process(frame);
  EXPECT_EQ(a.state().d, b.state().d);
  EXPECT_EQ(a.state().E.log(), b.state().E.log());
  EXPECT_EQ(a.gain().to_dense(), b.gain().to_dense());
}
