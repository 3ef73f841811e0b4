#include "mef/checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mef/config.hpp"
#include "mef/disparity_group.hpp"
#include "mef/errors.hpp"
#include "mef/pipeline.hpp"

namespace mef::checks {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using lie::GroupDescriptor;
using lie::GroupElement;

bool CheckResult::pass() const { return std::isfinite(error) && error <= tolerance; }

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

VectorXd uniform_vector(Rng& rng, Index n, double lo, double hi) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = uniform(rng, lo, hi);
  return v;
}

lie::Vec6 random_twist(Rng& rng, double rot, double trans) {
  lie::Vec6 xi;
  xi.head<3>() = uniform_vector(rng, 3, -rot, rot);
  xi.tail<3>() = uniform_vector(rng, 3, -trans, trans);
  return xi;
}

double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double energy(const Instance& p, const State& s) {
  return measurement_energy(s.E, s.d, p.y, p.W, p.phi, p.grid);
}

// Entry-wise distance between two elements of the same product group.
double distance(const GroupElement& a, const GroupElement& b) {
  double err = 0.0;
  for (std::size_t f = 0; f < a.factors.size(); ++f) {
    if (const auto* r = std::get_if<lie::SO3>(&a.factors[f])) {
      err = std::max(err, max_abs(r->matrix() - std::get<lie::SO3>(b.factors[f]).matrix()));
    } else if (const auto* e = std::get_if<lie::SE3>(&a.factors[f])) {
      err = std::max(err, max_abs(e->matrix() - std::get<lie::SE3>(b.factors[f]).matrix()));
    } else {
      err = std::max(err, max_abs(std::get<VectorXd>(a.factors[f]) - std::get<VectorXd>(b.factors[f])));
    }
  }
  return err;
}

// Random tangent vector with rotation angles below pi - 0.1 and disparity
// coordinates kept away from saturation.
VectorXd random_tangent(Rng& rng, const GroupDescriptor& g) {
  VectorXd xi(g.dimension());
  for (std::size_t f = 0; f < g.factors().size(); ++f) {
    const auto& fac = g.factors()[f];
    const int o = g.offset(f);
    switch (fac.kind) {
      case lie::FactorKind::SO3:
      case lie::FactorKind::SE3: {
        lie::Vec3 w = uniform_vector(rng, 3, -1.0, 1.0);
        w *= uniform(rng, 0.0, M_PI - 0.1) / std::max(w.norm(), 1e-12);
        xi.segment<3>(o) = w;
        if (fac.kind == lie::FactorKind::SE3) xi.segment<3>(o + 3) = uniform_vector(rng, 3, -2.0, 2.0);
        break;
      }
      case lie::FactorKind::Euclidean:
        xi.segment(o, fac.dim) = uniform_vector(rng, fac.dim, -2.0, 2.0);
        break;
      case lie::FactorKind::Disparity:
        xi.segment(o, fac.dim) = uniform_vector(rng, fac.dim, -0.6, 0.6);
        break;
    }
  }
  return xi;
}

std::vector<std::pair<std::string, GroupDescriptor>> test_groups() {
  return {{"so3", GroupDescriptor::so3()},
          {"se3", GroupDescriptor::se3()},
          {"r6", GroupDescriptor::euclidean(6)},
          {"disparity", GroupDescriptor::disparity(8)},
          {"filter_state", GroupDescriptor::filter_state(4)}};
}

State from_group(const GroupElement& x) {
  return State{std::get<lie::SE3>(x.factors[0]), lie::Vec6(std::get<VectorXd>(x.factors[1])),
               std::get<VectorXd>(x.factors[2])};
}

}  // namespace

// ---------------------------------------------------------------------------
// Derivative oracles

Instance random_instance(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  Instance p;
  p.grid = PixelGrid::with_default_intrinsics(width, height);
  const Index n = p.grid.size();
  const lie::SE3 E_true = lie::SE3::exp(random_twist(rng, 0.02, 0.1));
  const VectorXd d_true = uniform_vector(rng, n, 0.15, 0.35);
  p.y = induced_flow(E_true, d_true, p.grid);
  const double sigma = 0.5 / p.grid.focal();  // half a pixel
  std::normal_distribution<double> noise(0.0, sigma);
  for (Index i = 0; i < n; ++i) {
    p.y.vectors(0, i) += noise(rng);
    p.y.vectors(1, i) += noise(rng);
  }
  p.x.E = E_true * lie::SE3::exp(random_twist(rng, 0.01, 0.05));
  p.x.v = random_twist(rng, 0.01, 0.05);
  p.x.d = d_true.cwiseProduct(uniform_vector(rng, n, 0.8, 1.2));
  const double f = p.grid.focal();
  p.W = WeightField::uniform(n, Mat2::Identity() * (f * f));
  p.phi = Penalty::charbonnier(uniform(rng, 0.01, 0.1), uniform(rng, 0.3, 1.0));
  return p;
}

VectorXd fd_gradient(const Instance& p, double step) {
  const Index dim = p.x.dimension();
  VectorXd g(dim);
  for (Index a = 0; a < dim; ++a) {
    const VectorXd e = VectorXd::Unit(dim, a) * step;
    g[a] = (energy(p, p.x.retract(e)) - energy(p, p.x.retract(-e))) / (2.0 * step);
  }
  return g;
}

MatrixXd fd_hessian(const Instance& p, double step) {
  const Index dim = p.x.dimension();
  const auto G = GroupDescriptor::filter_state(static_cast<int>(p.x.num_pixels()));
  const VectorXd grad = fd_gradient(p, 1e-5);
  MatrixXd H(dim, dim);
  for (Index a = 0; a < dim; ++a) {
    const VectorXd ea = VectorXd::Unit(dim, a) * step;
    const State xp = p.x.retract(ea), xm = p.x.retract(-ea);
    for (Index b = 0; b < dim; ++b) {
      const VectorXd eb = VectorXd::Unit(dim, b) * step;
      const double mixed = (energy(p, xp.retract(eb)) - energy(p, xp.retract(-eb)) -
                            energy(p, xm.retract(eb)) + energy(p, xm.retract(-eb))) /
                           (4.0 * step * step);
      const VectorXd omega = lie::connection(G, VectorXd::Unit(dim, a), VectorXd::Unit(dim, b));
      H(a, b) = mixed - grad.dot(omega);
    }
  }
  return H;
}

CheckResult gradient_check(std::uint64_t seed, int states, int size, const GradientFn& gradient) {
  CheckResult r{"gradient vs finite differences", 0.0, 1e-5};
  for (int s = 0; s < states; ++s) {
    const Instance p = random_instance(seed + static_cast<std::uint64_t>(s), size, size);
    const VectorXd g = gradient(p.x, p.y, p.W, p.phi, p.grid);
    const VectorXd g_fd = fd_gradient(p, 1e-5);
    r.error = std::max(r.error, (g - g_fd).norm() / std::max(g_fd.norm(), 1e-300));
  }
  return r;
}

CheckResult hessian_check(std::uint64_t seed, int states, int size) {
  CheckResult r{"Riemannian Hessian vs finite differences", 0.0, 1e-4};
  for (int s = 0; s < states; ++s) {
    const Instance p = random_instance(seed + static_cast<std::uint64_t>(s), size, size);
    const MatrixXd H = riccati_H(p.x, p.y, p.W, p.phi, p.grid).to_dense();
    const MatrixXd H_fd = fd_hessian(p, 1e-4);
    r.error = std::max(r.error, (H - H_fd).norm() / std::max(H_fd.norm(), 1e-300));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Lie group suites

std::vector<CheckResult> lie_checks(std::uint64_t seed, int samples) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  for (const auto& [name, g] : test_groups()) {
    CheckResult assoc{name + " associativity", 0.0, 1e-12};
    CheckResult ident{name + " identity", 0.0, 1e-12};
    CheckResult inv{name + " inverse", 0.0, 1e-12};
    CheckResult round{name + " exp/log round trip", 0.0, 1e-10};
    const GroupElement id = lie::identity(g);
    for (int s = 0; s < samples; ++s) {
      const VectorXd xa = random_tangent(rng, g);
      const GroupElement a = lie::exp(xa, g);
      const GroupElement b = lie::exp(random_tangent(rng, g), g);
      const GroupElement c = lie::exp(random_tangent(rng, g), g);
      assoc.error = std::max(assoc.error, distance(lie::compose(lie::compose(a, b), c),
                                                   lie::compose(a, lie::compose(b, c))));
      ident.error = std::max({ident.error, distance(lie::compose(a, id), a),
                              distance(lie::compose(id, a), a)});
      inv.error = std::max({inv.error, distance(lie::compose(a, lie::inverse(a)), id),
                            distance(lie::compose(lie::inverse(a), a), id)});
      round.error = std::max(round.error, (lie::log(a) - xa).norm() / (1.0 + xa.norm()));
    }
    out.push_back(assoc);
    out.push_back(ident);
    out.push_back(inv);
    out.push_back(round);
  }
  CheckResult hom{"disparity homomorphism to (R, +)", 0.0, 1e-10};
  for (int s = 0; s < samples; ++s) {
    const VectorXd x = uniform_vector(rng, 8, 0.02, 0.98);
    const VectorXd y = uniform_vector(rng, 8, 0.02, 0.98);
    hom.error = std::max(hom.error, max_abs(disparity::log(disparity::compose(x, y)) -
                                            disparity::log(x) - disparity::log(y)));
  }
  out.push_back(hom);
  return out;
}

std::vector<CheckResult> connection_checks(std::uint64_t seed, int triples) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  for (const auto& [name, g] : test_groups()) {
    const Index n = g.dimension();
    CheckResult torsion{name + " torsion-free", 0.0, 1e-12};
    CheckResult metric{name + " metric compatibility", 0.0, 1e-6};
    CheckResult dual{name + " swapped dual", 0.0, 1e-12};
    for (int s = 0; s < triples; ++s) {
      const VectorXd xi = uniform_vector(rng, n, -1.0, 1.0);
      const VectorXd eta0 = uniform_vector(rng, n, -1.0, 1.0), eta1 = uniform_vector(rng, n, -1.0, 1.0);
      const VectorXd zeta0 = uniform_vector(rng, n, -1.0, 1.0), zeta1 = uniform_vector(rng, n, -1.0, 1.0);

      torsion.error = std::max(torsion.error,
                               max_abs(lie::connection(g, xi, eta0) - lie::connection(g, eta0, xi) -
                                       lie::bracket(g, xi, eta0)));

      // Fields along the curve exp(t xi), in left-trivialized coordinates:
      // eta(t) = eta0 + sin(t) eta1, zeta(t) = zeta0 + t^2 zeta1.
      const double t0 = uniform(rng, -1.0, 1.0), h = 1e-4;
      auto eta = [&](double t) { return VectorXd(eta0 + std::sin(t) * eta1); };
      auto zeta = [&](double t) { return VectorXd(zeta0 + t * t * zeta1); };
      const double fd = (eta(t0 + h).dot(zeta(t0 + h)) - eta(t0 - h).dot(zeta(t0 - h))) / (2.0 * h);
      const VectorXd Deta = std::cos(t0) * eta1 + lie::connection(g, xi, eta(t0));
      const VectorXd Dzeta = 2.0 * t0 * zeta1 + lie::connection(g, xi, zeta(t0));
      const double cov = Deta.dot(zeta(t0)) + eta(t0).dot(Dzeta);
      metric.error = std::max(metric.error, std::abs(fd - cov) / (1.0 + std::abs(cov)));

      const MatrixXd M = lie::connection_swapped_dual(g, xi);
      dual.error = std::max(dual.error, std::abs(lie::connection(g, eta0, xi).dot(zeta0) -
                                                 eta0.dot(M * zeta0)));
    }
    out.push_back(torsion);
    out.push_back(metric);
    out.push_back(dual);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense reference

namespace {

struct DensePoint {
  GroupElement x;
  MatrixXd P;
};

struct DenseRate {
  VectorXd xi;
  MatrixXd dP;
};

// Left-trivialized filter field with every matrix held densely.
DenseRate dense_rate(const DensePoint& p, const FlowField& y, const WeightField& W,
                     const FilterConfig& cfg, const PixelGrid& grid) {
  const GroupDescriptor& g = p.x.group;
  const Index dim = g.dimension();
  const Index n = dim - kCameraDim;
  const State s = from_group(p.x);
  const MeasurementDerivatives md = measurement_derivatives(s, y, W, cfg.penalty, grid, true, cfg.hessian);
  const MatrixXd H = md.hessian.to_dense();

  VectorXd f = VectorXd::Zero(dim);
  f.segment<6>(0) = std::get<VectorXd>(p.x.factors[1]);
  DenseRate r;
  r.xi = f - p.P * md.gradient;

  MatrixXd A = MatrixXd::Zero(dim, dim);
  A.block(0, 6, 6, 6).setIdentity();
  const MatrixXd C = A + lie::swapped_connection_matrix(g, f) - lie::connection_matrix(g, r.xi);
  MatrixXd R = MatrixXd::Zero(dim, dim);
  R.topLeftCorner(kCameraDim, kCameraDim) = cfg.R_cc;
  R.bottomRightCorner(n, n).diagonal().setConstant(cfg.r_dd);

  r.dP = R + C * p.P + p.P * C.transpose() - p.P * H * p.P;
  // The gain keeps a diagonal disparity block.
  const VectorXd diag = r.dP.bottomRightCorner(n, n).diagonal();
  r.dP.bottomRightCorner(n, n) = diag.asDiagonal();
  return r;
}

DensePoint dense_advance(const DensePoint& p, const DenseRate& r, double h) {
  return DensePoint{lie::retract(p.x, r.xi * h), p.P + r.dP * h};
}

DensePoint dense_cg3(const DensePoint& p, double h, const FlowField& y, const WeightField& W,
                     const FilterConfig& cfg, const PixelGrid& grid) {
  using T = lie::CG3Tableau;
  const DenseRate k1 = dense_rate(p, y, W, cfg, grid);
  const DenseRate k2 = dense_rate(dense_advance(p, k1, T::a21 * h), y, W, cfg, grid);
  const DenseRate k3 =
      dense_rate(dense_advance(dense_advance(p, k1, T::a31 * h), k2, T::a32 * h), y, W, cfg, grid);
  DensePoint out = dense_advance(p, k1, T::b1 * h);
  out = dense_advance(out, k2, T::b2 * h);
  out = dense_advance(out, k3, T::b3 * h);
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  const Index n = out.P.rows() - kCameraDim;
  for (Index i = 0; i < n; ++i) {
    double& pd = out.P(kCameraDim + i, kCameraDim + i);
    pd = std::max(pd, 0.0);
  }
  return out;
}

}  // namespace

CheckResult dense_check(std::uint64_t seed, HessianMode mode, int frames, int size) {
  CheckResult r{std::string("dense reference (") +
                    (mode == HessianMode::Exact ? "exact" : "gauss-newton") + " Hessian)",
                0.0, 1e-8};
  Rng rng(seed);
  const PixelGrid grid = PixelGrid::with_default_intrinsics(size, size);
  const Index n = grid.size();

  FilterConfig cfg;
  cfg.hessian = mode;
  cfg.stiffness_limit = 0.0;
  cfg.propagate_disparity = false;
  cfg.sparsify = false;
  cfg.epipole_weighting = false;
  cfg.R0_cc = Mat12::Identity() * 1e-2;
  cfg.r0_dd = 0.05;
  cfg.substeps = 16;

  const lie::SE3 E_true = lie::SE3::exp(random_twist(rng, 0.01, 0.05));
  const VectorXd d_true = uniform_vector(rng, n, 0.15, 0.35);
  const double f = grid.focal();
  const WeightField W = WeightField::uniform(n, Mat2::Identity() * (4.0 * f * f));  // sigma = 1/2 px

  // Start near the truth with small noise: with large residuals the exact
  // Hessian is indefinite and the Riccati solution escapes in finite time.
  State xs = State::initial(n);
  xs.E = E_true * lie::SE3::exp(random_twist(rng, 0.001, 0.005));
  xs.d = d_true + uniform_vector(rng, n, -0.005, 0.005);
  GainMatrix Ps = initial_gain(cfg, n);
  DensePoint pd{xs.to_group_element(), Ps.to_dense()};
  std::normal_distribution<double> noise(0.0, 0.05 / f);

  for (int k = 0; k < frames; ++k) {
    FlowField y = induced_flow(E_true, d_true, grid);
    for (Index i = 0; i < n; ++i) {
      y.vectors(0, i) += noise(rng);
      y.vectors(1, i) += noise(rng);
    }
    // Same fixed schedule on both sides, well inside the explicit stability
    // region at the start of the frame.
    const auto md = measurement_derivatives(xs, y, W, cfg.penalty, grid, true, mode);
    const double rho = gain_hessian_spectral_radius(Ps, md.hessian);
    cfg.substeps = std::max(16, static_cast<int>(std::ceil(4.0 * rho * cfg.frame_interval)));
    cfg.max_substeps = std::max(cfg.max_substeps, cfg.substeps);
    const FrameResult fr = filter_frame(xs, Ps, Frame{y, W, {}}, cfg, grid, k);
    xs = fr.state;
    Ps = fr.gain;
    const double h = cfg.frame_interval / cfg.substeps;
    for (int s = 0; s < cfg.substeps; ++s) pd = dense_cg3(pd, h, y, W, cfg, grid);

    const State xd = from_group(pd.x);
    const double p_scale = std::max(1.0, max_abs(pd.P));
    const double err = std::max({max_abs(xs.E.matrix() - xd.E.matrix()), max_abs(xs.v - xd.v),
                                 max_abs(xs.d - xd.d), max_abs(Ps.to_dense() - pd.P) / p_scale});
    r.error = std::max(r.error, err);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Riccati closed forms

std::vector<CheckResult> riccati_checks() {
  std::vector<CheckResult> out;
  {
    CheckResult r{"Riccati P(t) = R0 + t R for C = H = 0", 0.0, 1e-9};
    Rng rng(7);
    const Index n = 3;
    const MatrixXd a = uniform_vector(rng, kCameraDim * kCameraDim, -1.0, 1.0).reshaped(kCameraDim, kCameraDim);
    Mat12 R_cc = Mat12(a * a.transpose()) * 0.1 + Mat12::Identity();
    const MatrixXd b = uniform_vector(rng, kCameraDim * kCameraDim, -1.0, 1.0).reshaped(kCameraDim, kCameraDim);
    const Mat12 R0_cc = Mat12(b * b.transpose()) + Mat12::Identity();
    const VectorXd r_dd = uniform_vector(rng, n, 0.1, 1.0);
    const VectorXd r0_dd = uniform_vector(rng, n, 0.1, 1.0);
    GainMatrix P = GainMatrix::diagonal(R0_cc, r0_dd);
    const BlockMatrix H = BlockMatrix::zeros(n);
    const double h = 0.1;
    for (int k = 1; k <= 20; ++k) {
      P = riccati_step(P, Mat12::Zero(), H, R_cc, r_dd, h);
      const double t = k * h;
      const GainMatrix expect = GainMatrix::diagonal(R0_cc + t * R_cc, r0_dd + t * r_dd);
      r.error = std::max(r.error, max_abs(P.to_dense() - expect.to_dense()));
    }
    out.push_back(r);
  }
  {
    CheckResult r{"Riccati scalar equilibrium sqrt(r / h)", 0.0, 1e-6};
    const double rr = 0.3, hh = 2.0;
    GainMatrix P = GainMatrix::diagonal(Mat12::Zero(), VectorXd::Constant(1, 5.0));
    BlockMatrix H = BlockMatrix::zeros(1);
    H.dd[0] = hh;
    for (int k = 0; k < 2000; ++k) P = riccati_step(P, Mat12::Zero(), H, Mat12::Zero(), VectorXd::Constant(1, rr), 0.02);
    r.error = std::abs(P.dd[0] - std::sqrt(rr / hh));
    out.push_back(r);
  }
  return out;
}

CheckResult quadratic_limit_check(int frames, int size) {
  CheckResult r{"beta = 1 equals the quadratic penalty", 0.0, 1e-8};
  RunConfig cfg;
  cfg.grid.width = cfg.grid.height = size;
  cfg.frames = frames;
  const SyntheticScene scene = make_scene(cfg);
  const PixelGrid grid = scene.grid;
  const Sequence seq = generate_sequence(scene, frames);
  cfg.noise.sigma_px = 0.5;
  const Observations obs = observe(seq, cfg);

  RunConfig a = cfg, b = cfg;
  a.filter.penalty = Penalty::charbonnier(cfg.filter.penalty.nu, 1.0);
  b.filter.penalty = Penalty::quadratic();
  const auto ea = run_filter(a, grid, obs.forward, obs.backward);
  const auto eb = run_filter(b, grid, obs.forward, obs.backward);
  for (std::size_t k = 0; k < ea.size(); ++k) {
    r.error = std::max({r.error, max_abs(ea[k].disparity - eb[k].disparity),
                        max_abs(ea[k].motion.matrix() - eb[k].motion.matrix()),
                        max_abs(ea[k].twist - eb[k].twist)});
  }
  return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
  std::vector<CheckResult> out = lie_checks(seed);
  for (auto& c : connection_checks(seed + 1)) out.push_back(c);
  out.push_back(gradient_check(seed + 2));
  out.push_back(hessian_check(seed + 3));
  out.push_back(dense_check(seed + 4, HessianMode::Exact));
  out.push_back(dense_check(seed + 5, HessianMode::GaussNewton));
  for (auto& c : riccati_checks()) out.push_back(c);
  out.push_back(quadratic_limit_check());
  return out;
}

}  // namespace mef::checks
