#include "mef/filter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mef/disparity_group.hpp"
#include "mef/errors.hpp"
#include "mef/propagation.hpp"

namespace mef {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// State

State State::initial(Index num_pixels) {
  return State{lie::SE3::identity(), Vec6::Zero(), disparity::identity(num_pixels)};
}

State State::retract(const VectorXd& xi) const {
  if (xi.size() != dimension()) throw DomainError("tangent vector does not match the state");
  State out;
  out.E = E * lie::SE3::exp(xi.segment<6>(kPoseOffset));
  out.v = v + xi.segment<6>(kTwistOffset);
  out.d = disparity::compose(d, disparity::exp(VectorXd(xi.tail(d.size()))));
  return out;
}

lie::GroupElement State::to_group_element() const {
  lie::GroupElement x{lie::GroupDescriptor::filter_state(static_cast<int>(d.size())), {}};
  x.factors.emplace_back(E);
  x.factors.emplace_back(VectorXd(v));
  x.factors.emplace_back(d);
  return x;
}

// ---------------------------------------------------------------------------
// BlockMatrix

BlockMatrix BlockMatrix::zeros(Index n) {
  return BlockMatrix{Mat12::Zero(), Mat12X::Zero(kCameraDim, n), VectorXd::Zero(n)};
}

BlockMatrix BlockMatrix::diagonal(const Mat12& cc, const VectorXd& dd) {
  return BlockMatrix{cc, Mat12X::Zero(kCameraDim, dd.size()), dd};
}

VectorXd BlockMatrix::apply(const VectorXd& x) const {
  const Index n = dd.size();
  VectorXd out(kCameraDim + n);
  const auto xc = x.head<kCameraDim>();
  const auto xd = x.tail(n);
  out.head<kCameraDim>() = cc * xc + cd * xd;
  out.tail(n) = cd.transpose() * xc + dd.cwiseProduct(xd);
  return out;
}

MatrixXd BlockMatrix::to_dense() const {
  const Index n = dd.size();
  MatrixXd m = MatrixXd::Zero(kCameraDim + n, kCameraDim + n);
  m.topLeftCorner<kCameraDim, kCameraDim>() = cc;
  m.topRightCorner(kCameraDim, n) = cd;
  m.bottomLeftCorner(n, kCameraDim) = cd.transpose();
  m.bottomRightCorner(n, n).diagonal() = dd;
  return m;
}

BlockMatrix BlockMatrix::from_dense(const MatrixXd& m) {
  const Index n = m.rows() - kCameraDim;
  if (n < 0 || m.cols() != m.rows()) throw DataError("dense matrix has the wrong shape");
  BlockMatrix b;
  b.cc = m.topLeftCorner<kCameraDim, kCameraDim>();
  b.cd = m.topRightCorner(kCameraDim, n);
  b.dd = m.bottomRightCorner(n, n).diagonal();
  return b;
}

BlockMatrix& BlockMatrix::operator+=(const BlockMatrix& o) {
  cc += o.cc;
  cd += o.cd;
  dd += o.dd;
  return *this;
}

BlockMatrix BlockMatrix::operator+(const BlockMatrix& o) const {
  BlockMatrix r = *this;
  r += o;
  return r;
}

BlockMatrix BlockMatrix::operator*(double s) const { return BlockMatrix{cc * s, cd * s, dd * s}; }

// ---------------------------------------------------------------------------
// Configuration

namespace {

bool is_spd(const Mat12& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) return false;
  Eigen::LLT<Mat12> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

void FilterConfig::validate() const {
  if (!is_spd(R_cc)) throw DomainError("model noise weight R (camera block) must be SPD");
  if (!is_spd(R0_cc)) throw DomainError("initial gain R0 (camera block) must be SPD");
  if (!(r_dd > 0.0)) throw DomainError("model noise weight of the disparities must be positive");
  if (!(r0_dd > 0.0)) throw DomainError("initial disparity gain must be positive");
  if (substeps < 1) throw DomainError("substeps must be at least 1");
  if (!(stiffness_limit >= 0.0)) throw DomainError("stiffness limit must be non-negative");
  if (max_substeps < substeps) throw DomainError("max_substeps must be at least substeps");
  if (!(frame_interval > 0.0)) throw DomainError("frame interval must be positive");
  if (!(outlier_factor > 0.0)) throw DomainError("outlier factor must be positive");
  if (!(disocclusion_gain_factor >= 1.0)) throw DomainError("disocclusion gain factor must be >= 1");
  if (!(epipole_rho >= 0.0)) throw DomainError("epipole radius must be non-negative");
  if (penalty.kind == Penalty::Kind::Charbonnier) {
    (void)Penalty::charbonnier(penalty.nu, penalty.beta);
  }
}

GainMatrix initial_gain(const FilterConfig& cfg, Index num_pixels) {
  return BlockMatrix::diagonal(cfg.R0_cc, VectorXd::Constant(num_pixels, cfg.r0_dd));
}

// ---------------------------------------------------------------------------
// Measurement derivatives

MeasurementDerivatives measurement_derivatives(const State& x, const FlowField& y,
                                               const WeightField& W, const Penalty& phi,
                                               const PixelGrid& grid, bool with_hessian,
                                               HessianMode mode) {
  const bool exact = mode == HessianMode::Exact;
  const Index n = grid.size();
  if (x.num_pixels() != n || y.size() != n || W.size() != n) {
    throw DataError("state, observation and weight sizes do not match the pixel grid");
  }
  MeasurementDerivatives out;
  out.gradient = VectorXd::Zero(kCameraDim + n);
  out.hessian = BlockMatrix::zeros(n);
  std::vector<double> energy(static_cast<std::size_t>(n), 0.0);
  out.residual_norms.reserve(static_cast<std::size_t>(n));

  Eigen::Matrix<double, 6, 6> hess_pose = Eigen::Matrix<double, 6, 6>::Zero();
  for (Index i = 0; i < n; ++i) {
    if (!y.is_valid(i)) continue;
    const PixelJet jet = pixel_jet(x.E, x.d[i], grid.point(i), with_hessian && exact);
    if (!jet.valid) continue;
    const auto k = static_cast<std::size_t>(i);
    const Mat2& Wz = W.weight[k];
    const Vec2 e = y.vectors.col(i) - jet.h;
    const Vec2 We = Wz * e;
    const double q = 0.5 * e.dot(We);
    const double d1 = phi.deriv(q);
    energy[k] = phi.value(q);
    out.residual_norms.push_back(e.norm());

    // dq along each direction: -e^T W J_a.
    const Eigen::Matrix<double, 7, 1> dq = -jet.J.transpose() * We;
    const Eigen::Matrix<double, 7, 1> g = d1 * dq;
    out.gradient.head<6>() += g.head<6>();
    out.gradient[kCameraDim + i] = g[6];

    if (!with_hessian) continue;
    double d2 = phi.deriv2(q);
    // (dq.v)^2 <= 2q v^T J^T W J v, so phi'' >= -phi' / 2q keeps the block PSD.
    if (!exact && q > 0.0) d2 = std::max(d2, -d1 / (2.0 * q));
    Eigen::Matrix<double, 7, 7> D2 = d2 * dq * dq.transpose() + d1 * jet.J.transpose() * Wz * jet.J;
    if (exact) {
      for (int a = 0; a < 7; ++a) {
        D2.row(a) -= d1 * We.transpose() * jet.second[static_cast<std::size_t>(a)];
      }
    }
    const Eigen::Matrix<double, 7, 7> S = 0.5 * (D2 + D2.transpose());
    hess_pose += S.topLeftCorner<6, 6>();
    out.hessian.cd.block<6, 1>(0, i) = S.block<6, 1>(0, 6);
    out.hessian.dd[i] = S(6, 6);
  }
  out.energy = pairwise_sum(energy);

  if (with_hessian && !exact) out.hessian.cc.topLeftCorner<6, 6>() = hess_pose;
  if (with_hessian && exact) {
    // Riemannian correction -<G, omega_{e_a} e_b> on the non-abelian pose
    // block; only the symmetric part of the connection survives.
    const auto se3 = lie::GroupDescriptor::se3();
    const Vec6 gp = out.gradient.head<6>();
    Eigen::Matrix<double, 6, 6> corr;
    for (int a = 0; a < 6; ++a) {
      for (int b = 0; b < 6; ++b) {
        const VectorXd ea = Vec6::Unit(a), eb = Vec6::Unit(b);
        const VectorXd sym = 0.5 * (lie::connection(se3, ea, eb) + lie::connection(se3, eb, ea));
        corr(a, b) = gp.dot(sym);
      }
    }
    out.hessian.cc.topLeftCorner<6, 6>() = hess_pose - corr;
  }
  return out;
}

VectorXd propagation_field(const State& x) {
  VectorXd f = VectorXd::Zero(x.dimension());
  f.segment<6>(kPoseOffset) = x.v;
  return f;
}

VectorXd hamiltonian_gradient(const State& x, const FlowField& y, const WeightField& W,
                              const Penalty& phi, const PixelGrid& grid) {
  return measurement_derivatives(x, y, W, phi, grid, false).gradient;
}

BlockMatrix riccati_H(const State& x, const FlowField& y, const WeightField& W, const Penalty& phi,
                      const PixelGrid& grid) {
  return measurement_derivatives(x, y, W, phi, grid, true).hessian;
}

// ---------------------------------------------------------------------------
// Riccati equation

Mat12 riccati_C(const State& x, const VectorXd& velocity) {
  // C = A + W_f - Omega_xi, where A is the left-trivialized Jacobian of f,
  // W_f eta = omega_eta f and Omega_xi eta = omega_xi eta with xi = x^{-1} x_dot.
  const auto se3 = lie::GroupDescriptor::se3();
  Mat12 C = Mat12::Zero();
  C.block<6, 6>(kPoseOffset, kTwistOffset).setIdentity();
  C.block<6, 6>(kPoseOffset, kPoseOffset) =
      lie::swapped_connection_matrix(se3, VectorXd(x.v)) -
      lie::connection_matrix(se3, VectorXd(velocity.segment<6>(kPoseOffset)));
  return C;
}

BlockMatrix riccati_C_apply(const Mat12& C, const GainMatrix& P) {
  BlockMatrix out = BlockMatrix::zeros(P.num_pixels());
  out.cc = C * P.cc;
  out.cd = C * P.cd;
  return out;
}

GainMatrix riccati_rate(const GainMatrix& P, const Mat12& C, const BlockMatrix& H,
                        const Mat12& R_cc, const VectorXd& r_dd) {
  const Index n = P.num_pixels();
  // P H P with P = [A B; B^T D], H = [Hc K; K^T Hd], D and Hd diagonal:
  //   M1 = A Hc + B K^T, M2 = A K + B Hd
  //   (PHP)_cc = M1 A + M2 B^T, (PHP)_cd = M1 B + M2 D
  //   (PHP)_dd,ii = b_i^T Hc b_i + 2 D_i k_i^T b_i + D_i^2 Hd_i
  // The measurement never touches the twist, so Hc and K usually live on
  // the first m = 6 rows; only those are multiplied.
  const bool pose_only = H.cc.bottomRows<kCameraDim - kTwistOffset>().isZero(0.0) &&
                         H.cc.rightCols<kCameraDim - kTwistOffset>().isZero(0.0) &&
                         H.cd.bottomRows(kCameraDim - kTwistOffset).isZero(0.0);
  const Index m = pose_only ? kTwistOffset : kCameraDim;
  const auto Hc = H.cc.topLeftCorner(m, m);
  const auto K = H.cd.topRows(m);
  const auto Bm = P.cd.topRows(m);
  Mat12 M1 = Mat12::Zero();
  M1.leftCols(m).noalias() = P.cc.leftCols(m) * Hc;
  M1.leftCols(m).noalias() += P.cd * K.transpose();
  Mat12X M2 = P.cd * H.dd.asDiagonal();
  M2.noalias() += P.cc.leftCols(m) * K;
  GainMatrix rate;
  Mat12 PHPcc = M1.leftCols(m) * P.cc.topRows(m);
  PHPcc.noalias() += M2 * P.cd.transpose();
  const Mat12 CP = C * P.cc;
  rate.cc = R_cc + CP + CP.transpose() - 0.5 * (PHPcc + PHPcc.transpose());
  rate.cd.noalias() = (C - M1) * P.cd;
  rate.cd.noalias() -= M2 * P.dd.asDiagonal();
  const Eigen::MatrixXd HcB = Hc * Bm;
  rate.dd.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto b = Bm.col(i);
    const double php = b.dot(HcB.col(i)) + 2.0 * P.dd[i] * K.col(i).dot(b) + P.dd[i] * P.dd[i] * H.dd[i];
    rate.dd[i] = r_dd[i] - php;
  }
  return rate;
}

namespace {

int clamp_gains(GainMatrix& P) {
  int clamped = 0;
  for (Index i = 0; i < P.dd.size(); ++i) {
    if (P.dd[i] < 0.0) {
      P.dd[i] = 0.0;
      ++clamped;
    }
  }
  return clamped;
}

void symmetrize(GainMatrix& P) { P.cc = 0.5 * (P.cc + P.cc.transpose()).eval(); }

GainMatrix add(const GainMatrix& P, const GainMatrix& dP) { return P + dP; }

}  // namespace

GainMatrix riccati_step(const GainMatrix& P, const Mat12& C, const BlockMatrix& H, const Mat12& R_cc,
                        const VectorXd& r_dd, double h, RiccatiStepInfo* info) {
  if (!(h > 0.0)) throw DomainError("riccati_step requires a positive step size");
  GainMatrix out = lie::cg3_step(
      P, h, [&](const GainMatrix& p) { return riccati_rate(p, C, H, R_cc, r_dd); }, add);
  symmetrize(out);
  const int clamped = clamp_gains(out);
  if (info) info->clamped = clamped;
  return out;
}

State state_step(const State& x, const GainMatrix& P, const FlowField& y, const WeightField& W,
                 const Penalty& phi, const PixelGrid& grid, double h) {
  if (!(h > 0.0)) throw DomainError("state_step requires a positive step size");
  auto field = [&](const State& s) -> VectorXd {
    return propagation_field(s) - P.apply(hamiltonian_gradient(s, y, W, phi, grid));
  };
  return lie::cg3_step(x, h, field, [](const State& s, const VectorXd& xi) { return s.retract(xi); });
}

double gain_hessian_spectral_radius(const GainMatrix& P, const BlockMatrix& H) {
  const Index n = P.num_pixels();
  double bound = 0.0;
  const Eigen::EigenSolver<Mat12> es(P.cc * H.cc, false);
  bound = es.eigenvalues().cwiseAbs().maxCoeff();
  for (Index i = 0; i < n; ++i) bound = std::max(bound, std::abs(P.dd[i] * H.dd[i]));
  VectorXd v = VectorXd::Ones(kCameraDim + n) / std::sqrt(static_cast<double>(kCameraDim + n));
  double lambda = 0.0;
  for (int it = 0; it < 20; ++it) {
    VectorXd w = P.apply(H.apply(v));
    lambda = w.norm();
    if (!(lambda > 0.0)) break;
    v = w / lambda;
  }
  return std::max(bound, lambda);
}

GainMatrix sparsify(const GainMatrix& P) {
  GainMatrix out = P;
  symmetrize(out);
  return out;
}

// ---------------------------------------------------------------------------
// Frame update

namespace {

struct FilterPoint {
  State x;
  GainMatrix P;
};

struct FilterRate {
  VectorXd xi;
  GainMatrix dP;
  FilterRate operator*(double s) const { return FilterRate{xi * s, dP * s}; }
};

bool finite(const State& x, const GainMatrix& P) {
  return x.E.matrix().allFinite() && x.v.allFinite() && x.d.allFinite() && P.cc.allFinite() &&
         P.cd.allFinite() && P.dd.allFinite();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

FrameResult filter_frame(const State& x0, const GainMatrix& P0, const Frame& frame,
                         const FilterConfig& cfg, const PixelGrid& grid, int frame_index) {
  const Index n = grid.size();
  if (x0.num_pixels() != n || P0.num_pixels() != n || frame.flow.size() != n ||
      frame.weight.size() != n) {
    throw DataError("frame " + std::to_string(frame_index) + ": sizes do not match the pixel grid");
  }
  if (!frame.consistent.empty() && static_cast<Index>(frame.consistent.size()) != n) {
    throw DataError("frame " + std::to_string(frame_index) + ": consistency mask has the wrong size");
  }

  WeightField W = frame.weight;
  if (cfg.epipole_weighting && cfg.epipole_rho > 0.0) {
    W.scale(epipole_weight(grid, x0.E, cfg.epipole_rho));
  }
  VectorXd r_dd = VectorXd::Constant(n, cfg.r_dd);
  int inconsistent = 0;
  for (Index i = 0; i < static_cast<Index>(frame.consistent.size()); ++i) {
    if (frame.consistent[static_cast<std::size_t>(i)]) continue;
    ++inconsistent;
    if (cfg.outlier_mode == OutlierMode::ScaleModelNoise) {
      r_dd[i] *= cfg.outlier_factor;
    } else {
      W.weight[static_cast<std::size_t>(i)] *= cfg.outlier_factor;
    }
  }

  const FlowField& y = frame.flow;
  const Penalty& phi = cfg.penalty;
  auto field = [&](const FilterPoint& p) -> FilterRate {
    const MeasurementDerivatives md = measurement_derivatives(p.x, y, W, phi, grid, true, cfg.hessian);
    FilterRate r;
    r.xi = propagation_field(p.x) - p.P.apply(md.gradient);
    const Mat12 C = riccati_C(p.x, r.xi);
    r.dP = riccati_rate(p.P, C, md.hessian, cfg.R_cc, r_dd);
    return r;
  };
  auto retract = [](const FilterPoint& p, const FilterRate& r) {
    return FilterPoint{p.x.retract(r.xi), p.P + r.dP};
  };

  FrameResult result;
  Diagnostics& diag = result.diagnostics;
  diag.frame = frame_index;
  FilterPoint pt{x0, P0};
  const double h_nominal = cfg.frame_interval / cfg.substeps;
  double t = 0.0;
  while (cfg.frame_interval - t > 1e-12 * cfg.frame_interval) {
    if (diag.substeps >= cfg.max_substeps) {
      throw NumericalError("frame " + std::to_string(frame_index) + ": more than " +
                           std::to_string(cfg.max_substeps) + " substeps needed");
    }
    const MeasurementDerivatives md =
        measurement_derivatives(pt.x, y, W, phi, grid, true, cfg.hessian);
    FilterRate k1;
    k1.xi = propagation_field(pt.x) - pt.P.apply(md.gradient);
    k1.dP = riccati_rate(pt.P, riccati_C(pt.x, k1.xi), md.hessian, cfg.R_cc, r_dd);
    double h = std::min(h_nominal, cfg.frame_interval - t);
    if (cfg.stiffness_limit > 0.0) {
      const double rho = 2.0 * gain_hessian_spectral_radius(pt.P, md.hessian);
      if (rho * h > cfg.stiffness_limit) h = cfg.stiffness_limit / rho;
    }
    pt = lie::cg3_step_from(pt, k1, h, field, retract);
    t += h;
    ++diag.substeps;
    symmetrize(pt.P);
    diag.clamped_gains += clamp_gains(pt.P);
    if (!finite(pt.x, pt.P)) {
      throw NumericalError("frame " + std::to_string(frame_index) + ": filter state became non-finite");
    }
  }

  const MeasurementDerivatives final_md = measurement_derivatives(pt.x, y, W, phi, grid, false);
  diag.energy = final_md.energy;
  std::vector<double> px_res = final_md.residual_norms;
  for (double& r : px_res) r *= grid.focal();
  if (!px_res.empty()) {
    double sum = 0.0;
    for (double r : px_res) sum += r;
    diag.mean_residual = sum / static_cast<double>(px_res.size());
    diag.median_residual = median(px_res);
  }
  diag.outlier_fraction = static_cast<double>(inconsistent) / static_cast<double>(n);
  result.updated_disparity = pt.x.d;

  if (cfg.propagate_disparity) {
    MatrixXd carried;
    if (cfg.propagate_gain) {
      carried.resize(1 + kCameraDim, n);
      carried.row(0) = pt.P.dd.transpose();
      carried.bottomRows(kCameraDim) = pt.P.cd;
    }
    PropagationResult prop = propagate(pt.x.E, pt.x.d, grid, carried);
    pt.x.d = prop.disparity;
    for (Index i = 0; i < n; ++i) {
      const bool ok = prop.valid[static_cast<std::size_t>(i)] != 0;
      if (!ok) {
        ++diag.disoccluded;
        // Inflate, but never beyond the initial gain, so repeated
        // disocclusions at the border do not compound.
        pt.P.dd[i] = std::max(pt.P.dd[i], std::min(pt.P.dd[i] * cfg.disocclusion_gain_factor, cfg.r0_dd));
        if (cfg.propagate_gain) pt.P.cd.col(i).setZero();
      } else if (cfg.propagate_gain) {
        pt.P.dd[i] = std::max(0.0, prop.carried(0, i));
        pt.P.cd.col(i) = prop.carried.bottomRows(kCameraDim).col(i);
      }
    }
    result.propagation_valid = std::move(prop.valid);
  } else {
    result.propagation_valid = Mask(static_cast<std::size_t>(n), 1);
  }

  if (cfg.sparsify) pt.P = sparsify(pt.P);
  diag.gain_trace = pt.P.trace();
  if (!finite(pt.x, pt.P)) {
    throw NumericalError("frame " + std::to_string(frame_index) + ": filter state became non-finite");
  }
  result.state = std::move(pt.x);
  result.gain = std::move(pt.P);
  return result;
}

// ---------------------------------------------------------------------------

MinimumEnergyFilter::MinimumEnergyFilter(PixelGrid grid, FilterConfig cfg)
    : MinimumEnergyFilter(grid, cfg, State::initial(grid.size())) {}

MinimumEnergyFilter::MinimumEnergyFilter(PixelGrid grid, FilterConfig cfg, State initial)
    : grid_(std::move(grid)), cfg_(std::move(cfg)), state_(std::move(initial)) {
  cfg_.validate();
  if (state_.num_pixels() != grid_.size()) throw DataError("initial state does not match the grid");
  gain_ = initial_gain(cfg_, grid_.size());
}

const FrameResult& MinimumEnergyFilter::process(const Frame& frame) {
  last_ = filter_frame(state_, gain_, frame, cfg_, grid_, frames_);
  state_ = last_.state;
  gain_ = last_.gain;
  ++frames_;
  return last_;
}

}  // namespace mef
