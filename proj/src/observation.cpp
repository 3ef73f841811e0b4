#include "mef/observation.hpp"

#include <cmath>
#include <string>

#include "mef/errors.hpp"

namespace mef {

using lie::Mat3;
using lie::Vec3;

PixelGrid::PixelGrid(int width, int height, const Eigen::Matrix3d& K)
    : width_(width), height_(height), K_(K) {
  if (width <= 0 || height <= 0) throw DataError("pixel grid must be non-empty");
  if (K(0, 0) <= 0.0 || K(1, 1) <= 0.0) throw DataError("intrinsics must have positive focal lengths");
  coords_.resize(2, size());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      coords_.col(index(c, r)) = to_normalized(Vec2(c, r));
    }
  }
}

PixelGrid PixelGrid::with_default_intrinsics(int width, int height) {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = width;
  K(1, 1) = width;
  K(0, 2) = 0.5 * (width - 1);
  K(1, 2) = 0.5 * (height - 1);
  return PixelGrid(width, height, K);
}

Vec2 PixelGrid::to_normalized(const Vec2& px) const {
  // K is upper triangular with unit last row.
  const double y = (px.y() - K_(1, 2)) / K_(1, 1);
  const double x = (px.x() - K_(0, 2) - K_(0, 1) * y) / K_(0, 0);
  return Vec2(x, y);
}

Vec2 PixelGrid::to_pixels(const Vec2& z) const {
  return Vec2(K_(0, 0) * z.x() + K_(0, 1) * z.y() + K_(0, 2), K_(1, 1) * z.y() + K_(1, 2));
}

FlowField FlowField::zeros(Eigen::Index n) {
  return FlowField{Eigen::Matrix2Xd::Zero(2, n), Mask(static_cast<std::size_t>(n), 1)};
}

WeightField WeightField::uniform(Eigen::Index n, const Mat2& w) {
  return WeightField{std::vector<Mat2>(static_cast<std::size_t>(n), w)};
}

WeightField WeightField::from_covariance(std::span<const Mat2> Q) {
  WeightField out;
  out.weight.reserve(Q.size());
  for (const Mat2& q : Q) {
    Eigen::SelfAdjointEigenSolver<Mat2> es(q);
    if ((q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm()) || es.eigenvalues().minCoeff() < 1e-12) {
      throw DomainError("observation covariance is not symmetric positive definite");
    }
    out.weight.push_back(q.inverse());
  }
  return out;
}

void WeightField::scale(std::span<const double> factors) {
  if (factors.size() != weight.size()) throw DataError("weight scale field has the wrong size");
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] *= factors[i];
}

// ---------------------------------------------------------------------------

Penalty Penalty::charbonnier(double nu, double beta) {
  if (!(nu > 0.0)) throw DomainError("Charbonnier nu must be positive");
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("Charbonnier beta must lie in (0, 1]");
  return Penalty{Kind::Charbonnier, nu, beta};
}

Penalty Penalty::quadratic() { return Penalty{Kind::Quadratic, 0.0, 1.0}; }

double Penalty::value(double x) const {
  return kind == Kind::Quadratic ? x : mef::charbonnier(x, nu, beta);
}

double Penalty::deriv(double x) const {
  return kind == Kind::Quadratic ? 1.0 : mef::charbonnier_deriv(x, nu, beta);
}

double Penalty::deriv2(double x) const {
  if (kind == Kind::Quadratic || beta == 1.0) return 0.0;
  return beta * (beta - 1.0) * std::pow(x + nu, beta - 2.0);
}

double charbonnier(double x, double nu, double beta) {
  return std::pow(x + nu, beta) - std::pow(nu, beta);
}

double charbonnier_deriv(double x, double nu, double beta) {
  return beta * std::pow(x + nu, beta - 1.0);
}

// ---------------------------------------------------------------------------

Vec2 project(const Vec3& p) {
  if (std::abs(p.z()) <= kMinDepth) {
    throw DomainError("projection of a point at or behind the camera plane (z = " +
                      std::to_string(p.z()) + ")");
  }
  return Vec2(p.x() / p.z(), p.y() / p.z());
}

FlowField induced_flow(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid) {
  if (d.size() != grid.size()) throw DataError("disparity map does not match the pixel grid");
  FlowField out = FlowField::zeros(grid.size());
  const Mat3& R = E.rotation().matrix();
  const Vec3& w = E.translation();
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const Vec2 z = grid.point(i);
    const Vec3 X = R * Vec3(z.x(), z.y(), 1.0) / d[i] + w;
    if (X.z() <= kMinDepth) {
      out.valid[static_cast<std::size_t>(i)] = 0;
      continue;
    }
    out.vectors.col(i) = Vec2(X.x() / X.z(), X.y() / X.z()) - z;
  }
  return out;
}

double measurement_energy(const lie::SE3& E, const Eigen::VectorXd& d, const FlowField& y,
                          const WeightField& W, const Penalty& phi, const PixelGrid& grid) {
  if (y.size() != grid.size() || W.size() != grid.size()) {
    throw DataError("measurement sizes do not match the pixel grid");
  }
  const FlowField h = induced_flow(E, d, grid);
  std::vector<double> terms(static_cast<std::size_t>(grid.size()), 0.0);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (!y.is_valid(i) || !h.is_valid(i)) continue;
    const Vec2 e = y.vectors.col(i) - h.vectors.col(i);
    const auto k = static_cast<std::size_t>(i);
    terms[k] = phi.value(0.5 * e.dot(W.weight[k] * e));
  }
  return pairwise_sum(terms);
}

std::optional<Vec2> epipole(const lie::SE3& E) {
  const Vec3& w = E.translation();
  if (std::abs(w.z()) <= 1e-9) return std::nullopt;
  return Vec2(w.x() / w.z(), w.y() / w.z());
}

std::vector<double> epipole_weight(const PixelGrid& grid, const lie::SE3& E, double rho) {
  std::vector<double> out(static_cast<std::size_t>(grid.size()), 1.0);
  const auto e = epipole(E);
  if (!e || E.translation().norm() == 0.0 || !(rho > 0.0)) return out;
  const double r2 = rho * rho;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    out[static_cast<std::size_t>(i)] = std::min(1.0, (grid.point(i) - *e).squaredNorm() / r2);
  }
  return out;
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 8;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

// ---------------------------------------------------------------------------

PixelJet pixel_jet(const lie::SE3& E, double d, const Vec2& z, bool with_second) {
  PixelJet jet;
  const Mat3& R = E.rotation().matrix();
  const Vec3 p(z.x(), z.y(), 1.0);
  // Depth s = 1/d = 1 + e^{-4 theta}; ds/dtheta = -4 (s - 1), d2s/dtheta2 = 16 (s - 1).
  const double s = 1.0 / d;
  const double sm1 = (1.0 - d) / d;
  const double ds = -4.0 * sm1;
  const double dds = 16.0 * sm1;
  const Vec3 ps = p * s;
  const Vec3 X = R * ps + E.translation();
  if (X.z() <= kMinDepth) return jet;
  jet.valid = true;

  const double iz = 1.0 / X.z();
  jet.h = Vec2(X.x() * iz, X.y() * iz) - z;

  Eigen::Matrix<double, 2, 3> Jpi;
  Jpi << iz, 0.0, -X.x() * iz * iz,
         0.0, iz, -X.y() * iz * iz;

  // dX along the seven directions.
  Eigen::Matrix<double, 3, 7> dX;
  dX.leftCols<3>() = -R * lie::hat(ps);
  dX.middleCols<3>(3) = R;
  dX.col(6) = R * p * ds;
  jet.J = Jpi * dX;
  if (!with_second) return jet;

  // d2X(a, b): derivative along a of dX(:, b).
  auto d2X = [&](int a, int b) -> Vec3 {
    const bool a_rot = a < 3, b_rot = b < 3;
    if (a == 6 && b == 6) return R * p * dds;
    if (a == 6) return b_rot ? Vec3(R * Vec3::Unit(b).cross(p) * ds) : Vec3::Zero();
    if (b == 6) return a_rot ? Vec3(R * Vec3::Unit(a).cross(p) * ds) : Vec3::Zero();
    if (!a_rot) return Vec3::Zero();
    const Vec3 inner = b_rot ? Vec3(Vec3::Unit(b).cross(ps)) : Vec3(Vec3::Unit(b - 3));
    return R * Vec3::Unit(a).cross(inner);
  };

  const double iz2 = iz * iz;
  const double iz3 = iz2 * iz;
  for (int a = 0; a < 7; ++a) {
    for (int b = 0; b < 7; ++b) {
      const Vec3 xa = dX.col(a), xb = dX.col(b);
      // Second derivative of pi contracted with (xa, xb).
      Vec2 q;
      q.x() = -iz2 * (xa.x() * xb.z() + xa.z() * xb.x()) + 2.0 * X.x() * iz3 * xa.z() * xb.z();
      q.y() = -iz2 * (xa.y() * xb.z() + xa.z() * xb.y()) + 2.0 * X.y() * iz3 * xa.z() * xb.z();
      jet.second[static_cast<std::size_t>(a)].col(b) = Jpi * d2X(a, b) + q;
    }
  }
  return jet;
}

}  // namespace mef
