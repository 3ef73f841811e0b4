#include "mef/lie.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mef/disparity_group.hpp"

namespace mef::lie {

namespace {

// Coefficients of the Rodrigues formula and of the SE3 V-matrix:
//   A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3.
struct RodriguesCoeffs {
  double a, b, c;
};

RodriguesCoeffs rodrigues(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0};
  }
  const double s = std::sin(theta);
  const double h = std::sin(0.5 * theta);
  // (theta - sin) / theta^3 cancels badly for moderate angles as well.
  const double c = theta < kCancellationAngle
                       ? 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0 +
                             t2 * t2 * t2 * t2 / 39916800.0
                       : (theta - s) / (t2 * theta);
  return {s / theta, 2.0 * h * h / t2, c};
}

}  // namespace

Mat3 hat(const Vec3& w) {
  Mat3 W;
  W << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return W;
}

Vec3 vee(const Mat3& W) { return Vec3(W(2, 1), W(0, 2), W(1, 0)); }

// ---------------------------------------------------------------------------

SO3 SO3::exp(const Vec3& omega) {
  const double theta = omega.norm();
  const auto k = rodrigues(theta);
  const Mat3 W = hat(omega);
  return SO3(Mat3::Identity() + k.a * W + k.b * W * W);
}

double SO3::angle() const {
  const Vec3 v = 0.5 * vee(rot_ - rot_.transpose());
  const double c = 0.5 * (rot_.trace() - 1.0);
  return std::atan2(v.norm(), c);
}

Vec3 SO3::log() const {
  const Vec3 v = 0.5 * vee(rot_ - rot_.transpose());
  const double s = v.norm();
  const double c = 0.5 * (rot_.trace() - 1.0);
  const double theta = std::atan2(s, c);
  if (theta >= std::numbers::pi - kLogAngleMargin) {
    throw DomainError("SO3 log: rotation angle " + std::to_string(theta) +
                      " outside the injectivity radius");
  }
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return v * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
  }
  return v * (theta / s);
}

// ---------------------------------------------------------------------------

SE3 SE3::exp(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 u = xi.tail<3>();
  const double theta = omega.norm();
  const auto k = rodrigues(theta);
  const Mat3 W = hat(omega);
  const Mat3 W2 = W * W;
  const Mat3 R = Mat3::Identity() + k.a * W + k.b * W2;
  const Mat3 V = Mat3::Identity() + k.b * W + k.c * W2;
  return SE3(SO3(R), V * u);
}

Vec6 SE3::log() const {
  const Vec3 omega = rot_.log();
  const double theta = omega.norm();
  const Mat3 W = hat(omega);
  // V^{-1} = I - W/2 + D W^2 with D = (1 - A / (2B)) / theta^2.
  double d;
  if (theta < kCancellationAngle) {
    const double t2 = theta * theta;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0;
  } else {
    const auto k = rodrigues(theta);
    d = (1.0 - k.a / (2.0 * k.b)) / (theta * theta);
  }
  const Mat3 Vinv = Mat3::Identity() - 0.5 * W + d * W * W;
  Vec6 xi;
  xi << omega, Vinv * trans_;
  return xi;
}

SE3 SE3::inverse() const {
  const SO3 rt = rot_.inverse();
  return SE3(rt, -(rt * trans_));
}

SE3 SE3::operator*(const SE3& other) const {
  return SE3(rot_ * other.rot_, rot_ * other.trans_ + trans_);
}

Mat4 SE3::matrix() const {
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = rot_.matrix();
  T.topRightCorner<3, 1>() = trans_;
  return T;
}

Mat4 se3_hat(const Vec6& xi) {
  Mat4 X = Mat4::Zero();
  X.topLeftCorner<3, 3>() = hat(xi.head<3>());
  X.topRightCorner<3, 1>() = xi.tail<3>();
  return X;
}

Mat6 se3_ad(const Vec6& xi) {
  const Mat3 W = hat(xi.head<3>());
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = W;
  ad.bottomLeftCorner<3, 3>() = hat(xi.tail<3>());
  ad.bottomRightCorner<3, 3>() = W;
  return ad;
}

// ---------------------------------------------------------------------------

GroupDescriptor::GroupDescriptor(std::vector<Factor> factors) : factors_(std::move(factors)) {
  offsets_.reserve(factors_.size());
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::SO3 && f.dim != 3) throw DomainError("SO3 factor must have dim 3");
    if (f.kind == FactorKind::SE3 && f.dim != 6) throw DomainError("SE3 factor must have dim 6");
    if (f.dim < 0) throw DomainError("negative factor dimension");
    offsets_.push_back(dimension_);
    dimension_ += f.dim;
  }
}

GroupDescriptor GroupDescriptor::so3() { return GroupDescriptor({{FactorKind::SO3, 3}}); }
GroupDescriptor GroupDescriptor::se3() { return GroupDescriptor({{FactorKind::SE3, 6}}); }
GroupDescriptor GroupDescriptor::euclidean(int n) {
  return GroupDescriptor({{FactorKind::Euclidean, n}});
}
GroupDescriptor GroupDescriptor::disparity(int n) {
  return GroupDescriptor({{FactorKind::Disparity, n}});
}
GroupDescriptor GroupDescriptor::filter_state(int num_pixels) {
  return GroupDescriptor({{FactorKind::SE3, 6},
                          {FactorKind::Euclidean, 6},
                          {FactorKind::Disparity, num_pixels}});
}

bool GroupDescriptor::operator==(const GroupDescriptor& other) const {
  if (factors_.size() != other.factors_.size()) return false;
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    if (factors_[i].kind != other.factors_[i].kind || factors_[i].dim != other.factors_[i].dim)
      return false;
  }
  return true;
}

namespace {

void require_same(const GroupDescriptor& a, const GroupDescriptor& b) {
  if (!(a == b)) throw DomainError("group elements belong to different groups");
}

void require_dim(const GroupDescriptor& g, const VecX& xi) {
  if (xi.size() != g.dimension()) {
    throw DomainError("tangent vector has length " + std::to_string(xi.size()) +
                      ", group dimension is " + std::to_string(g.dimension()));
  }
}

}  // namespace

GroupElement identity(const GroupDescriptor& g) {
  GroupElement x{g, {}};
  for (const auto& f : g.factors()) {
    switch (f.kind) {
      case FactorKind::SO3: x.factors.emplace_back(SO3::identity()); break;
      case FactorKind::SE3: x.factors.emplace_back(SE3::identity()); break;
      case FactorKind::Euclidean: x.factors.emplace_back(VecX(VecX::Zero(f.dim))); break;
      case FactorKind::Disparity: x.factors.emplace_back(disparity::identity(f.dim)); break;
    }
  }
  return x;
}

GroupElement compose(const GroupElement& a, const GroupElement& b) {
  require_same(a.group, b.group);
  GroupElement out{a.group, {}};
  const auto& fs = a.group.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    switch (fs[i].kind) {
      case FactorKind::SO3:
        out.factors.emplace_back(std::get<SO3>(a.factors[i]) * std::get<SO3>(b.factors[i]));
        break;
      case FactorKind::SE3:
        out.factors.emplace_back(std::get<SE3>(a.factors[i]) * std::get<SE3>(b.factors[i]));
        break;
      case FactorKind::Euclidean:
        out.factors.emplace_back(VecX(std::get<VecX>(a.factors[i]) + std::get<VecX>(b.factors[i])));
        break;
      case FactorKind::Disparity:
        out.factors.emplace_back(
            disparity::compose(std::get<VecX>(a.factors[i]), std::get<VecX>(b.factors[i])));
        break;
    }
  }
  return out;
}

GroupElement inverse(const GroupElement& a) {
  GroupElement out{a.group, {}};
  const auto& fs = a.group.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    switch (fs[i].kind) {
      case FactorKind::SO3: out.factors.emplace_back(std::get<SO3>(a.factors[i]).inverse()); break;
      case FactorKind::SE3: out.factors.emplace_back(std::get<SE3>(a.factors[i]).inverse()); break;
      case FactorKind::Euclidean: out.factors.emplace_back(VecX(-std::get<VecX>(a.factors[i]))); break;
      case FactorKind::Disparity:
        out.factors.emplace_back(disparity::inverse(std::get<VecX>(a.factors[i])));
        break;
    }
  }
  return out;
}

GroupElement exp(const VecX& xi, const GroupDescriptor& g) {
  require_dim(g, xi);
  GroupElement out{g, {}};
  const auto& fs = g.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto seg = xi.segment(g.offset(i), fs[i].dim);
    switch (fs[i].kind) {
      case FactorKind::SO3: out.factors.emplace_back(SO3::exp(Vec3(seg))); break;
      case FactorKind::SE3: out.factors.emplace_back(SE3::exp(Vec6(seg))); break;
      case FactorKind::Euclidean: out.factors.emplace_back(VecX(seg)); break;
      case FactorKind::Disparity: out.factors.emplace_back(disparity::exp(VecX(seg))); break;
    }
  }
  return out;
}

VecX log(const GroupElement& x) {
  const auto& g = x.group;
  VecX xi(g.dimension());
  const auto& fs = g.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    auto seg = xi.segment(g.offset(i), fs[i].dim);
    switch (fs[i].kind) {
      case FactorKind::SO3: seg = std::get<SO3>(x.factors[i]).log(); break;
      case FactorKind::SE3: seg = std::get<SE3>(x.factors[i]).log(); break;
      case FactorKind::Euclidean: seg = std::get<VecX>(x.factors[i]); break;
      case FactorKind::Disparity: seg = disparity::log(std::get<VecX>(x.factors[i])); break;
    }
  }
  return xi;
}

GroupElement retract(const GroupElement& x, const VecX& xi) {
  return compose(x, exp(xi, x.group));
}

// ---------------------------------------------------------------------------

VecX bracket(const GroupDescriptor& g, const VecX& xi, const VecX& eta) {
  require_dim(g, xi);
  require_dim(g, eta);
  VecX out = VecX::Zero(g.dimension());
  const auto& fs = g.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const int o = g.offset(i);
    if (fs[i].kind == FactorKind::SO3) {
      out.segment<3>(o) = Vec3(xi.segment<3>(o)).cross(Vec3(eta.segment<3>(o)));
    } else if (fs[i].kind == FactorKind::SE3) {
      out.segment<6>(o) = se3_ad(xi.segment<6>(o)) * eta.segment<6>(o);
    }
  }
  return out;
}

MatX ad_matrix(const GroupDescriptor& g, const VecX& xi) {
  require_dim(g, xi);
  MatX ad = MatX::Zero(g.dimension(), g.dimension());
  const auto& fs = g.factors();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const int o = g.offset(i);
    if (fs[i].kind == FactorKind::SO3) {
      ad.block<3, 3>(o, o) = hat(xi.segment<3>(o));
    } else if (fs[i].kind == FactorKind::SE3) {
      ad.block<6, 6>(o, o) = se3_ad(xi.segment<6>(o));
    }
  }
  return ad;
}

VecX connection(const GroupDescriptor& g, const VecX& xi, const VecX& eta) {
  // ad*_a b = ad_a^T b under the coordinate metric.
  const MatX ad_xi = ad_matrix(g, xi);
  const MatX ad_eta = ad_matrix(g, eta);
  return 0.5 * (ad_xi * eta - ad_xi.transpose() * eta - ad_eta.transpose() * xi);
}

MatX connection_matrix(const GroupDescriptor& g, const VecX& xi) {
  const Eigen::Index n = g.dimension();
  MatX m(n, n);
  VecX e = VecX::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    m.col(j) = connection(g, xi, e);
    e[j] = 0.0;
  }
  return m;
}

MatX swapped_connection_matrix(const GroupDescriptor& g, const VecX& xi) {
  const Eigen::Index n = g.dimension();
  MatX m(n, n);
  VecX e = VecX::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    m.col(j) = connection(g, e, xi);
    e[j] = 0.0;
  }
  return m;
}

MatX connection_swapped_dual(const GroupDescriptor& g, const VecX& xi) {
  return swapped_connection_matrix(g, xi).transpose();
}

// ---------------------------------------------------------------------------

GroupElement cg_step(const VectorField& field, const GroupElement& x, double h) {
  if (!(h > 0.0)) throw DomainError("cg_step requires a positive step size");
  return cg3_step(x, h, field, [](const GroupElement& p, const VecX& xi) { return retract(p, xi); });
}

}  // namespace mef::lie
