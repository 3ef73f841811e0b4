#pragma once

#include <Eigen/Dense>

#include <functional>
#include <variant>
#include <vector>

#include "mef/errors.hpp"

namespace mef::lie {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Below this rotation angle the Rodrigues/V-matrix coefficients switch to
// their Taylor series.
inline constexpr double kSmallAngle = 1e-8;

// Coefficients that are differences of nearly equal terms ((theta - sin) /
// theta^3 and the V^{-1} coefficient) use their series up to this angle.
inline constexpr double kCancellationAngle = 2e-2;

// log() refuses rotations this close to pi.
inline constexpr double kLogAngleMargin = 1e-6;

Mat3 hat(const Vec3& w);
Vec3 vee(const Mat3& W);

class SO3 {
 public:
  SO3() : rot_(Mat3::Identity()) {}
  explicit SO3(const Mat3& rot) : rot_(rot) {}

  static SO3 identity() { return SO3(); }
  static SO3 exp(const Vec3& omega);

  /// Rotation vector of this element. Throws DomainError when the angle is
  /// within kLogAngleMargin of pi.
  Vec3 log() const;

  SO3 inverse() const { return SO3(rot_.transpose()); }
  SO3 operator*(const SO3& other) const { return SO3(rot_ * other.rot_); }
  Vec3 operator*(const Vec3& p) const { return rot_ * p; }

  double angle() const;
  const Mat3& matrix() const { return rot_; }

 private:
  Mat3 rot_;
};

/// Rigid motion p -> R p + w. Tangent coordinates are ordered (omega, u):
/// rotational part first, then the translational generator.
class SE3 {
 public:
  SE3() = default;
  SE3(const SO3& rot, const Vec3& trans) : rot_(rot), trans_(trans) {}

  static SE3 identity() { return SE3(); }
  static SE3 exp(const Vec6& xi);
  Vec6 log() const;

  SE3 inverse() const;
  SE3 operator*(const SE3& other) const;
  Vec3 operator*(const Vec3& p) const { return rot_ * p + trans_; }

  const SO3& rotation() const { return rot_; }
  const Vec3& translation() const { return trans_; }
  Mat4 matrix() const;

 private:
  SO3 rot_;
  Vec3 trans_ = Vec3::Zero();
};

/// 4x4 matrix form of an se3 coordinate vector.
Mat4 se3_hat(const Vec6& xi);

/// Matrix of ad_xi on se3 coordinates: ad_xi eta = [xi, eta].
Mat6 se3_ad(const Vec6& xi);

// ---------------------------------------------------------------------------
// Product groups.
//
// A descriptor fixes the factor order and the coordinate layout of the
// algebra; every tangent vector of the product is one flat coordinate vector.

enum class FactorKind { SO3, SE3, Euclidean, Disparity };

struct Factor {
  FactorKind kind;
  int dim;
};

class GroupDescriptor {
 public:
  GroupDescriptor() = default;
  explicit GroupDescriptor(std::vector<Factor> factors);

  static GroupDescriptor so3();
  static GroupDescriptor se3();
  static GroupDescriptor euclidean(int n);
  static GroupDescriptor disparity(int n);
  /// SE3 x R^6 x (0,1)^n, the filter state space.
  static GroupDescriptor filter_state(int num_pixels);

  int dimension() const { return dimension_; }
  const std::vector<Factor>& factors() const { return factors_; }
  int offset(std::size_t factor) const { return offsets_.at(factor); }
  bool operator==(const GroupDescriptor& other) const;

 private:
  std::vector<Factor> factors_;
  std::vector<int> offsets_;
  int dimension_ = 0;
};

/// Element of one factor. Euclidean factors hold the vector itself;
/// disparity factors hold values in (0,1).
using FactorElement = std::variant<SO3, SE3, VecX>;

struct GroupElement {
  GroupDescriptor group;
  std::vector<FactorElement> factors;
};

GroupElement identity(const GroupDescriptor& g);
GroupElement compose(const GroupElement& a, const GroupElement& b);
GroupElement inverse(const GroupElement& a);
GroupElement exp(const VecX& xi, const GroupDescriptor& g);
VecX log(const GroupElement& x);
/// x * exp(xi).
GroupElement retract(const GroupElement& x, const VecX& xi);

/// Lie bracket [xi, eta] in coordinates; zero on abelian factors.
VecX bracket(const GroupDescriptor& g, const VecX& xi, const VecX& eta);

/// Matrix of ad_xi.
MatX ad_matrix(const GroupDescriptor& g, const VecX& xi);

/// Levi-Civita connection function of the left-invariant metric given by the
/// coordinate inner product:
///   omega_xi eta = 1/2 ([xi, eta] - ad*_xi eta - ad*_eta xi).
VecX connection(const GroupDescriptor& g, const VecX& xi, const VecX& eta);

/// Matrix of eta -> omega_xi eta.
MatX connection_matrix(const GroupDescriptor& g, const VecX& xi);

/// Matrix of eta -> omega_eta xi, i.e. the connection with its slots swapped.
MatX swapped_connection_matrix(const GroupDescriptor& g, const VecX& xi);

/// Dual of the swapped connection: M with <omega_eta xi, zeta> = <eta, M zeta>.
MatX connection_swapped_dual(const GroupDescriptor& g, const VecX& xi);

// ---------------------------------------------------------------------------
// Crouch-Grossman integration.

/// Three-stage, third order Crouch-Grossman tableau.
struct CG3Tableau {
  static constexpr double a21 = 3.0 / 4.0;
  static constexpr double a31 = 119.0 / 216.0;
  static constexpr double a32 = 17.0 / 108.0;
  static constexpr double b1 = 13.0 / 51.0;
  static constexpr double b2 = -2.0 / 3.0;
  static constexpr double b3 = 24.0 / 17.0;
};

/// One CG3 step of x' = x * field(x). `retract(x, xi)` must return
/// x * exp(xi); `Tangent` must support multiplication by a double. Abelian
/// factors reduce to the explicit Runge-Kutta method with the same tableau.
/// cg3_step with the first stage k1 = field(x) already evaluated.
template <class Point, class Tangent, class Field, class Retract>
Point cg3_step_from(const Point& x, const Tangent& k1, double h, Field&& field, Retract&& retract) {
  using T = CG3Tableau;
  const Point y2 = retract(x, k1 * (h * T::a21));
  const auto k2 = field(y2);
  const Point y3 = retract(retract(x, k1 * (h * T::a31)), k2 * (h * T::a32));
  const auto k3 = field(y3);
  Point out = retract(x, k1 * (h * T::b1));
  out = retract(out, k2 * (h * T::b2));
  return retract(out, k3 * (h * T::b3));
}

/// One CG3 step of x' = x * field(x). `retract(x, xi)` must return
/// x * exp(xi); `Tangent` must support multiplication by a double. Abelian
/// factors reduce to the explicit Runge-Kutta method with the same tableau.
template <class Point, class Field, class Retract>
Point cg3_step(const Point& x, double h, Field&& field, Retract&& retract) {
  return cg3_step_from(x, field(x), h, field, retract);
}

using VectorField = std::function<VecX(const GroupElement&)>;

/// cg3_step on a product group; the result stays on the group.
GroupElement cg_step(const VectorField& field, const GroupElement& x, double h);

}  // namespace mef::lie
