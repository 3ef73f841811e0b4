#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mef/lie.hpp"

namespace mef {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Mask = std::vector<std::uint8_t>;

// Transformed depths at or below this are treated as behind the camera.
inline constexpr double kMinDepth = 1e-12;

/// Regular pixel grid. Pixel coordinates are stored in normalized camera
/// coordinates (intrinsics removed); pixel order is row-major.
class PixelGrid {
 public:
  PixelGrid() = default;
  PixelGrid(int width, int height, const Eigen::Matrix3d& K);

  /// Intrinsics with focal length equal to the width and the principal point
  /// at the image centre.
  static PixelGrid with_default_intrinsics(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(width_) * height_; }
  Eigen::Index index(int col, int row) const { return static_cast<Eigen::Index>(row) * width_ + col; }

  const Eigen::Matrix3d& intrinsics() const { return K_; }
  Vec2 point(Eigen::Index i) const { return coords_.col(i); }
  const Eigen::Matrix2Xd& points() const { return coords_; }

  /// Normalized <-> pixel coordinates.
  Vec2 to_normalized(const Vec2& px) const;
  Vec2 to_pixels(const Vec2& z) const;
  /// Mean focal length; converts normalized distances to pixels.
  double focal() const { return 0.5 * (K_(0, 0) + K_(1, 1)); }
  /// Normalized size of one pixel step along x and y.
  Vec2 spacing() const { return Vec2(1.0 / K_(0, 0), 1.0 / K_(1, 1)); }

  bool operator==(const PixelGrid& other) const {
    return width_ == other.width_ && height_ == other.height_ && K_ == other.K_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  Eigen::Matrix3d K_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix2Xd coords_;
};

/// Per-pixel 2-vectors with a validity mask, in normalized units per frame.
struct FlowField {
  Eigen::Matrix2Xd vectors;
  Mask valid;

  static FlowField zeros(Eigen::Index n);
  Eigen::Index size() const { return vectors.cols(); }
  bool is_valid(Eigen::Index i) const { return valid[static_cast<std::size_t>(i)] != 0; }
};

/// Per-pixel symmetric positive definite weight W_z applied to flow residuals
/// (the inverse of the observation covariance Q_z, possibly attenuated).
struct WeightField {
  std::vector<Mat2> weight;

  static WeightField uniform(Eigen::Index n, const Mat2& w);
  /// W_z = Q_z^{-1}. Throws DomainError when some Q_z is not SPD.
  static WeightField from_covariance(std::span<const Mat2> Q);
  Eigen::Index size() const { return static_cast<Eigen::Index>(weight.size()); }
  /// Multiplies each W_z by a scalar factor.
  void scale(std::span<const double> factors);
};

/// Generalized Charbonnier penalty phi(x) = (x + nu)^beta - nu^beta, or the
/// plain identity penalty of the quadratic energy.
struct Penalty {
  enum class Kind { Charbonnier, Quadratic };
  Kind kind = Kind::Charbonnier;
  double nu = 1e-3;
  double beta = 0.5;

  static Penalty charbonnier(double nu, double beta);
  static Penalty quadratic();

  double value(double x) const;
  double deriv(double x) const;
  double deriv2(double x) const;
};

double charbonnier(double x, double nu, double beta);
double charbonnier_deriv(double x, double nu, double beta);

/// (p1/p3, p2/p3). Throws DomainError when |p3| <= 1e-12.
Vec2 project(const lie::Vec3& p);

/// Flow induced by a camera motion and a disparity map:
///   u(z) = pi(R (z,1) / d(z) + w) - z.
/// Pixels whose transformed depth is <= kMinDepth are marked invalid.
FlowField induced_flow(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid);

/// Sum over valid pixels of phi(1/2 e^T W e), e = y - induced flow.
double measurement_energy(const lie::SE3& E, const Eigen::VectorXd& d, const FlowField& y,
                          const WeightField& W, const Penalty& phi, const PixelGrid& grid);

/// Attenuation min(1, |z - e|^2 / rho^2) around the epipole e = pi(w).
/// All ones for a vanishing translation or an epipole at infinity.
std::vector<double> epipole_weight(const PixelGrid& grid, const lie::SE3& E, double rho);

/// Epipole pi(w), if it is finite.
std::optional<Vec2> epipole(const lie::SE3& E);

/// Pairwise (cascade) summation in a fixed order.
double pairwise_sum(std::span<const double> values);

/// Residual model of one pixel and its derivatives along the left-invariant
/// directions (omega, u, theta), where theta is the disparity-group coordinate
/// of the pixel. Second derivatives are ordered: second(a)(:, b) is the
/// derivative along a of the derivative along b.
struct PixelJet {
  bool valid = false;
  Vec2 h = Vec2::Zero();                      // predicted flow
  Eigen::Matrix<double, 2, 7> J;              // dh
  std::array<Eigen::Matrix<double, 2, 7>, 7> second;
};

/// Evaluates the predicted flow of pixel z with disparity d and, when
/// `with_second` is set, its second derivatives.
PixelJet pixel_jet(const lie::SE3& E, double d, const Vec2& z, bool with_second);

}  // namespace mef
