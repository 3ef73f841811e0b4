#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "mef/delaunay.hpp"
#include "mef/lie.hpp"
#include "mef/observation.hpp"

namespace mef {

/// C1 cubic interpolation of scattered samples: Delaunay triangulation plus a
/// Clough-Tocher macro element per triangle. Vertex gradients come from local
/// quadratic least-squares fits over the two-ring of each vertex.
class CloughTocherInterpolator {
 public:
  /// `points` in pixel units. Triangles with an edge longer than `max_edge`
  /// are treated as holes.
  CloughTocherInterpolator(std::vector<Eigen::Vector2d> points, double max_edge);

  std::size_t num_points() const { return points_.size(); }
  const Delaunay& triangulation() const { return tri_; }

  struct Result {
    Eigen::MatrixXd values;  // one row per field, one column per query
    Mask valid;
  };

  /// Interpolates each row of `samples` (fields x points) at the queries.
  Result interpolate(const Eigen::MatrixXd& samples, const Eigen::Matrix2Xd& queries) const;

  /// Vertex gradients of one field (2 x points).
  Eigen::Matrix2Xd gradients(const Eigen::VectorXd& field) const;

 private:
  struct GradientStencil {
    std::vector<int> neighbours;
    Eigen::Matrix<double, 2, Eigen::Dynamic> weights;  // applied to f_n - f_v
  };

  std::vector<Eigen::Vector2d> points_;
  Delaunay tri_;
  std::vector<char> usable_;  // per triangle
  std::vector<GradientStencil> stencils_;
};

/// Evaluates the Clough-Tocher patch of one triangle at barycentric
/// coordinates `bary`, given vertex positions, values and gradients.
double clough_tocher_eval(const std::array<Eigen::Vector2d, 3>& p, const std::array<double, 3>& f,
                          const std::array<Eigen::Vector2d, 3>& g, const Eigen::Vector3d& bary);

/// Regular grid warped into the next camera.
struct WarpedGrid {
  Eigen::Matrix2Xd positions;        // z~ in normalized coordinates
  Eigen::VectorXd source_disparity;  // d(z)
  Mask valid;
};

/// z~ = pi(R (z,1) / d(z) + w). Invalid where the transformed depth is
/// <= kMinDepth or z~ leaves the grid's bounding box inflated by two pixels.
WarpedGrid warp_grid(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid);

struct InterpolatedField {
  Eigen::VectorXd values;
  Mask valid;
};

/// Resamples the warped disparities at the regular grid nodes. Throws
/// NumericalError with fewer than 16 valid samples.
InterpolatedField scattered_interpolate(const WarpedGrid& w, const PixelGrid& grid);

struct PropagationResult {
  Eigen::VectorXd disparity;
  Mask valid;
  /// Extra per-pixel fields carried along with the disparity (fields x pixels).
  Eigen::MatrixXd carried;
};

/// Discrete propagation of a disparity map into the next camera: warp the
/// grid, interpolate the source pixel position and disparity at the new
/// nodes, back-project and move the points into the next camera, and read off
/// the new disparity. Pixels that cannot be resampled keep their previous
/// disparity and are flagged in `valid`. Rows of `carried` (fields x pixels)
/// are resampled the same way; invalid pixels keep their previous values.
PropagationResult propagate(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid,
                            const Eigen::MatrixXd& carried = Eigen::MatrixXd());

}  // namespace mef
