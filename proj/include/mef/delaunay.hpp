#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <vector>

namespace mef {

/// Incremental (Bowyer-Watson) Delaunay triangulation of a planar point set.
/// Points are inserted in lexicographic (x, y) order, which fixes the choice
/// of diagonal for co-circular configurations.
class Delaunay {
 public:
  struct Triangle {
    std::array<int, 3> v;   // counter-clockwise vertex indices
    std::array<int, 3> nb;  // neighbour across the edge opposite v[i], -1 on the hull
  };

  struct Location {
    int triangle;
    Eigen::Vector3d bary;
  };

  explicit Delaunay(std::vector<Eigen::Vector2d> points);

  const std::vector<Eigen::Vector2d>& points() const { return pts_; }
  const std::vector<Triangle>& triangles() const { return tris_; }

  /// Triangle containing q with barycentric coordinates, or nullopt outside
  /// the hull. `hint` is a triangle to start the walk from.
  std::optional<Location> locate(const Eigen::Vector2d& q, int hint = 0) const;

  /// Vertices sharing an edge with each vertex.
  std::vector<std::vector<int>> vertex_neighbours() const;

 private:
  std::vector<Eigen::Vector2d> pts_;
  std::vector<Triangle> tris_;
};

double orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c);
/// Positive when d lies strictly inside the circumcircle of the CCW triangle abc.
double incircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                const Eigen::Vector2d& d);

}  // namespace mef
