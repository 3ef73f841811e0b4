#include "mef/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mef/disparity_group.hpp"
#include "mef/errors.hpp"

namespace mef {

using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr int kMinSamples = 16;
constexpr double kMaxEdgePixels = 3.0;
constexpr double kBoxMarginPixels = 2.0;

}  // namespace

// ---------------------------------------------------------------------------
// Clough-Tocher element.
//
// The triangle (P0, P1, P2) is split at its centroid C into the sub-triangles
// T_k = (P_{k+1}, P_{k+2}, C). Each carries a cubic Bezier patch; the control
// points next to the vertices follow from the vertex gradients, the one in
// the middle of each outer edge from requiring a linear normal derivative
// along that edge, and the inner ones from C1 continuity across the split.

double clough_tocher_eval(const std::array<Vector2d, 3>& p, const std::array<double, 3>& f,
                          const std::array<Vector2d, 3>& g, const Vector3d& bary) {
  const Vector2d C = (p[0] + p[1] + p[2]) / 3.0;

  double e[3][3];  // e[i][j]: edge point next to P_i towards P_j
  double c[3];     // point next to P_i towards C
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) e[i][j] = f[i] + g[i].dot(p[j] - p[i]) / 3.0;
    }
    c[i] = f[i] + g[i].dot(C - p[i]) / 3.0;
  }

  double m[3];  // interior point of T_k
  for (int k = 0; k < 3; ++k) {
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    const Vector2d t = p[j] - p[i];
    const Vector2d mid = 0.5 * (p[i] + p[j]);
    const double tau = (C - mid).dot(t) / t.squaredNorm();
    // Normal direction in barycentric coordinates of (P_i, P_j, C).
    const double a1 = -0.5 + tau, a2 = -0.5 - tau;
    const double d20 = a1 * f[i] + a2 * e[i][j] + c[i];
    const double d02 = a1 * e[j][i] + a2 * f[j] + c[j];
    m[k] = 0.5 * (d20 + d02) - a1 * e[i][j] - a2 * e[j][i];
  }

  double q[3];  // point on P_i C at two thirds towards C
  for (int i = 0; i < 3; ++i) {
    q[i] = (c[i] + m[(i + 1) % 3] + m[(i + 2) % 3]) / 3.0;
  }
  const double centre = (q[0] + q[1] + q[2]) / 3.0;

  int k = 0;
  if (bary[1] < bary[k]) k = 1;
  if (bary[2] < bary[k]) k = 2;
  const int i = (k + 1) % 3, j = (k + 2) % 3;
  const double u = bary[i] - bary[k];
  const double v = bary[j] - bary[k];
  const double w = 3.0 * bary[k];

  const double u2 = u * u, v2 = v * v, w2 = w * w;
  return f[i] * u2 * u + f[j] * v2 * v + centre * w2 * w +
         3.0 * (e[i][j] * u2 * v + e[j][i] * u * v2 + c[i] * u2 * w + q[i] * u * w2 +
                c[j] * v2 * w + q[j] * v * w2) +
         6.0 * m[k] * u * v * w;
}

// ---------------------------------------------------------------------------

CloughTocherInterpolator::CloughTocherInterpolator(std::vector<Vector2d> points, double max_edge)
    : points_(std::move(points)), tri_(points_) {
  const auto& tris = tri_.triangles();
  usable_.resize(tris.size());
  const double max2 = max_edge * max_edge;
  std::vector<std::vector<int>> short_nb(points_.size());
  for (std::size_t t = 0; t < tris.size(); ++t) {
    bool ok = true;
    for (int e = 0; e < 3; ++e) {
      const int a = tris[t].v[static_cast<std::size_t>(e)];
      const int b = tris[t].v[static_cast<std::size_t>((e + 1) % 3)];
      const double len2 = (points_[static_cast<std::size_t>(a)] - points_[static_cast<std::size_t>(b)]).squaredNorm();
      if (len2 > max2) {
        ok = false;
      } else {
        short_nb[static_cast<std::size_t>(a)].push_back(b);
        short_nb[static_cast<std::size_t>(b)].push_back(a);
      }
    }
    usable_[t] = ok ? 1 : 0;
  }
  for (auto& n : short_nb) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }

  stencils_.resize(points_.size());
  for (std::size_t v = 0; v < points_.size(); ++v) {
    std::vector<int> ring = short_nb[v];
    for (int a : short_nb[v]) {
      const auto& second = short_nb[static_cast<std::size_t>(a)];
      ring.insert(ring.end(), second.begin(), second.end());
    }
    std::sort(ring.begin(), ring.end());
    ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
    std::erase(ring, static_cast<int>(v));

    auto& st = stencils_[v];
    st.neighbours = ring;
    const auto k = static_cast<Eigen::Index>(ring.size());
    st.weights = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, k);
    if (k < 2) continue;
    Eigen::MatrixXd A(k, 5);
    for (Eigen::Index r = 0; r < k; ++r) {
      const Vector2d d = points_[static_cast<std::size_t>(ring[static_cast<std::size_t>(r)])] - points_[v];
      A.row(r) << d.x(), d.y(), 0.5 * d.x() * d.x(), d.x() * d.y(), 0.5 * d.y() * d.y();
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> quad(A);
    if (k >= 5 && quad.rank() == 5) {
      st.weights = quad.pseudoInverse().topRows<2>();
      continue;
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> lin(A.leftCols<2>());
    if (lin.rank() == 2) st.weights = lin.pseudoInverse();
  }
}

Eigen::Matrix2Xd CloughTocherInterpolator::gradients(const Eigen::VectorXd& field) const {
  Eigen::Matrix2Xd g = Eigen::Matrix2Xd::Zero(2, static_cast<Eigen::Index>(points_.size()));
  for (std::size_t v = 0; v < points_.size(); ++v) {
    const auto& st = stencils_[v];
    Vector2d acc = Vector2d::Zero();
    for (std::size_t r = 0; r < st.neighbours.size(); ++r) {
      acc += st.weights.col(static_cast<Eigen::Index>(r)) *
             (field[st.neighbours[r]] - field[static_cast<Eigen::Index>(v)]);
    }
    g.col(static_cast<Eigen::Index>(v)) = acc;
  }
  return g;
}

CloughTocherInterpolator::Result CloughTocherInterpolator::interpolate(
    const Eigen::MatrixXd& samples, const Eigen::Matrix2Xd& queries) const {
  if (samples.cols() != static_cast<Eigen::Index>(points_.size())) {
    throw DataError("sample count does not match the interpolation points");
  }
  const Eigen::Index nf = samples.rows();
  std::vector<Eigen::Matrix2Xd> grads;
  grads.reserve(static_cast<std::size_t>(nf));
  for (Eigen::Index r = 0; r < nf; ++r) grads.push_back(gradients(samples.row(r).transpose()));

  Result out{Eigen::MatrixXd::Zero(nf, queries.cols()), Mask(static_cast<std::size_t>(queries.cols()), 0)};
  const auto& tris = tri_.triangles();
  int hint = 0;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    const auto loc = tri_.locate(queries.col(q), hint);
    if (!loc) continue;
    hint = loc->triangle;
    if (!usable_[static_cast<std::size_t>(loc->triangle)]) continue;
    const auto& t = tris[static_cast<std::size_t>(loc->triangle)];
    out.valid[static_cast<std::size_t>(q)] = 1;

    // Queries on a vertex take the sample itself.
    int on_vertex = -1;
    for (int k = 0; k < 3; ++k) {
      if ((points_[static_cast<std::size_t>(t.v[static_cast<std::size_t>(k)])] - Vector2d(queries.col(q))).norm() <= 1e-12) {
        on_vertex = t.v[static_cast<std::size_t>(k)];
      }
    }
    if (on_vertex >= 0) {
      out.values.col(q) = samples.col(on_vertex);
      continue;
    }

    std::array<Vector2d, 3> p;
    for (int k = 0; k < 3; ++k) p[static_cast<std::size_t>(k)] = points_[static_cast<std::size_t>(t.v[static_cast<std::size_t>(k)])];
    for (Eigen::Index r = 0; r < nf; ++r) {
      std::array<double, 3> f;
      std::array<Vector2d, 3> g;
      for (std::size_t k = 0; k < 3; ++k) {
        f[k] = samples(r, t.v[k]);
        g[k] = grads[static_cast<std::size_t>(r)].col(t.v[k]);
      }
      out.values(r, q) = clough_tocher_eval(p, f, g, loc->bary);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

WarpedGrid warp_grid(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid) {
  if (d.size() != grid.size()) throw DataError("disparity map does not match the pixel grid");
  const Eigen::Index n = grid.size();
  WarpedGrid out{Eigen::Matrix2Xd(2, n), d, Mask(static_cast<std::size_t>(n), 0)};
  const bool identity = E.rotation().matrix() == lie::Mat3::Identity() && E.translation().isZero(0.0);

  const Vector2d sp = grid.spacing();
  const Vector2d lo = grid.points().rowwise().minCoeff() - kBoxMarginPixels * sp;
  const Vector2d hi = grid.points().rowwise().maxCoeff() + kBoxMarginPixels * sp;
  const lie::Mat3& R = E.rotation().matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector2d z = grid.point(i);
    if (!(d[i] > 0.0 && d[i] < 1.0)) continue;
    if (identity) {
      out.positions.col(i) = z;
      out.valid[static_cast<std::size_t>(i)] = 1;
      continue;
    }
    const Vector3d X = R * Vector3d(z.x(), z.y(), 1.0) / d[i] + E.translation();
    if (X.z() <= kMinDepth) continue;
    const Vector2d zt(X.x() / X.z(), X.y() / X.z());
    out.positions.col(i) = zt;
    if ((zt.array() < lo.array()).any() || (zt.array() > hi.array()).any()) continue;
    out.valid[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

namespace {

struct Resampled {
  Eigen::MatrixXd values;
  Mask valid;
};

Resampled resample(const WarpedGrid& w, const PixelGrid& grid, const Eigen::MatrixXd& fields) {
  std::vector<Vector2d> pts;
  std::vector<Eigen::Index> ids;
  for (Eigen::Index i = 0; i < w.positions.cols(); ++i) {
    if (!w.valid[static_cast<std::size_t>(i)]) continue;
    pts.push_back(grid.to_pixels(w.positions.col(i)));
    ids.push_back(i);
  }
  if (static_cast<int>(pts.size()) < kMinSamples) {
    throw NumericalError("scattered interpolation needs at least " + std::to_string(kMinSamples) +
                         " valid samples, got " + std::to_string(pts.size()));
  }
  Eigen::MatrixXd samples(fields.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) samples.col(static_cast<Eigen::Index>(k)) = fields.col(ids[k]);

  Eigen::Matrix2Xd nodes(2, grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) nodes.col(i) = grid.to_pixels(grid.point(i));

  const CloughTocherInterpolator interp(std::move(pts), kMaxEdgePixels);
  auto r = interp.interpolate(samples, nodes);
  return {std::move(r.values), std::move(r.valid)};
}

}  // namespace

InterpolatedField scattered_interpolate(const WarpedGrid& w, const PixelGrid& grid) {
  const Eigen::MatrixXd fields = w.source_disparity.transpose();
  auto r = resample(w, grid, fields);
  return {r.values.row(0).transpose(), std::move(r.valid)};
}

PropagationResult propagate(const lie::SE3& E, const Eigen::VectorXd& d, const PixelGrid& grid,
                            const Eigen::MatrixXd& carried) {
  const Eigen::Index n = grid.size();
  if (carried.size() != 0 && carried.cols() != n) {
    throw DataError("carried fields do not match the pixel grid");
  }
  const WarpedGrid w = warp_grid(E, d, grid);

  // Source position and disparity of every warped point, then extra fields.
  Eigen::MatrixXd fields(3 + carried.rows(), n);
  fields.topRows<2>() = grid.points();
  fields.row(2) = d.transpose();
  if (carried.rows() > 0) fields.bottomRows(carried.rows()) = carried;

  const Resampled r = resample(w, grid, fields);

  PropagationResult out{d, Mask(static_cast<std::size_t>(n), 0), carried};
  const lie::Mat3& R = E.rotation().matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!r.valid[static_cast<std::size_t>(i)]) continue;
    const double src_d = r.values(2, i);
    if (!(src_d > 0.0)) continue;
    // Back-project the source pixel with its disparity, move the point into
    // the next camera and read off its inverse depth. Scaled by d so that the
    // identity motion reproduces d exactly.
    const double depth_scaled =
        (R * Vector3d(r.values(0, i), r.values(1, i), 1.0) + E.translation() * src_d).z();
    if (depth_scaled <= kMinDepth) continue;
    out.disparity[i] = disparity::clamp(src_d / depth_scaled);
    if (carried.rows() > 0) out.carried.col(i) = r.values.bottomRows(carried.rows()).col(i);
    out.valid[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

}  // namespace mef
