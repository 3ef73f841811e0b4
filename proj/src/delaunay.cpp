#include "mef/delaunay.hpp"

#include <algorithm>
#include <numeric>

#include "mef/errors.hpp"

namespace mef {

using Eigen::Vector2d;

double orient2d(const Vector2d& a, const Vector2d& b, const Vector2d& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

double incircle(const Vector2d& a, const Vector2d& b, const Vector2d& c, const Vector2d& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

namespace {

struct WorkTri {
  std::array<int, 3> v;
  std::array<int, 3> nb;
  bool alive = true;
};

// Edge opposite v[e] runs from v[e+1] to v[e+2].
inline int next(int e) { return e == 2 ? 0 : e + 1; }
inline int prev(int e) { return e == 0 ? 2 : e - 1; }

class Builder {
 public:
  explicit Builder(const std::vector<Vector2d>& input) : pts_(input) {
    n_ = static_cast<int>(input.size());
    Vector2d lo = input.front(), hi = input.front();
    for (const auto& p : input) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vector2d c = 0.5 * (lo + hi);
    const double L = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1.0});
    pts_.push_back(c + Vector2d(-40.0 * L, -30.0 * L));
    pts_.push_back(c + Vector2d(40.0 * L, -30.0 * L));
    pts_.push_back(c + Vector2d(0.0, 40.0 * L));
    tris_.push_back({{n_, n_ + 1, n_ + 2}, {-1, -1, -1}, true});
  }

  void insert(int p) {
    const int t0 = walk(p);
    if (t0 < 0) return;
    for (int k : tris_[t0].v) {
      if (pts_[k] == pts_[p]) return;  // duplicate point
    }
    collect_cavity(t0, p);
    retriangulate(p);
    last_ = static_cast<int>(tris_.size()) - 1;
  }

  std::vector<Delaunay::Triangle> finish() const {
    std::vector<int> remap(tris_.size(), -1);
    int count = 0;
    for (std::size_t i = 0; i < tris_.size(); ++i) {
      const auto& t = tris_[i];
      if (!t.alive) continue;
      if (t.v[0] >= n_ || t.v[1] >= n_ || t.v[2] >= n_) continue;
      remap[i] = count++;
    }
    std::vector<Delaunay::Triangle> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < tris_.size(); ++i) {
      if (remap[i] < 0) continue;
      Delaunay::Triangle t{tris_[i].v, tris_[i].nb};
      for (int& nb : t.nb) nb = nb >= 0 ? remap[static_cast<std::size_t>(nb)] : -1;
      out.push_back(t);
    }
    return out;
  }

 private:
  int walk(int p) const {
    const Vector2d& q = pts_[p];
    int t = last_;
    const std::size_t limit = tris_.size() + 16;
    for (std::size_t step = 0; step < limit; ++step) {
      const auto& tri = tris_[static_cast<std::size_t>(t)];
      int moved = -1;
      for (int e = 0; e < 3; ++e) {
        const Vector2d& a = pts_[tri.v[next(e)]];
        const Vector2d& b = pts_[tri.v[prev(e)]];
        if (orient2d(a, b, q) < 0.0 && tri.nb[e] >= 0) {
          moved = tri.nb[e];
          break;
        }
      }
      if (moved < 0) return t;
      t = moved;
    }
    // Fall back to a scan; only reached on degenerate input.
    for (std::size_t i = 0; i < tris_.size(); ++i) {
      const auto& tri = tris_[i];
      if (!tri.alive) continue;
      bool inside = true;
      for (int e = 0; e < 3 && inside; ++e) {
        inside = orient2d(pts_[tri.v[next(e)]], pts_[tri.v[prev(e)]], q) >= 0.0;
      }
      if (inside) return static_cast<int>(i);
    }
    return -1;
  }

  bool conflicts(int t, int p) const {
    const auto& tri = tris_[static_cast<std::size_t>(t)];
    return incircle(pts_[tri.v[0]], pts_[tri.v[1]], pts_[tri.v[2]], pts_[p]) > 0.0;
  }

  void collect_cavity(int t0, int p) {
    cavity_.clear();
    cavity_.push_back(t0);
    in_cavity_.resize(tris_.size(), 0);
    in_cavity_[static_cast<std::size_t>(t0)] = 1;
    for (std::size_t i = 0; i < cavity_.size(); ++i) {
      const auto& tri = tris_[static_cast<std::size_t>(cavity_[i])];
      for (int nb : tri.nb) {
        if (nb < 0 || in_cavity_[static_cast<std::size_t>(nb)]) continue;
        if (conflicts(nb, p)) {
          in_cavity_[static_cast<std::size_t>(nb)] = 1;
          cavity_.push_back(nb);
        }
      }
    }
    // The cavity must be star-shaped from p. Rounding on nearly co-circular
    // points can break that; drop offending triangles until it holds.
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 1; i < cavity_.size(); ++i) {
        const int t = cavity_[i];
        if (!in_cavity_[static_cast<std::size_t>(t)]) continue;
        const auto& tri = tris_[static_cast<std::size_t>(t)];
        for (int e = 0; e < 3; ++e) {
          const int nb = tri.nb[e];
          if (nb >= 0 && in_cavity_[static_cast<std::size_t>(nb)]) continue;
          if (orient2d(pts_[tri.v[next(e)]], pts_[tri.v[prev(e)]], pts_[p]) <= 0.0) {
            in_cavity_[static_cast<std::size_t>(t)] = 0;
            changed = true;
            break;
          }
        }
      }
    }
    std::erase_if(cavity_, [&](int t) { return !in_cavity_[static_cast<std::size_t>(t)]; });
  }

  void retriangulate(int p) {
    struct Edge {
      int a, b, outside, tri;
    };
    std::vector<Edge> boundary;
    for (int t : cavity_) {
      const auto& tri = tris_[static_cast<std::size_t>(t)];
      for (int e = 0; e < 3; ++e) {
        const int nb = tri.nb[e];
        if (nb >= 0 && in_cavity_[static_cast<std::size_t>(nb)]) continue;
        boundary.push_back({tri.v[next(e)], tri.v[prev(e)], nb, -1});
      }
    }
    for (int t : cavity_) {
      tris_[static_cast<std::size_t>(t)].alive = false;
      in_cavity_[static_cast<std::size_t>(t)] = 0;
    }
    for (auto& e : boundary) {
      e.tri = static_cast<int>(tris_.size());
      // Triangle (a, b, p): edge opposite p is (a, b).
      tris_.push_back({{e.a, e.b, p}, {-1, -1, e.outside}, true});
      if (e.outside >= 0) {
        auto& o = tris_[static_cast<std::size_t>(e.outside)];
        for (int k = 0; k < 3; ++k) {
          if (o.v[next(k)] == e.b && o.v[prev(k)] == e.a) o.nb[k] = e.tri;
        }
      }
    }
    // Link the fan: the edge (b, p) of (a, b, p) is shared with the triangle
    // whose boundary edge starts at b.
    for (const auto& e : boundary) {
      auto& t = tris_[static_cast<std::size_t>(e.tri)];
      for (const auto& f : boundary) {
        if (f.a == e.b) t.nb[0] = f.tri;  // opposite a: edge (b, p)
        if (f.b == e.a) t.nb[1] = f.tri;  // opposite b: edge (p, a)
      }
    }
    in_cavity_.resize(tris_.size(), 0);
  }

  std::vector<Vector2d> pts_;
  std::vector<WorkTri> tris_;
  std::vector<int> cavity_;
  std::vector<char> in_cavity_;
  int n_ = 0;
  int last_ = 0;
};

}  // namespace

Delaunay::Delaunay(std::vector<Vector2d> points) : pts_(std::move(points)) {
  if (pts_.size() < 3) throw DataError("Delaunay triangulation needs at least three points");
  std::vector<int> order(pts_.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& pa = pts_[static_cast<std::size_t>(a)];
    const auto& pb = pts_[static_cast<std::size_t>(b)];
    return pa.x() < pb.x() || (pa.x() == pb.x() && (pa.y() < pb.y() || (pa.y() == pb.y() && a < b)));
  });
  Builder builder(pts_);
  for (int i : order) builder.insert(i);
  tris_ = builder.finish();
}

std::optional<Delaunay::Location> Delaunay::locate(const Vector2d& q, int hint) const {
  if (tris_.empty()) return std::nullopt;
  auto bary = [&](const Triangle& t) {
    const Vector2d& a = pts_[static_cast<std::size_t>(t.v[0])];
    const Vector2d& b = pts_[static_cast<std::size_t>(t.v[1])];
    const Vector2d& c = pts_[static_cast<std::size_t>(t.v[2])];
    const double area = orient2d(a, b, c);
    return Eigen::Vector3d(orient2d(b, c, q) / area, orient2d(c, a, q) / area,
                           orient2d(a, b, q) / area);
  };
  int t = std::clamp(hint, 0, static_cast<int>(tris_.size()) - 1);
  const std::size_t limit = tris_.size() + 16;
  for (std::size_t step = 0; step < limit; ++step) {
    const auto& tri = tris_[static_cast<std::size_t>(t)];
    int worst = -1;
    double worst_val = 0.0;
    for (int e = 0; e < 3; ++e) {
      const double o = orient2d(pts_[static_cast<std::size_t>(tri.v[next(e)])],
                                pts_[static_cast<std::size_t>(tri.v[prev(e)])], q);
      if (o < worst_val) {
        worst_val = o;
        worst = e;
      }
    }
    if (worst < 0) return Location{t, bary(tri)};
    if (tri.nb[worst] < 0) return std::nullopt;
    t = tri.nb[worst];
  }
  for (std::size_t i = 0; i < tris_.size(); ++i) {
    const Eigen::Vector3d b = bary(tris_[i]);
    if (b.minCoeff() >= 0.0) return Location{static_cast<int>(i), b};
  }
  return std::nullopt;
}

std::vector<std::vector<int>> Delaunay::vertex_neighbours() const {
  std::vector<std::vector<int>> nb(pts_.size());
  for (const auto& t : tris_) {
    for (int e = 0; e < 3; ++e) {
      const int a = t.v[static_cast<std::size_t>(e)];
      const int b = t.v[static_cast<std::size_t>(next(e))];
      nb[static_cast<std::size_t>(a)].push_back(b);
      nb[static_cast<std::size_t>(b)].push_back(a);
    }
  }
  for (auto& n : nb) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nb;
}

}  // namespace mef
