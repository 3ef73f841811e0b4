#include "mef/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "mef/errors.hpp"

namespace mef {

using Eigen::Index;
using Eigen::VectorXd;

double Surface::height(double X, double Y) const {
  switch (kind) {
    case Kind::Plane:
      return depth;
    case Kind::SlantedPlane:
      return depth + slope_x * X + slope_y * Y;
    case Kind::SinusoidalRelief: {
      const double k = 2.0 * std::numbers::pi / wavelength;
      return depth + amplitude * std::sin(k * X) * std::sin(k * Y);
    }
  }
  return depth;
}

Eigen::Vector2d Surface::gradient(double X, double Y) const {
  switch (kind) {
    case Kind::Plane:
      return Eigen::Vector2d::Zero();
    case Kind::SlantedPlane:
      return Eigen::Vector2d(slope_x, slope_y);
    case Kind::SinusoidalRelief: {
      const double k = 2.0 * std::numbers::pi / wavelength;
      return amplitude * k *
             Eigen::Vector2d(std::cos(k * X) * std::sin(k * Y), std::sin(k * X) * std::cos(k * Y));
    }
  }
  return Eigen::Vector2d::Zero();
}

lie::SE3 SyntheticScene::relative_motion(int k) const {
  if (twists.empty()) return lie::SE3::identity();
  if (twists.size() == 1) return lie::SE3::exp(twists.front());
  if (k < 0 || static_cast<std::size_t>(k) >= twists.size()) {
    throw DataError("trajectory has no twist for frame " + std::to_string(k));
  }
  return lie::SE3::exp(twists[static_cast<std::size_t>(k)]);
}

namespace {

// First intersection of the ray o + s r (s > 0) with the surface: march to a
// sign change of g(s) = Z(s) - F(X(s), Y(s)), then bisect.
std::optional<double> intersect(const Surface& surf, const lie::Vec3& o, const lie::Vec3& r) {
  auto g = [&](double s) {
    const lie::Vec3 p = o + s * r;
    return p.z() - surf.height(p.x(), p.y());
  };
  const double reach = 4.0 * (std::abs(surf.depth) + std::abs(surf.amplitude) + o.norm()) + 10.0;
  const double step = 0.01;
  double s0 = 1e-6;
  double g0 = g(s0);
  if (g0 >= 0.0) return std::nullopt;  // camera below the surface
  for (double s1 = s0 + step; s1 <= reach; s1 += step) {
    const double g1 = g(s1);
    if (g1 >= 0.0) {
      double lo = s0, hi = s1;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) < 0.0) lo = mid; else hi = mid;
      }
      return 0.5 * (lo + hi);
    }
    s0 = s1;
    g0 = g1;
  }
  return std::nullopt;
}

}  // namespace

VectorXd ray_cast_disparity(const Surface& s, const lie::SE3& pose, const PixelGrid& grid) {
  VectorXd d(grid.size());
  const lie::Mat3& R = pose.rotation().matrix();
  for (Index i = 0; i < grid.size(); ++i) {
    const Vec2 z = grid.point(i);
    const lie::Vec3 r = R * lie::Vec3(z.x(), z.y(), 1.0);
    const auto depth = intersect(s, pose.translation(), r);
    if (!depth) throw DataError("ray of pixel " + std::to_string(i) + " misses the surface");
    if (*depth <= 1.0) {
      throw DataError("scene depth " + std::to_string(*depth) + " <= 1 at pixel " + std::to_string(i));
    }
    d[i] = 1.0 / *depth;
  }
  return d;
}

Sequence generate_sequence(const SyntheticScene& scene, int n_frames) {
  if (n_frames < 1) throw DataError("sequence needs at least one frame");
  Sequence seq;
  lie::SE3 pose = lie::SE3::identity();
  seq.pose.push_back(pose);
  seq.disparity.push_back(ray_cast_disparity(scene.surface, pose, scene.grid));
  for (int k = 0; k < n_frames; ++k) {
    const lie::SE3 E = scene.relative_motion(k);
    pose = pose * E.inverse();
    seq.motion.push_back(E);
    seq.pose.push_back(pose);
    seq.disparity.push_back(ray_cast_disparity(scene.surface, pose, scene.grid));
    const auto ks = static_cast<std::size_t>(k);
    seq.forward.push_back(induced_flow(E, seq.disparity[ks], scene.grid));
    seq.backward.push_back(induced_flow(E.inverse(), seq.disparity[ks + 1], scene.grid));
  }
  return seq;
}

FlowField add_noise(const FlowField& flow, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw DomainError("noise sigma must be non-negative");
  FlowField out = flow;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (Index i = 0; i < out.size(); ++i) {
    const double a = n(rng);
    const double b = n(rng);
    if (!out.is_valid(i)) continue;
    out.vectors(0, i) += a;
    out.vectors(1, i) += b;
  }
  return out;
}

FlowField inject_outliers(const FlowField& flow, double fraction, double magnitude,
                          std::uint64_t seed, std::vector<Index>* chosen) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("outlier fraction must lie in [0, 1]");
  FlowField out = flow;
  const Index n = flow.size();
  const auto count = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit draw so the subset does not depend
  // on the standard library's shuffle.
  for (Index k = 0; k < count; ++k) {
    const auto span = static_cast<std::uint64_t>(n - k);
    const auto j = k + static_cast<Index>(rng() % span);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  for (Index i : idx) {
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    out.vectors.col(i) = magnitude * Vec2(std::cos(angle), std::sin(angle));
    out.valid[static_cast<std::size_t>(i)] = 1;
  }
  if (chosen) *chosen = idx;
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double median_flow_magnitude(const FlowField& flow) {
  std::vector<double> m;
  for (Index i = 0; i < flow.size(); ++i) {
    if (flow.is_valid(i)) m.push_back(flow.vectors.col(i).norm());
  }
  return m.empty() ? 0.0 : median(std::move(m));
}

Mask fb_consistency_mask(const FlowField& forward, const FlowField& backward,
                         const PixelGrid& grid, double tau) {
  const Index n = grid.size();
  if (forward.size() != n || backward.size() != n) throw DataError("flow sizes do not match the grid");
  Mask out(static_cast<std::size_t>(n), 0);
  const int W = grid.width(), H = grid.height();
  for (Index i = 0; i < n; ++i) {
    if (!forward.is_valid(i)) continue;
    const Vec2 z = grid.point(i);
    const Vec2 u = forward.vectors.col(i);
    const Vec2 px = grid.to_pixels(z + u);
    const double fx = std::floor(px.x()), fy = std::floor(px.y());
    if (!(fx >= 0.0 && fy >= 0.0 && fx <= W - 1 && fy <= H - 1)) continue;
    const int c0 = static_cast<int>(fx), r0 = static_cast<int>(fy);
    const int c1 = std::min(c0 + 1, W - 1), r1 = std::min(r0 + 1, H - 1);
    const double ax = px.x() - fx, ay = px.y() - fy;
    const Index q[4] = {grid.index(c0, r0), grid.index(c1, r0), grid.index(c0, r1), grid.index(c1, r1)};
    const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    Vec2 b = Vec2::Zero();
    bool ok = true;
    for (int k = 0; k < 4; ++k) {
      if (w[k] == 0.0) continue;
      if (!backward.is_valid(q[k])) {
        ok = false;
        break;
      }
      b += w[k] * backward.vectors.col(q[k]);
    }
    if (!ok) continue;
    out[static_cast<std::size_t>(i)] = (u + b).norm() <= tau ? 1 : 0;
  }
  return out;
}

Mask epipole_exclusion_mask(const PixelGrid& grid, const std::optional<Vec2>& e, double exclusion_px) {
  Mask m(static_cast<std::size_t>(grid.size()), 1);
  if (!e) return m;
  const Vec2 epx = grid.to_pixels(*e);
  for (Index i = 0; i < grid.size(); ++i) {
    const Vec2 p = grid.to_pixels(grid.point(i));
    if ((p - epx).norm() < exclusion_px) m[static_cast<std::size_t>(i)] = 0;
  }
  return m;
}

ScaleCorrection scale_correct(const VectorXd& d_est, const VectorXd& d_gt, const Mask& mask) {
  if (d_est.size() != d_gt.size() || static_cast<Index>(mask.size()) != d_gt.size()) {
    throw DataError("scale correction inputs have different sizes");
  }
  std::vector<double> ratios;
  for (Index i = 0; i < d_gt.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)] && d_est[i] > 0.0) ratios.push_back(d_gt[i] / d_est[i]);
  }
  if (ratios.empty()) throw DataError("scale correction: no pixel outside the epipole exclusion");
  ScaleCorrection out;
  out.scale = median(std::move(ratios));
  out.corrected = d_est * out.scale;
  return out;
}

namespace {

double percent_above(const VectorXd& err, const Mask& a, const Mask& b, double threshold) {
  Index total = 0, bad = 0;
  for (Index i = 0; i < err.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!a[k] || !b[k]) continue;
    ++total;
    if (err[i] > threshold) ++bad;
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(bad) / static_cast<double>(total);
}

}  // namespace

EvalReport disparity_errors(const VectorXd& d_est, const VectorXd& d_gt, const Mask& occ,
                            const Mask& noc, const Mask& eval_mask, double pixel_scale) {
  const Index n = d_gt.size();
  if (d_est.size() != n || static_cast<Index>(occ.size()) != n ||
      static_cast<Index>(noc.size()) != n || static_cast<Index>(eval_mask.size()) != n) {
    throw DataError("evaluation inputs have different sizes");
  }
  const VectorXd err = (d_est - d_gt).cwiseAbs() * pixel_scale;
  EvalReport r;
  r.p3px_occ = percent_above(err, occ, eval_mask, 3.0);
  r.p5px_occ = percent_above(err, occ, eval_mask, 5.0);
  r.p3px_noc = percent_above(err, noc, eval_mask, 3.0);
  r.p5px_noc = percent_above(err, noc, eval_mask, 5.0);
  std::vector<double> rel;
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (occ[k] && eval_mask[k]) rel.push_back(std::abs(d_est[i] - d_gt[i]) / d_gt[i]);
  }
  r.median_rel_depth_err = rel.empty() ? 0.0 : 100.0 * median(std::move(rel));
  return r;
}

double rotation_error_deg(const lie::SE3& est, const lie::SE3& gt) {
  return (est.rotation().inverse() * gt.rotation()).angle() * 180.0 / std::numbers::pi;
}

double translation_error_deg(const lie::SE3& est, const lie::SE3& gt) {
  const double a = est.translation().norm(), b = gt.translation().norm();
  if (a == 0.0 || b == 0.0) return a == b ? 0.0 : 90.0;
  const double c = std::clamp(est.translation().dot(gt.translation()) / (a * b), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

EvalReport evaluate_frame(const VectorXd& d_est, const VectorXd& d_gt, const lie::SE3& E_est,
                          const lie::SE3& E_gt, const PixelGrid& grid, const Mask& occ,
                          const Mask& noc, double exclusion_px, double pixel_scale) {
  const Mask keep = epipole_exclusion_mask(grid, epipole(E_gt), exclusion_px);
  Mask valid_keep = keep;
  for (std::size_t i = 0; i < keep.size(); ++i) valid_keep[i] = keep[i] && occ[i];
  const ScaleCorrection sc = scale_correct(d_est, d_gt, valid_keep);
  EvalReport r = disparity_errors(sc.corrected, d_gt, occ, noc, keep, pixel_scale);
  r.scale = sc.scale;
  r.rotation_err_deg = rotation_error_deg(E_est, E_gt);
  r.translation_err_deg = translation_error_deg(E_est, E_gt);
  return r;
}

double default_exclusion_px(int width) { return 50.0 * static_cast<double>(width) / 1242.0; }

}  // namespace mef
