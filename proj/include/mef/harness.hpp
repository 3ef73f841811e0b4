#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "mef/lie.hpp"
#include "mef/observation.hpp"

namespace mef {

/// Analytic world surface Z = F(X, Y), seen from a camera that starts at the
/// world origin looking down +Z.
struct Surface {
  enum class Kind { Plane, SlantedPlane, SinusoidalRelief };
  Kind kind = Kind::SinusoidalRelief;
  double depth = 5.0;       // Z at X = Y = 0
  double slope_x = 0.0;     // slanted plane: dZ/dX
  double slope_y = 0.0;     // slanted plane: dZ/dY
  double amplitude = 0.5;   // relief amplitude
  double wavelength = 1.0;  // relief wavelength (world units)

  double height(double X, double Y) const;
  Eigen::Vector2d gradient(double X, double Y) const;
};

/// Synthetic scene: a surface and a camera trajectory of relative motions
/// E_k = exp(twist_k) mapping points of camera k into camera k + 1.
struct SyntheticScene {
  Surface surface;
  std::vector<lie::Vec6> twists;  // one entry = constant twist
  PixelGrid grid;
  std::uint64_t seed = 0;

  lie::SE3 relative_motion(int k) const;
};

struct Sequence {
  std::vector<FlowField> forward;     // frame k -> k + 1, normalized units
  std::vector<FlowField> backward;    // frame k + 1 -> k
  std::vector<Eigen::VectorXd> disparity;  // ground truth of frame k (inverse depth)
  std::vector<lie::SE3> motion;       // relative motion E_k
  std::vector<lie::SE3> pose;         // camera k to world
};

/// Ray casts the surface from camera `pose` (camera to world). Throws
/// DataError when a ray misses the surface or a depth is <= 1.
Eigen::VectorXd ray_cast_disparity(const Surface& s, const lie::SE3& pose, const PixelGrid& grid);

/// Exact flows, ground-truth disparities and motions for `n_frames` frames.
Sequence generate_sequence(const SyntheticScene& scene, int n_frames);

/// I.i.d. Gaussian perturbation of every valid flow vector (normalized units).
FlowField add_noise(const FlowField& flow, double sigma, std::uint64_t seed);

/// Replaces exactly round(fraction * n) seeded pixels by vectors of length
/// `magnitude` in uniformly random directions. `chosen` receives the pixels.
FlowField inject_outliers(const FlowField& flow, double fraction, double magnitude,
                          std::uint64_t seed, std::vector<Eigen::Index>* chosen = nullptr);

/// Median length of the valid flow vectors.
double median_flow_magnitude(const FlowField& flow);

/// Consistent iff |u_f(z) + u_b(z + u_f(z))| <= tau, with the backward flow
/// sampled bilinearly; lookups outside the grid or next to invalid backward
/// vectors are inconsistent. tau in normalized units.
Mask fb_consistency_mask(const FlowField& forward, const FlowField& backward,
                         const PixelGrid& grid, double tau);

/// Pixels farther than `exclusion_px` from the epipole (all pixels when the
/// epipole is absent).
Mask epipole_exclusion_mask(const PixelGrid& grid, const std::optional<Vec2>& epipole,
                            double exclusion_px);

struct ScaleCorrection {
  double scale = 1.0;
  Eigen::VectorXd corrected;
};

/// s = median of d_gt / d_est over the mask; corrected = s * d_est.
/// Throws DataError on an empty mask.
ScaleCorrection scale_correct(const Eigen::VectorXd& d_est, const Eigen::VectorXd& d_gt,
                              const Mask& mask);

struct EvalReport {
  double p3px_occ = 0.0;
  double p5px_occ = 0.0;
  double p3px_noc = 0.0;
  double p5px_noc = 0.0;
  double median_rel_depth_err = 0.0;  // percent
  double rotation_err_deg = 0.0;
  double translation_err_deg = 0.0;
  double scale = 1.0;

  bool operator==(const EvalReport&) const = default;
};

/// Outlier percentages of |d_est - d_gt| * pixel_scale over the occ and noc
/// masks (each intersected with `eval_mask`), and the median relative error.
EvalReport disparity_errors(const Eigen::VectorXd& d_est, const Eigen::VectorXd& d_gt,
                            const Mask& occ, const Mask& noc, const Mask& eval_mask,
                            double pixel_scale);

/// Angle of R_est^T R_gt and the angle between the translation directions,
/// both in degrees.
double rotation_error_deg(const lie::SE3& est, const lie::SE3& gt);
double translation_error_deg(const lie::SE3& est, const lie::SE3& gt);

/// Full protocol for one frame: epipole exclusion, median scale correction,
/// then disparity and motion errors.
EvalReport evaluate_frame(const Eigen::VectorXd& d_est, const Eigen::VectorXd& d_gt,
                          const lie::SE3& E_est, const lie::SE3& E_gt, const PixelGrid& grid,
                          const Mask& occ, const Mask& noc, double exclusion_px,
                          double pixel_scale);

/// Default exclusion radius: 50 px at 1242 px image width, scaled to `width`.
double default_exclusion_px(int width);

double median(std::vector<double> values);

}  // namespace mef
