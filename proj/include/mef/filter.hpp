#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "mef/lie.hpp"
#include "mef/observation.hpp"

namespace mef {

using Vec6 = lie::Vec6;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12X = Eigen::Matrix<double, 12, Eigen::Dynamic>;

// Tangent layout of the filter state: se3 pose (omega, u), twist v, then one
// disparity coordinate per pixel.
inline constexpr int kPoseOffset = 0;
inline constexpr int kTwistOffset = 6;
inline constexpr int kCameraDim = 12;

/// Filter state (E, v, d) on SE3 x R^6 x (0,1)^n.
struct State {
  lie::SE3 E;
  Vec6 v = Vec6::Zero();
  Eigen::VectorXd d;

  static State initial(Eigen::Index num_pixels);
  Eigen::Index num_pixels() const { return d.size(); }
  Eigen::Index dimension() const { return kCameraDim + d.size(); }

  /// x * exp(xi) with xi in the filter tangent layout.
  State retract(const Eigen::VectorXd& xi) const;
  lie::GroupElement to_group_element() const;
};

/// Symmetric (12 + n) x (12 + n) matrix with a dense camera block, a dense
/// camera/disparity coupling and a diagonal disparity block. Used for the gain
/// P and for the Hessian H.
struct BlockMatrix {
  Mat12 cc = Mat12::Zero();
  Mat12X cd;
  Eigen::VectorXd dd;

  static BlockMatrix zeros(Eigen::Index n);
  static BlockMatrix diagonal(const Mat12& cc, const Eigen::VectorXd& dd);

  Eigen::Index num_pixels() const { return dd.size(); }
  Eigen::Index dimension() const { return kCameraDim + dd.size(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd to_dense() const;
  /// Reads the structured blocks of a dense matrix; the disparity block keeps
  /// its diagonal only.
  static BlockMatrix from_dense(const Eigen::MatrixXd& m);
  double trace() const { return cc.trace() + dd.sum(); }

  BlockMatrix& operator+=(const BlockMatrix& o);
  BlockMatrix operator+(const BlockMatrix& o) const;
  BlockMatrix operator*(double s) const;
};

using GainMatrix = BlockMatrix;

enum class OutlierMode {
  ScaleModelNoise,   // multiply r_dd on inconsistent pixels
  ScaleObservation,  // multiply W_z on inconsistent pixels
};

/// Model-noise weight of the camera block: small on the pose, larger on the
/// twist, so that motion changes enter mainly as acceleration.
inline Mat12 default_model_noise() {
  Mat12 R = Mat12::Zero();
  R.diagonal().head<6>().setConstant(1e-8);
  R.diagonal().tail<6>().setConstant(1e-6);
  return R;
}

/// Curvature used in the Riccati equation. Exact is the Riemannian Hessian of
/// the measurement energy; GaussNewton drops the residual-curvature and
/// connection terms and limits phi'' so every pixel block stays positive
/// semidefinite (large residuals make the exact Hessian indefinite, and the
/// Riccati solution then escapes in finite time).
enum class HessianMode { Exact, GaussNewton };

/// Initial gain of the camera block: wide on the pose, narrow on the twist so
/// the first-frame jump of E is not read as a large velocity.
inline Mat12 default_initial_gain() {
  Mat12 R = Mat12::Zero();
  R.diagonal().head<6>().setConstant(10.0);
  R.diagonal().tail<6>().setConstant(1e-4);
  return R;
}

struct FilterConfig {
  Mat12 R_cc = default_model_noise();
  double r_dd = 0.1;
  Mat12 R0_cc = default_initial_gain();
  double r0_dd = 0.1;
  Penalty penalty = Penalty::charbonnier(1e-3, 0.5);

  HessianMode hessian = HessianMode::GaussNewton;

  int substeps = 4;
  double frame_interval = 1.0;
  // Substeps are further shortened so that h * 2 |lambda_max(P H)| stays
  // below this bound (explicit RK3 stability); 0 disables the limit.
  double stiffness_limit = 1.0;
  int max_substeps = 5000;

  bool epipole_weighting = true;
  double epipole_rho = 0.0;  // normalized units; 0 disables

  OutlierMode outlier_mode = OutlierMode::ScaleModelNoise;
  double outlier_factor = 0.01;

  bool propagate_disparity = true;
  bool propagate_gain = true;
  double disocclusion_gain_factor = 10.0;
  bool sparsify = true;

  /// Throws DomainError on a non-SPD block, substeps < 1, or similar.
  void validate() const;
};

/// One observation frame. An empty `consistent` mask means every pixel passed
/// the forward/backward check.
struct Frame {
  FlowField flow;
  WeightField weight;
  Mask consistent;
};

/// Value, left-trivialized gradient and Riemannian Hessian of the measurement
/// energy sum_z phi(1/2 |e_z|^2_W).
struct MeasurementDerivatives {
  double energy = 0.0;
  Eigen::VectorXd gradient;
  BlockMatrix hessian;
  std::vector<double> residual_norms;  // per valid pixel, normalized units
};

MeasurementDerivatives measurement_derivatives(const State& x, const FlowField& y,
                                               const WeightField& W, const Penalty& phi,
                                               const PixelGrid& grid, bool with_hessian,
                                               HessianMode mode = HessianMode::Exact);

/// f(x) = (v, 0, 0).
Eigen::VectorXd propagation_field(const State& x);

/// Gradient G of the optimal Hamiltonian at zero costate.
Eigen::VectorXd hamiltonian_gradient(const State& x, const FlowField& y, const WeightField& W,
                                     const Penalty& phi, const PixelGrid& grid);

/// Riemannian Hessian H of the optimal Hamiltonian at zero costate.
BlockMatrix riccati_H(const State& x, const FlowField& y, const WeightField& W,
                      const Penalty& phi, const PixelGrid& grid);

/// Camera block of the Riccati matrix C. All disparity rows and columns of C
/// vanish. `velocity` is x^{-1} x_dot in the filter tangent layout.
Mat12 riccati_C(const State& x, const Eigen::VectorXd& velocity);

/// C P for a camera-only C.
BlockMatrix riccati_C_apply(const Mat12& C, const GainMatrix& P);

/// R + C P + P C^T - P H P in the structured form.
GainMatrix riccati_rate(const GainMatrix& P, const Mat12& C, const BlockMatrix& H,
                        const Mat12& R_cc, const Eigen::VectorXd& r_dd);

struct RiccatiStepInfo {
  int clamped = 0;  // disparity gains clamped at zero
};

/// One explicit RK3 step (CG3 tableau) of the Riccati flow for fixed C, H, R.
GainMatrix riccati_step(const GainMatrix& P, const Mat12& C, const BlockMatrix& H,
                        const Mat12& R_cc, const Eigen::VectorXd& r_dd, double h,
                        RiccatiStepInfo* info = nullptr);

/// One CG3 step of x' = x (f(x) - mat(P vec(G(x)))) for a fixed gain P.
State state_step(const State& x, const GainMatrix& P, const FlowField& y, const WeightField& W,
                 const Penalty& phi, const PixelGrid& grid, double h);

/// Estimate of |lambda_max(P H)|: the larger of a power iteration on the
/// structured product and the exact camera-block and per-pixel values.
double gain_hessian_spectral_radius(const GainMatrix& P, const BlockMatrix& H);

/// Truncation point after a frame: re-symmetrizes the camera block. The
/// disparity block is diagonal by construction.
GainMatrix sparsify(const GainMatrix& P);

struct Diagnostics {
  int frame = 0;
  double energy = 0.0;
  double mean_residual = 0.0;
  double median_residual = 0.0;
  double gain_trace = 0.0;
  double outlier_fraction = 0.0;
  int clamped_gains = 0;
  int disoccluded = 0;
  int substeps = 0;
};

struct FrameResult {
  State state;                    // after the discrete disparity propagation
  GainMatrix gain;
  Eigen::VectorXd updated_disparity;  // before propagation, previous frame coordinates
  Mask propagation_valid;
  Diagnostics diagnostics;
};

/// Integrates the continuous filter over one frame interval, applies the
/// outlier policy, propagates the disparity map into the next frame and
/// truncates the gain. Throws NumericalError if the state becomes non-finite.
FrameResult filter_frame(const State& x, const GainMatrix& P, const Frame& frame,
                         const FilterConfig& cfg, const PixelGrid& grid, int frame_index = 0);

/// A filter session bound to one grid and config.
class MinimumEnergyFilter {
 public:
  MinimumEnergyFilter(PixelGrid grid, FilterConfig cfg);
  MinimumEnergyFilter(PixelGrid grid, FilterConfig cfg, State initial);

  const FrameResult& process(const Frame& frame);

  const State& state() const { return state_; }
  const GainMatrix& gain() const { return gain_; }
  const PixelGrid& grid() const { return grid_; }
  const FilterConfig& config() const { return cfg_; }
  int frames_processed() const { return frames_; }

 private:
  PixelGrid grid_;
  FilterConfig cfg_;
  State state_;
  GainMatrix gain_;
  FrameResult last_;
  int frames_ = 0;
};

GainMatrix initial_gain(const FilterConfig& cfg, Eigen::Index num_pixels);

}  // namespace mef
