#pragma once

#include <Eigen/Dense>

namespace mef::disparity {

using VecX = Eigen::VectorXd;

// Entries are kept inside [kEps, 1 - kEps].
inline constexpr double kEps = 1e-9;

inline constexpr double kIdentityValue = 0.5;

double clamp(double x);
VecX clamp(const VecX& x);

/// Group law xy / (1 - x - y + 2xy), component-wise.
double compose(double x, double y);
VecX compose(const VecX& x, const VecX& y);

/// 1 - x, component-wise.
VecX inverse(const VecX& x);

VecX identity(Eigen::Index n);

/// e^{4t} / (1 + e^{4t}), component-wise.
double exp(double t);
VecX exp(const VecX& t);

/// log(x / (1 - x)) / 4, component-wise.
double log(double x);
VecX log(const VecX& x);

/// Depth represented by a disparity, 1 / x.
inline double depth(double x) { return 1.0 / x; }

}  // namespace mef::disparity
