#include "mef/disparity_group.hpp"

#include <algorithm>
#include <cmath>

namespace mef::disparity {

double clamp(double x) { return std::clamp(x, kEps, 1.0 - kEps); }

VecX clamp(const VecX& x) { return x.unaryExpr([](double v) { return clamp(v); }); }

double compose(double x, double y) {
  // Written symmetrically so that compose(x, y) == compose(y, x) bit for bit.
  return clamp(x * y / (1.0 - (x + y) + 2.0 * (x * y)));
}

VecX compose(const VecX& x, const VecX& y) {
  return x.binaryExpr(y, [](double a, double b) { return compose(a, b); });
}

VecX inverse(const VecX& x) {
  return x.unaryExpr([](double v) { return clamp(1.0 - v); });
}

VecX identity(Eigen::Index n) { return VecX::Constant(n, kIdentityValue); }

double exp(double t) {
  // 1 / (1 + e^{-4t}) avoids overflow for large positive t.
  const double e = std::exp(-4.0 * t);
  return clamp(1.0 / (1.0 + e));
}

VecX exp(const VecX& t) {
  return t.unaryExpr([](double v) { return exp(v); });
}

double log(double x) {
  const double c = clamp(x);
  return 0.25 * std::log(c / (1.0 - c));
}

VecX log(const VecX& x) {
  return x.unaryExpr([](double v) { return log(v); });
}

}  // namespace mef::disparity
