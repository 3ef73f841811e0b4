#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mef/filter.hpp"
#include "mef/observation.hpp"

namespace mef::checks {

/// One verification result: observed error against a pinned tolerance.
struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass() const;
};

/// Random measurement problem: a perturbed state seen through noisy flow of
/// a random motion and disparity map.
struct Instance {
  PixelGrid grid;
  State x;
  FlowField y;
  WeightField W;
  Penalty phi;
};

Instance random_instance(std::uint64_t seed, int width, int height);

/// Central differences of the measurement energy along x * exp(s e_a).
Eigen::VectorXd fd_gradient(const Instance& p, double step);

/// Riemannian Hessian by central mixed differences along x exp(s e_a) exp(t e_b)
/// minus the connection term <G, omega_{e_a} e_b>.
Eigen::MatrixXd fd_hessian(const Instance& p, double step);

using GradientFn = std::function<Eigen::VectorXd(const State&, const FlowField&, const WeightField&,
                                                 const Penalty&, const PixelGrid&)>;

/// Max relative error |G - G_fd| / |G_fd| over `states` random instances.
CheckResult gradient_check(std::uint64_t seed, int states = 20, int size = 8,
                           const GradientFn& gradient = hamiltonian_gradient);
CheckResult hessian_check(std::uint64_t seed, int states = 20, int size = 8);

/// Group axioms, exp/log round trips and the disparity homomorphism.
std::vector<CheckResult> lie_checks(std::uint64_t seed, int samples = 1000);

/// Torsion, metric compatibility and the swapped-dual identity per group.
std::vector<CheckResult> connection_checks(std::uint64_t seed, int triples = 100);

/// Structured filter (no sparsification or propagation, fixed substeps)
/// against a dense (12 + n)^2 implementation of the same flow.
CheckResult dense_check(std::uint64_t seed, HessianMode mode, int frames = 5, int size = 2);

/// P(t) = R0 + t R for C = H = 0 and the scalar equilibrium sqrt(r / h).
std::vector<CheckResult> riccati_checks();

/// Charbonnier with beta = 1 against the quadratic penalty over a sequence.
CheckResult quadratic_limit_check(int frames = 10, int size = 16);

/// Everything above with default sizes.
std::vector<CheckResult> run_all(std::uint64_t seed);

}  // namespace mef::checks
