#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redge/categorical.hpp"
#include "redge/rng.hpp"

namespace redge {

/// Worst discrepancy of one oracle comparison over a batch of instances.
struct OracleOutcome {
  std::string name;
  int instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  /// Where the worst case happened and the two values compared.
  std::string detail;

  bool passed() const { return instances > 0 && max_error <= tolerance; }
};

/// <a, y>.
Objective linear_objective(Matrix a);
/// <a, y> + <b, y>^2 + <c, y * y>: a general quadratic with cross-row terms.
Objective quadratic_objective(Matrix a, Matrix b, Matrix c);
/// <a, y> + <b, y>^2 + <c, y>^3.
Objective cubic_objective(Matrix a, Matrix b, Matrix c);
/// <a, y> + sum((y - b)^2) + 0.1 sum(exp(y)): smooth test objective.
Objective smooth_objective(Matrix a, Matrix b);

/// Relative error |a - b| / max(|b|, floor) in the Frobenius norm.
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-4);

/// Tape gradient of a softmax-based loss against central differences.
OracleOutcome check_tape_finite_differences(int instances, std::uint64_t seed);
/// Gradient through a three-step DDIM map against central differences.
OracleOutcome check_ddim_finite_differences(int instances, std::uint64_t seed);
/// Closed-form denoiser Jacobians against autodiff, K in {2, 3, 8}.
/// `inject_fault` negates the x-Jacobian, for exercising failure reporting.
OracleOutcome check_denoiser_jacobians(int instances, std::uint64_t seed, bool inject_fault = false);
/// Every pathwise estimator against central differences of its frozen-noise map.
OracleOutcome check_estimator_finite_differences(int instances, std::uint64_t seed);
/// n = 2 reductions of the diffusion estimators under shared randomness.
OracleOutcome check_reduction_identities(int instances, std::uint64_t seed);
/// Closed-form and standard-form ReinMax blocks per sample.
OracleOutcome check_reinmax_forms(int samples, std::uint64_t seed);
/// Enumerated means against the exact gradient, all L <= 2, K <= 4.
OracleOutcome check_st_linear_exactness(int draws, std::uint64_t seed);
OracleOutcome check_reinmax_quadratic_exactness(int draws, std::uint64_t seed);
OracleOutcome check_reinforce_exactness(int draws, std::uint64_t seed);
/// Mixture covariance formula against the enumerated mixture moments.
OracleOutcome check_mixture_covariance(int cases, std::uint64_t seed);

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Substring filter on check names; empty runs everything.
  std::string filter;
  /// Name of a check whose oracle is deliberately broken.
  std::string inject_fault;
};

/// Runs the named oracle suite once per seed.
std::vector<OracleOutcome> run_gradcheck(const GradcheckOptions& options);
std::vector<std::string> gradcheck_names();

}  // namespace redge
