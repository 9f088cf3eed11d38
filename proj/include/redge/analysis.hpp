#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "redge/categorical.hpp"
#include "redge/diffusion.hpp"
#include "redge/estimators.hpp"
#include "redge/tensor.hpp"

namespace redge {

inline constexpr double kMarginTolerance = 1e-12;

struct MarginReport {
  RowVector x;
  int argmax = 0;
  /// Gap between the largest and second-largest coordinates.
  double margin = 0.0;
  bool on_boundary = false;
};

/// Throws std::invalid_argument for K < 2.
MarginReport margin(const RowVector& x);

/// Largest singular value by power iteration on A^T A.
double operator_norm(const Matrix& a, double tol = 1e-10, int max_iter = 10000);

/// Timestep whose linear-schedule c_t = (1 - t)/t^2 equals c.
double time_for_c(double c);

struct DecayRow {
  double t1 = 0.0;
  double c_t1 = 0.0;
  /// Operator norm of d T_0 / d theta.
  double jac_norm = 0.0;
  /// Operator norm of d x_{t1} / d theta.
  double state_jac_norm = 0.0;
  double margin = 0.0;
  double bound_value = 0.0;
  bool on_boundary = false;
};

struct DecayStudy {
  std::vector<DecayRow> rows;
  /// Largest observed d x_{t1} / d theta norm, the constant in the bound.
  double M = 0.0;
  /// Margin of the t1 -> 0 limit of x_{t1}, the denoiser output at t_2.
  double limit_margin = 0.0;
  bool limit_on_boundary = false;
  /// Least-squares slope of log(jac / (1 + c M)) against c over the last
  /// third of the usable rows (off the boundary, non-zero norm), at least two.
  double slope = 0.0;
  /// Smallest c at which 2K(K-1)(1 + c M) exp(-m c / 2) < 1e-6 with m the
  /// limit margin.
  double threshold_c = 0.0;
  /// Smallest swept c from which every row's bound_value, which uses the
  /// margin of x_{t1} at that row, stays below 1e-6; infinity if none.
  double row_threshold_c = 0.0;
  /// First swept c with jac_norm < 1e-6; infinity if none.
  double first_c_below = 0.0;
  int K = 0;
};

/// Sweeps t_1 with the upper grid [1, ..., t_2] fixed and the noise x_1
/// frozen. Every t_1 must be positive and below t_2; logits must be 1 x K.
DecayStudy jacobian_decay_study(const Matrix& logits, const std::vector<double>& upper_grid,
                                const std::vector<double>& t1_list, const Matrix& x1);

/// t_1 values whose c_t spans [c_lo, c_hi] uniformly, in decreasing t order.
std::vector<double> t1_sweep_in_c(double c_lo, double c_hi, int points);

void write_decay_csv(std::ostream& out, const DecayStudy& study);

struct BiasVarianceReport {
  std::string estimator;
  int replications = 0;
  Matrix mean;
  Matrix exact;
  double bias_norm = 0.0;
  /// Trace of the population covariance of the replicated estimates.
  double trace_cov = 0.0;
  double mse = 0.0;
  /// Three standard errors of the mean, 3 sqrt(trace_cov / R), plus a
  /// 1e-9 (1 + |exact|) rounding floor.
  double bias_ci = 0.0;
};

BiasVarianceReport bias_variance(const EstimatorConfig& cfg, const FactorizedCategorical& dist, const Objective& f,
                                 int replications, std::uint64_t seed, int threads = 1);

}  // namespace redge
