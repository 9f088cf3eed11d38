#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "redge/categorical.hpp"
#include "redge/diffusion.hpp"
#include "redge/rng.hpp"
#include "redge/tensor.hpp"

namespace redge {

enum class EstimatorKind {
  st,
  reinmax,
  gumbel_softmax_st,
  redge_soft,
  redge_hard,
  redge_max,
  redge_cov,
  reinforce,
};

/// CLI name of an estimator: st, reinmax, gs-st, redge-soft, redge, redge-max,
/// redge-cov, reinforce.
std::string_view estimator_name(EstimatorKind kind);
/// Inverse of estimator_name; throws std::invalid_argument on unknown names.
EstimatorKind parse_estimator(std::string_view name);
bool is_diffusion(EstimatorKind kind);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::st;
  /// Number of grid points n (diffusion kinds).
  int steps = 2;
  std::optional<double> t1;
  /// Gumbel-Softmax temperature.
  double temperature = 1.0;
  EtaRule eta = EtaRule::zero;
  /// Differentiate through the moment-matched base of redge-cov.
  bool base_backprop = true;
  /// REINFORCE baseline.
  double baseline = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  Schedule schedule() const;
};

/// Everything random in one estimator call. `forced_hard` replaces the
/// Gumbel-max draw, which is how enumeration tests visit every outcome.
struct Randomness {
  TrajectoryNoise trajectory;
  Matrix gumbel;
  std::optional<Matrix> forced_hard;
};

Randomness draw_randomness(const EstimatorConfig& cfg, Eigen::Index rows, Eigen::Index cols, RngStreams& rng);

/// Scalar graph whose gradient w.r.t. the logits is the estimate.
struct Surrogate {
  Var value;
  /// The sample fed to the objective: hard value with a straight-through
  /// gradient for hard estimators, the soft sample for redge-soft.
  Var relaxed;
  std::optional<OneHotSample> hard_sample;
  Matrix soft_sample;
  double objective_value = 0.0;
};

Surrogate build_surrogate(const EstimatorConfig& cfg, const Var& logits, const Objective& f, const Randomness& r);

/// Draws randomness, builds the surrogate on a fresh tape and differentiates it.
GradientEstimate estimate(const EstimatorConfig& cfg, const Matrix& logits, const Objective& f, RngStreams& rng);
GradientEstimate estimate(const EstimatorConfig& cfg, const Matrix& logits, const Objective& f, const Randomness& r);

/// ReinMax block 1/2 {Sigma(p) + (x - p)(x - p)^T} applied to g, row by row.
Matrix reinmax_closed_form(const Matrix& probs, const Matrix& x, const Matrix& g);
/// The same block written as 2 Cov(1/2 (pi + delta_x)) - 1/2 Cov(pi), with the
/// mixture covariance computed from its own moments.
Matrix reinmax_standard_form(const Matrix& probs, const Matrix& x, const Matrix& g);
/// Sigma(p) g row by row: the hard straight-through estimate for gradient g.
Matrix st_closed_form(const Matrix& probs, const Matrix& g);

}  // namespace redge
