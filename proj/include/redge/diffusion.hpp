#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "redge/categorical.hpp"
#include "redge/rng.hpp"
#include "redge/tensor.hpp"

namespace redge {

/// How much fresh noise each reverse step injects.
enum class EtaRule {
  zero,  ///< deterministic DDIM
  ddpm,  ///< eta_s = sigma_s sqrt(1 - (sigma_s alpha_t / (sigma_t alpha_s))^2)
  full,  ///< eta_s = sigma_s, full renoising
};

/// Interpolation X_t = alpha_t X_0 + sigma_t X_1 plus a decreasing grid
/// grid[0] = 1 > grid[1] > ... > grid[n-1] = 0. The last non-zero entry is t_1.
struct Schedule {
  std::function<double(double)> alpha;
  std::function<double(double)> sigma;
  EtaRule eta_rule = EtaRule::zero;
  std::vector<double> grid;

  /// eta for the transition t -> s.
  double eta(double s, double t) const;
  /// alpha_t / sigma_t^2; throws at sigma_t = 0.
  double c(double t) const;
  double t1() const { return grid.at(grid.size() - 2); }
  int steps() const { return static_cast<int>(grid.size()); }
};

/// t_k = k/(n-1) listed from 1 down to 0. With `t1`, the grid between t1 and
/// 1 stays uniform: [1, ..., t1, 0] with n entries.
std::vector<double> uniform_grid(int n, std::optional<double> t1 = std::nullopt);

/// alpha_t = 1 - t, sigma_t = t.
Schedule linear_schedule(std::vector<double> grid = {1.0, 0.0}, EtaRule eta = EtaRule::zero);

/// Moment-matched diagonal Gaussian reference N(mu, diag(v)).
struct GaussianBase {
  Var mu;
  Var v;
  Var lambda;
};

inline constexpr double kVarianceFloor = 1e-6;

/// mu = softmax(logits), v = max(mu (1 - mu), 1e-6), lambda = 1 / v. With
/// backprop off, the moments are recorded as constants.
GaussianBase mle_base(const Var& logits, bool backprop = true);
/// Base for a fixed distribution, as constants on `tape`.
GaussianBase mle_base(Tape& tape, const FactorizedCategorical& dist);

/// phi + c_t x_t, the logits of the posterior over one-hot X_0 given X_t = x_t.
Var denoiser_logits(const Var& logits, const Var& x, double t, const Schedule& schedule);
/// E[X_0 | X_t = x] = softmax(phi + alpha_t x / sigma_t^2). Throws at t = 0.
Var denoiser(const Var& logits, const Var& x, double t, const Schedule& schedule);

/// Logits of the denoiser under the Gaussian base:
/// phi + (alpha_t / sigma_t^2) lambda * (x - sigma_t mu - alpha_t / 2).
Var denoiser_cov_logits(const Var& logits, const Var& x, double t, const Schedule& schedule,
                        const GaussianBase& base);
Var denoiser_cov(const Var& logits, const Var& x, double t, const Schedule& schedule, const GaussianBase& base);

/// Deterministic map T_{s|t}(x) = (alpha_s - alpha_t sigma_s / sigma_t) d + (sigma_s / sigma_t) x.
Var ddim_step(double s, double t, const Var& x, const Var& d, const Schedule& schedule);
/// alpha_s d + sqrt(sigma_s^2 - eta^2) (x - alpha_t d) / sigma_t + eta z.
Var ddim_stochastic_step(double s, double t, const Var& x, const Var& d, const Schedule& schedule, double eta,
                         const Matrix& z);
Matrix ddim_stochastic_step(double s, double t, const Matrix& x, const Matrix& d, const Schedule& schedule,
                            Rng& rng);

/// Frozen randomness of one trajectory: the initial draw and, for stochastic
/// schedules, one standard normal matrix per intermediate step.
struct TrajectoryNoise {
  Matrix x1;
  std::vector<Matrix> steps;
};

TrajectoryNoise draw_trajectory_noise(const Schedule& schedule, Eigen::Index rows, Eigen::Index cols, Rng& rng);

struct Trajectory {
  std::vector<double> times;
  /// states[k] is x at times[k]; the last state is the soft sample at t = 0.
  std::vector<Var> states;
  Var soft_sample;
  /// Denoiser logits and state at t_1, the input of the final step.
  Var last_logits;
  Var x_t1;
};

/// Runs the reverse chain from x_1 down the grid. Without a base x_1 is the
/// noise itself; with one it is mu + sqrt(v) * noise and every step uses the
/// base-aware denoiser.
Trajectory sample_trajectory(const Var& logits, const Schedule& schedule, const TrajectoryNoise& noise,
                             const GaussianBase* base = nullptr);
Trajectory sample_trajectory(const Var& logits, const Schedule& schedule, Rng& rng,
                             const GaussianBase* base = nullptr);

/// Closed-form Jacobians of the denoiser: Sigma = diag(d) - d d^T w.r.t. the
/// logits and c_t Sigma w.r.t. x, one K x K block per row.
struct DenoiserJacobians {
  std::vector<Matrix> wrt_logits;
  std::vector<Matrix> wrt_x;
};
DenoiserJacobians denoiser_jacobians(const Matrix& logits, const Matrix& x, double t, const Schedule& schedule);

}  // namespace redge
