#include "redge/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace redge {

namespace {

void validate_grid(const std::vector<double>& grid) {
  if (grid.size() < 2) throw std::invalid_argument("schedule grid needs at least two points");
  if (grid.front() != 1.0 || grid.back() != 0.0) throw std::invalid_argument("schedule grid must run from 1 to 0");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] < grid[k - 1])) throw std::invalid_argument("schedule grid must be strictly decreasing");
  }
}

void require_positive_time(double t, const char* what) {
  if (!(t > 0.0)) throw std::domain_error(std::string(what) + ": requires t > 0 (sigma_t = 0 at t = 0)");
}

}  // namespace

double Schedule::eta(double s, double t) const {
  switch (eta_rule) {
    case EtaRule::zero:
      return 0.0;
    case EtaRule::full:
      return sigma(s);
    case EtaRule::ddpm: {
      const double ss = sigma(s);
      const double as = alpha(s);
      if (ss == 0.0 || as == 0.0) return 0.0;
      const double r = ss * alpha(t) / (sigma(t) * as);
      return ss * std::sqrt(std::max(0.0, 1.0 - r * r));
    }
  }
  return 0.0;
}

double Schedule::c(double t) const {
  const double s = sigma(t);
  if (s == 0.0) throw std::domain_error("c_t undefined where sigma_t = 0");
  return alpha(t) / (s * s);
}

std::vector<double> uniform_grid(int n, std::optional<double> t1) {
  if (n < 2) throw std::invalid_argument("uniform_grid: n must be at least 2");
  std::vector<double> grid(n);
  if (!t1) {
    for (int k = 0; k < n; ++k) grid[n - 1 - k] = static_cast<double>(k) / (n - 1);
    grid.front() = 1.0;
    return grid;
  }
  const double a = *t1;
  if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("uniform_grid: t1 must lie in (0, 1]");
  if (n == 2) {
    if (a != 1.0) throw std::invalid_argument("uniform_grid: with n = 2 the only valid t1 is 1");
    return {1.0, 0.0};
  }
  if (a == 1.0) throw std::invalid_argument("uniform_grid: t1 = 1 requires n = 2");
  grid[n - 1] = 0.0;
  for (int k = 1; k <= n - 1; ++k) grid[n - 1 - k] = a + (k - 1) * (1.0 - a) / (n - 2);
  grid.front() = 1.0;
  return grid;
}

Schedule linear_schedule(std::vector<double> grid, EtaRule eta) {
  validate_grid(grid);
  Schedule s;
  s.alpha = [](double t) { return 1.0 - t; };
  s.sigma = [](double t) { return t; };
  s.eta_rule = eta;
  s.grid = std::move(grid);
  return s;
}

GaussianBase mle_base(const Var& logits, bool backprop) {
  Var source = backprop ? logits : detach(logits);
  Var mu = softmax_rows(source);
  Var v = clamp_min(hadamard(mu, 1.0 - mu), kVarianceFloor);
  return GaussianBase{mu, v, reciprocal(v)};
}

GaussianBase mle_base(Tape& tape, const FactorizedCategorical& dist) {
  return mle_base(tape.constant(dist.logits()), false);
}

Var denoiser_logits(const Var& logits, const Var& x, double t, const Schedule& schedule) {
  require_positive_time(t, "denoiser");
  return logits + schedule.c(t) * x;
}

Var denoiser(const Var& logits, const Var& x, double t, const Schedule& schedule) {
  return softmax_rows(denoiser_logits(logits, x, t, schedule));
}

Var denoiser_cov_logits(const Var& logits, const Var& x, double t, const Schedule& schedule,
                        const GaussianBase& base) {
  require_positive_time(t, "denoiser_cov");
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  Var centred = (x - s * base.mu) - 0.5 * a;
  return logits + (a / (s * s)) * hadamard(base.lambda, centred);
}

Var denoiser_cov(const Var& logits, const Var& x, double t, const Schedule& schedule, const GaussianBase& base) {
  return softmax_rows(denoiser_cov_logits(logits, x, t, schedule, base));
}

Var ddim_step(double s, double t, const Var& x, const Var& d, const Schedule& schedule) {
  if (!(s >= 0.0 && s < t && t <= 1.0)) throw std::invalid_argument("ddim_step: requires 0 <= s < t <= 1");
  const double st = schedule.sigma(t);
  if (st == 0.0) throw std::domain_error("ddim_step: sigma_t = 0");
  const double ratio = schedule.sigma(s) / st;
  return (schedule.alpha(s) - schedule.alpha(t) * ratio) * d + ratio * x;
}

Var ddim_stochastic_step(double s, double t, const Var& x, const Var& d, const Schedule& schedule, double eta,
                         const Matrix& z) {
  if (!(s > 0.0 && s < t && t <= 1.0)) throw std::invalid_argument("ddim_stochastic_step: requires 0 < s < t <= 1");
  const double ss = schedule.sigma(s);
  if (eta < 0.0 || eta > ss) throw std::invalid_argument("ddim_stochastic_step: eta must lie in [0, sigma_s]");
  const double st = schedule.sigma(t);
  const double keep = std::sqrt(ss * ss - eta * eta);
  Var x1_hat = (1.0 / st) * (x - schedule.alpha(t) * d);
  Var out = schedule.alpha(s) * d + keep * x1_hat;
  if (eta == 0.0) return out;
  return out + x.tape().constant(eta * z);
}

Matrix ddim_stochastic_step(double s, double t, const Matrix& x, const Matrix& d, const Schedule& schedule,
                            Rng& rng) {
  Tape tape;
  const Matrix z = standard_normal(x.rows(), x.cols(), rng);
  return ddim_stochastic_step(s, t, tape.constant(x), tape.constant(d), schedule, schedule.eta(s, t), z).value();
}

TrajectoryNoise draw_trajectory_noise(const Schedule& schedule, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  TrajectoryNoise noise;
  noise.x1 = standard_normal(rows, cols, rng);
  if (schedule.eta_rule != EtaRule::zero) {
    for (std::size_t k = 1; k + 1 < schedule.grid.size(); ++k) noise.steps.push_back(standard_normal(rows, cols, rng));
  }
  return noise;
}

Trajectory sample_trajectory(const Var& logits, const Schedule& schedule, const TrajectoryNoise& noise,
                             const GaussianBase* base) {
  validate_grid(schedule.grid);
  if (noise.x1.rows() != logits.rows() || noise.x1.cols() != logits.cols()) {
    throw std::invalid_argument("sample_trajectory: noise shape differs from logits");
  }
  const bool stochastic = schedule.eta_rule != EtaRule::zero;
  if (stochastic && noise.steps.size() + 2 != schedule.grid.size()) {
    throw std::invalid_argument("sample_trajectory: stochastic schedule needs one noise matrix per inner step");
  }
  Tape& tape = logits.tape();
  Trajectory traj;
  Var x = base == nullptr ? tape.constant(noise.x1) : base->mu + hadamard(sqrt(base->v), tape.constant(noise.x1));
  traj.times.push_back(schedule.grid.front());
  traj.states.push_back(x);
  for (std::size_t k = 0; k + 1 < schedule.grid.size(); ++k) {
    const double t = schedule.grid[k];
    const double s = schedule.grid[k + 1];
    Var z = base == nullptr ? denoiser_logits(logits, x, t, schedule)
                            : denoiser_cov_logits(logits, x, t, schedule, *base);
    Var d = softmax_rows(z);
    if (s == 0.0) {
      traj.last_logits = z;
      traj.x_t1 = x;
      x = d;
    } else if (stochastic) {
      x = ddim_stochastic_step(s, t, x, d, schedule, schedule.eta(s, t), noise.steps[k]);
    } else {
      x = ddim_step(s, t, x, d, schedule);
    }
    traj.times.push_back(s);
    traj.states.push_back(x);
  }
  traj.soft_sample = x;
  return traj;
}

Trajectory sample_trajectory(const Var& logits, const Schedule& schedule, Rng& rng, const GaussianBase* base) {
  return sample_trajectory(logits, schedule, draw_trajectory_noise(schedule, logits.rows(), logits.cols(), rng),
                           base);
}

DenoiserJacobians denoiser_jacobians(const Matrix& logits, const Matrix& x, double t, const Schedule& schedule) {
  require_positive_time(t, "denoiser_jacobians");
  if (logits.rows() != x.rows() || logits.cols() != x.cols()) {
    throw std::invalid_argument("denoiser_jacobians: shape mismatch");
  }
  const double c = schedule.c(t);
  const Matrix d = softmax(logits + c * x);
  DenoiserJacobians out;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Matrix sigma = -d.row(i).transpose() * d.row(i);
    sigma.diagonal() += d.row(i).transpose();
    out.wrt_x.push_back(c * sigma);
    out.wrt_logits.push_back(std::move(sigma));
  }
  return out;
}

}  // namespace redge
