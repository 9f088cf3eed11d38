#include "redge/estimators.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <utility>

namespace redge {

namespace {

constexpr std::array<std::pair<EstimatorKind, std::string_view>, 8> kNames{{
    {EstimatorKind::st, "st"},
    {EstimatorKind::reinmax, "reinmax"},
    {EstimatorKind::gumbel_softmax_st, "gs-st"},
    {EstimatorKind::redge_soft, "redge-soft"},
    {EstimatorKind::redge_hard, "redge"},
    {EstimatorKind::redge_max, "redge-max"},
    {EstimatorKind::redge_cov, "redge-cov"},
    {EstimatorKind::reinforce, "reinforce"},
}};

OneHotSample choose_hard(const Randomness& r, const Matrix& scores) {
  if (r.forced_hard) {
    const Matrix& x = *r.forced_hard;
    if (x.rows() != scores.rows() || x.cols() != scores.cols()) {
      throw std::invalid_argument("forced hard sample has the wrong shape");
    }
    OneHotSample s = argmax_onehot(x);
    if (s.onehot != x) throw std::invalid_argument("forced hard sample is not one-hot");
    return s;
  }
  if (r.gumbel.rows() != scores.rows() || r.gumbel.cols() != scores.cols()) {
    throw std::invalid_argument("gumbel noise has the wrong shape");
  }
  return argmax_onehot(scores + r.gumbel);
}

/// 2 link(theta, (p + x)/2) - 1/2 link(theta, p): value irrelevant, Jacobian
/// 1/2 {Sigma(p) + (x - p)(x - p)^T}.
Var reinmax_link(const Var& theta, const Matrix& p, const Matrix& x) {
  return 2.0 * covariance_link(theta, 0.5 * (p + x)) - 0.5 * covariance_link(theta, p);
}

Surrogate finish(const Objective& f, Var relaxed, std::optional<OneHotSample> hard, Matrix soft) {
  Surrogate s;
  s.relaxed = relaxed;
  s.value = f(relaxed);
  if (s.value.value().size() != 1) throw std::invalid_argument("objective must return a scalar");
  s.objective_value = s.value.scalar();
  s.hard_sample = std::move(hard);
  s.soft_sample = std::move(soft);
  return s;
}

}  // namespace

std::string_view estimator_name(EstimatorKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown estimator '" + std::string(name) +
                              "' (expected st, reinmax, gs-st, reinforce, redge, redge-soft, redge-max, redge-cov)");
}

bool is_diffusion(EstimatorKind kind) {
  return kind == EstimatorKind::redge_soft || kind == EstimatorKind::redge_hard || kind == EstimatorKind::redge_max ||
         kind == EstimatorKind::redge_cov;
}

void EstimatorConfig::validate() const {
  if (is_diffusion(kind)) {
    if (steps < 2) throw std::invalid_argument("diffusion estimators need at least 2 steps");
    if (t1 && !(*t1 > 0.0 && *t1 <= 1.0)) throw std::invalid_argument("t1 must lie in (0, 1]");
  }
  if (kind == EstimatorKind::gumbel_softmax_st && !(temperature > 0.0)) {
    throw std::invalid_argument("temperature must be positive");
  }
}

Schedule EstimatorConfig::schedule() const {
  const bool default_t1 = !t1 || (steps == 2 && *t1 == 1.0);
  return linear_schedule(default_t1 ? uniform_grid(steps) : uniform_grid(steps, t1), eta);
}

Randomness draw_randomness(const EstimatorConfig& cfg, Eigen::Index rows, Eigen::Index cols, RngStreams& rng) {
  cfg.validate();
  Randomness r;
  if (is_diffusion(cfg.kind)) r.trajectory = draw_trajectory_noise(cfg.schedule(), rows, cols, rng.noise);
  r.gumbel = gumbel_noise(rows, cols, rng.categorical);
  return r;
}

Surrogate build_surrogate(const EstimatorConfig& cfg, const Var& logits, const Objective& f, const Randomness& r) {
  cfg.validate();
  Tape& tape = logits.tape();
  const Matrix& theta = logits.value();
  switch (cfg.kind) {
    case EstimatorKind::st: {
      Var p = softmax_rows(logits);
      OneHotSample x = choose_hard(r, theta);
      Var y = straight_through(x.onehot, p);
      return finish(f, y, std::move(x), p.value());
    }
    case EstimatorKind::reinmax: {
      const Matrix p = softmax(theta);
      OneHotSample x = choose_hard(r, theta);
      Var y = straight_through(x.onehot, reinmax_link(logits, p, x.onehot));
      return finish(f, y, std::move(x), p);
    }
    case EstimatorKind::gumbel_softmax_st: {
      if (r.gumbel.rows() != theta.rows() || r.gumbel.cols() != theta.cols()) {
        throw std::invalid_argument("gumbel noise has the wrong shape");
      }
      Var soft = softmax_rows((1.0 / cfg.temperature) * (logits + tape.constant(r.gumbel)));
      OneHotSample x = choose_hard(r, theta);
      Var y = straight_through(x.onehot, soft);
      return finish(f, y, std::move(x), soft.value());
    }
    case EstimatorKind::redge_soft: {
      Trajectory traj = sample_trajectory(logits, cfg.schedule(), r.trajectory);
      return finish(f, traj.soft_sample, std::nullopt, traj.soft_sample.value());
    }
    case EstimatorKind::redge_hard: {
      Trajectory traj = sample_trajectory(logits, cfg.schedule(), r.trajectory);
      OneHotSample x = choose_hard(r, traj.last_logits.value());
      Var y = straight_through(x.onehot, traj.soft_sample);
      return finish(f, y, std::move(x), traj.soft_sample.value());
    }
    case EstimatorKind::redge_max: {
      const Schedule schedule = cfg.schedule();
      Trajectory traj = sample_trajectory(logits, schedule, r.trajectory);
      const Matrix d = traj.soft_sample.value();
      OneHotSample x = choose_hard(r, traj.last_logits.value());
      Var theta_path = reinmax_link(logits, d, x.onehot);
      Var x_path = covariance_link(schedule.c(schedule.t1()) * traj.x_t1, d);
      Var y = straight_through(x.onehot, theta_path + x_path);
      return finish(f, y, std::move(x), d);
    }
    case EstimatorKind::redge_cov: {
      const GaussianBase base = mle_base(logits, cfg.base_backprop);
      Trajectory traj = sample_trajectory(logits, cfg.schedule(), r.trajectory, &base);
      OneHotSample x = choose_hard(r, traj.last_logits.value());
      Var y = straight_through(x.onehot, traj.soft_sample);
      return finish(f, y, std::move(x), traj.soft_sample.value());
    }
    case EstimatorKind::reinforce: {
      OneHotSample x = choose_hard(r, theta);
      Var xc = tape.constant(x.onehot);
      const double fx = f(xc).scalar();
      Var log_prob = sum(hadamard(xc, log_softmax_rows(logits)));
      Var score = log_prob - detach(log_prob);
      Surrogate s;
      s.relaxed = xc;
      s.value = tape.constant(fx) + (fx - cfg.baseline) * score;
      s.objective_value = fx;
      s.soft_sample = x.onehot;
      s.hard_sample = std::move(x);
      return s;
    }
  }
  throw std::invalid_argument("unhandled estimator kind");
}

GradientEstimate estimate(const EstimatorConfig& cfg, const Matrix& logits, const Objective& f, const Randomness& r) {
  Tape tape;
  Var theta = tape.lift(logits, true);
  Surrogate s = build_surrogate(cfg, theta, f, r);
  tape.backward(s.value);
  GradientEstimate est;
  est.grad = tape.grad(theta);
  if (!est.grad.allFinite()) throw std::domain_error("estimator produced a non-finite gradient");
  est.hard_sample = std::move(s.hard_sample);
  est.soft_sample = std::move(s.soft_sample);
  est.objective_value = s.objective_value;
  est.estimator = std::string(estimator_name(cfg.kind));
  est.steps = is_diffusion(cfg.kind) ? cfg.steps : 0;
  est.seed = cfg.seed;
  return est;
}

GradientEstimate estimate(const EstimatorConfig& cfg, const Matrix& logits, const Objective& f, RngStreams& rng) {
  return estimate(cfg, logits, f, draw_randomness(cfg, logits.rows(), logits.cols(), rng));
}

Matrix st_closed_form(const Matrix& probs, const Matrix& g) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out.row(i) = (row_covariance(probs.row(i)) * g.row(i).transpose()).transpose();
  }
  return out;
}

Matrix reinmax_closed_form(const Matrix& probs, const Matrix& x, const Matrix& g) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const RowVector r = x.row(i) - probs.row(i);
    const Matrix block = 0.5 * (row_covariance(probs.row(i)) + r.transpose() * r);
    out.row(i) = (block * g.row(i).transpose()).transpose();
  }
  return out;
}

Matrix reinmax_standard_form(const Matrix& probs, const Matrix& x, const Matrix& g) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const RowVector p = probs.row(i);
    const RowVector xi = x.row(i);
    // Second moment of the mixture minus its mean outer product.
    const RowVector mean = 0.5 * (p + xi);
    Matrix second = 0.5 * (xi.transpose() * xi);
    second.diagonal() += 0.5 * p.transpose();
    const Matrix mixture_cov = second - mean.transpose() * mean;
    const Matrix block = 2.0 * mixture_cov - 0.5 * row_covariance(p);
    out.row(i) = (block * g.row(i).transpose()).transpose();
  }
  return out;
}

}  // namespace redge
