#include "redge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "redge/format.hpp"
#include "redge/parallel.hpp"
#include "redge/rng.hpp"

namespace redge {

MarginReport margin(const RowVector& x) {
  if (x.size() < 2) throw std::invalid_argument("margin: needs at least two coordinates");
  MarginReport r;
  r.x = x;
  Eigen::Index k = 0;
  const double top = x.maxCoeff(&k);
  r.argmax = static_cast<int>(k);
  double second = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (j != k) second = std::max(second, x(j));
  }
  r.margin = top - second;
  r.on_boundary = r.margin <= kMarginTolerance;
  return r;
}

double operator_norm(const Matrix& a, double tol, int max_iter) {
  if (a.size() == 0) return 0.0;
  const Matrix gram = a.transpose() * a;
  if (gram.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Vector v(gram.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.01 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = gram * v;
    const double next = v.dot(w);
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    v = w / n;
    if (std::abs(next - lambda) <= tol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

double time_for_c(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("time_for_c: c must be positive");
  return 2.0 / (1.0 + std::sqrt(1.0 + 4.0 * c));
}

std::vector<double> t1_sweep_in_c(double c_lo, double c_hi, int points) {
  if (points < 2 || !(c_lo > 0.0) || !(c_hi > c_lo)) throw std::invalid_argument("t1_sweep_in_c: bad range");
  std::vector<double> out;
  for (int i = 0; i < points; ++i) out.push_back(time_for_c(c_lo + (c_hi - c_lo) * i / (points - 1)));
  return out;
}

DecayStudy jacobian_decay_study(const Matrix& logits, const std::vector<double>& upper_grid,
                                const std::vector<double>& t1_list, const Matrix& x1) {
  if (logits.rows() != 1) throw std::invalid_argument("jacobian_decay_study: logits must be a single row");
  if (upper_grid.empty() || upper_grid.front() != 1.0) {
    throw std::invalid_argument("jacobian_decay_study: upper grid must start at 1");
  }
  const double t2 = upper_grid.back();
  for (std::size_t i = 0; i < t1_list.size(); ++i) {
    if (!(t1_list[i] > 0.0 && t1_list[i] < t2)) {
      throw std::invalid_argument("jacobian_decay_study: every t1 must lie in (0, t2)");
    }
    if (i > 0 && !(t1_list[i] < t1_list[i - 1])) {
      throw std::invalid_argument("jacobian_decay_study: t1 list must be decreasing");
    }
  }
  const auto K = static_cast<int>(logits.cols());
  const double mk = 2.0 * K * (K - 1);
  DecayStudy study;
  study.K = K;

  {
    // The t1 -> 0 limit of x_{t1} is the denoiser output at t_2.
    std::vector<double> grid = upper_grid;
    grid.push_back(0.0);
    Tape tape;
    Trajectory traj = sample_trajectory(tape.constant(logits), linear_schedule(grid), TrajectoryNoise{x1, {}});
    const MarginReport lim = margin(traj.soft_sample.value().row(0));
    study.limit_margin = lim.margin;
    study.limit_on_boundary = lim.on_boundary;
  }

  for (double t1 : t1_list) {
    std::vector<double> grid = upper_grid;
    grid.push_back(t1);
    grid.push_back(0.0);
    const Schedule schedule = linear_schedule(grid);
    Tape tape;
    Var theta = tape.lift(logits, true);
    Trajectory traj = sample_trajectory(theta, schedule, TrajectoryNoise{x1, {}});
    DecayRow row;
    row.t1 = t1;
    row.c_t1 = schedule.c(t1);
    row.jac_norm = operator_norm(tape.jacobian(traj.soft_sample, theta));
    row.state_jac_norm = operator_norm(tape.jacobian(traj.x_t1, theta));
    const MarginReport m = margin(traj.x_t1.value().row(0));
    row.margin = m.margin;
    row.on_boundary = m.on_boundary;
    study.M = std::max(study.M, row.state_jac_norm);
    study.rows.push_back(row);
  }

  study.first_c_below = std::numeric_limits<double>::infinity();
  for (DecayRow& row : study.rows) {
    row.bound_value = mk * (1.0 + row.c_t1 * study.M) * std::exp(-row.margin * row.c_t1 / 2.0);
    if (row.jac_norm < 1e-6 && row.c_t1 < study.first_c_below) study.first_c_below = row.c_t1;
  }

  // Smallest c where the bound drops below 1e-6; the bound is eventually
  // decreasing, so bisect after bracketing.
  if (study.limit_margin > 0.0) {
    const double m = study.limit_margin;
    auto bound = [&](double c) { return mk * (1.0 + c * study.M) * std::exp(-m * c / 2.0); };
    double lo = 0.0;
    double hi = 1.0;
    while (bound(hi) >= 1e-6) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (bound(mid) >= 1e-6 ? lo : hi) = mid;
    }
    study.threshold_c = hi;
  } else {
    study.threshold_c = std::numeric_limits<double>::infinity();
  }

  // The bound evaluated row by row, with the margin of x_{t1} at that row;
  // the threshold is where it drops below 1e-6 for good.
  study.row_threshold_c = std::numeric_limits<double>::infinity();
  for (auto it = study.rows.rbegin(); it != study.rows.rend(); ++it) {
    if (it->on_boundary || !(it->bound_value < 1e-6)) break;
    study.row_threshold_c = it->c_t1;
  }

  std::vector<const DecayRow*> usable;
  for (const DecayRow& row : study.rows) {
    if (!row.on_boundary && row.jac_norm > 0.0) usable.push_back(&row);
  }
  const std::size_t tail = std::max<std::size_t>(2, usable.size() / 3);
  const std::size_t start = usable.size() > tail ? usable.size() - tail : 0;
  if (usable.size() - start >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(usable.size() - start);
    for (std::size_t i = start; i < usable.size(); ++i) {
      const double x = usable[i]->c_t1;
      const double y = std::log(usable[i]->jac_norm / (1.0 + x * study.M));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    study.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  } else {
    study.slope = std::numeric_limits<double>::quiet_NaN();
  }
  return study;
}

void write_decay_csv(std::ostream& out, const DecayStudy& study) {
  out << "t1,c_t1,jac_norm,margin,bound_value\n";
  for (const DecayRow& r : study.rows) {
    out << format_double(r.t1) << ',' << format_double(r.c_t1) << ',' << format_double(r.jac_norm) << ','
        << format_double(r.margin) << ',' << format_double(r.bound_value) << '\n';
  }
}

BiasVarianceReport bias_variance(const EstimatorConfig& cfg, const FactorizedCategorical& dist, const Objective& f,
                                 int replications, std::uint64_t seed, int threads) {
  if (replications < 1) throw std::invalid_argument("bias_variance: need at least one replication");
  BiasVarianceReport rep;
  rep.estimator = std::string(estimator_name(cfg.kind));
  rep.replications = replications;
  rep.exact = exact_gradient(dist, as_discrete(f));

  std::vector<Matrix> grads(replications);
  parallel_for(static_cast<std::size_t>(replications), threads, [&](std::size_t r) {
    RngStreams rng = RngStreams::from_seed(derive_seed(seed, r));
    grads[r] = estimate(cfg, dist.logits(), f, rng).grad;
  });

  rep.mean = Matrix::Zero(dist.rows(), dist.cols());
  for (const Matrix& g : grads) rep.mean += g;
  rep.mean /= replications;
  double tc = 0.0;
  double mse = 0.0;
  for (const Matrix& g : grads) {
    tc += (g - rep.mean).squaredNorm();
    mse += (g - rep.exact).squaredNorm();
  }
  rep.trace_cov = tc / replications;
  rep.mse = mse / replications;
  rep.bias_norm = (rep.mean - rep.exact).norm();
  // The floor covers rounding in estimators whose variance is exactly zero.
  rep.bias_ci = 3.0 * std::sqrt(rep.trace_cov / replications) + 1e-9 * (1.0 + rep.exact.norm());
  return rep;
}

}  // namespace redge
