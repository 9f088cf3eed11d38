#include "redge/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "redge/diffusion.hpp"
#include "redge/estimators.hpp"
#include "redge/format.hpp"

namespace redge {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  return (lo + (hi - lo) * uniform01(rows, cols, rng).array()).matrix();
}

int uniform_int(int lo, int hi, Rng& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Matrix random_onehot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix x = Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) x(i, uniform_int(0, static_cast<int>(cols) - 1, rng)) = 1.0;
  return x;
}

/// Small matrices in full, larger ones by their worst entry only.
std::string describe(const Matrix& got, const Matrix& want) {
  std::ostringstream os;
  if (got.size() <= 12 && got.size() == want.size()) {
    auto list = [&os](const Matrix& m) {
      os << '[';
      for (Eigen::Index i = 0; i < m.size(); ++i) os << (i ? " " : "") << format_double(m.data()[i]);
      os << ']';
    };
    os << "got ";
    list(got);
    os << " expected ";
    list(want);
    return os.str();
  }
  if (got.rows() != want.rows() || got.cols() != want.cols()) return "shape mismatch";
  Eigen::Index r = 0, c = 0;
  (got - want).cwiseAbs().maxCoeff(&r, &c);
  os << "worst entry (" << r << ", " << c << ") of " << got.rows() << "x" << got.cols() << ": got "
     << format_double(got(r, c)) << " expected " << format_double(want(r, c));
  return os.str();
}

/// Records one comparison, keeping the worst.
void record(OracleOutcome& out, double err, const std::string& where, const Matrix& got, const Matrix& want) {
  const double e = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
  if (out.instances == 0 || e > out.max_error) {
    out.max_error = e;
    out.detail = where + ": " + describe(got, want);
  }
  ++out.instances;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

Matrix block_diagonal(const std::vector<Matrix>& blocks) {
  Eigen::Index n = 0;
  for (const Matrix& b : blocks) n += b.rows();
  Matrix out = Matrix::Zero(n, n);
  Eigen::Index at = 0;
  for (const Matrix& b : blocks) {
    out.block(at, at, b.rows(), b.cols()) = b;
    at += b.rows();
  }
  return out;
}

/// Soft sample T_0(x_1) of the deterministic chain for plain logits.
Matrix soft_sample(const Matrix& logits, const Schedule& schedule, const TrajectoryNoise& noise,
                   const Matrix* base_logits) {
  Tape tape;
  Var theta = tape.constant(logits);
  if (base_logits == nullptr) return sample_trajectory(theta, schedule, noise).soft_sample.value();
  const GaussianBase base = mle_base(tape.constant(*base_logits), false);
  return sample_trajectory(theta, schedule, noise, &base).soft_sample.value();
}

using Check = std::function<OracleOutcome(std::uint64_t, bool)>;

struct NamedCheck {
  const char* name;
  Check run;
};

const std::vector<NamedCheck>& registry() {
  static const std::vector<NamedCheck> checks{
      {"tape_finite_differences", [](std::uint64_t s, bool) { return check_tape_finite_differences(10, s); }},
      {"ddim_finite_differences", [](std::uint64_t s, bool) { return check_ddim_finite_differences(5, s); }},
      {"denoiser_jacobian", [](std::uint64_t s, bool f) { return check_denoiser_jacobians(10, s, f); }},
      {"estimator_finite_differences",
       [](std::uint64_t s, bool) { return check_estimator_finite_differences(4, s); }},
      {"reduction_identities", [](std::uint64_t s, bool) { return check_reduction_identities(10, s); }},
      {"reinmax_forms", [](std::uint64_t s, bool) { return check_reinmax_forms(200, s); }},
      {"st_linear_exactness", [](std::uint64_t s, bool) { return check_st_linear_exactness(3, s); }},
      {"reinmax_quadratic_exactness",
       [](std::uint64_t s, bool) { return check_reinmax_quadratic_exactness(3, s); }},
      {"reinforce_exactness", [](std::uint64_t s, bool) { return check_reinforce_exactness(3, s); }},
      {"mixture_covariance", [](std::uint64_t s, bool) { return check_mixture_covariance(20, s); }},
  };
  return checks;
}

}  // namespace

Objective linear_objective(Matrix a) {
  return [a = std::move(a)](const Var& y) { return dot(y.tape().constant(a), y); };
}

Objective quadratic_objective(Matrix a, Matrix b, Matrix c) {
  return [a = std::move(a), b = std::move(b), c = std::move(c)](const Var& y) {
    Tape& t = y.tape();
    return dot(t.constant(a), y) + square(dot(t.constant(b), y)) + dot(t.constant(c), hadamard(y, y));
  };
}

Objective cubic_objective(Matrix a, Matrix b, Matrix c) {
  return [a = std::move(a), b = std::move(b), c = std::move(c)](const Var& y) {
    Tape& t = y.tape();
    return dot(t.constant(a), y) + square(dot(t.constant(b), y)) + pow(dot(t.constant(c), y), 3.0);
  };
}

Objective smooth_objective(Matrix a, Matrix b) {
  return [a = std::move(a), b = std::move(b)](const Var& y) {
    Tape& t = y.tape();
    return dot(t.constant(a), y) + sum(square(y - t.constant(b))) + 0.1 * sum(exp(y));
  };
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

OracleOutcome check_tape_finite_differences(int instances, std::uint64_t seed) {
  OracleOutcome out{"tape_finite_differences", 0, 0.0, 1e-5, ""};
  Rng rng(derive_seed(seed, 101));
  for (int n = 0; n < instances; ++n) {
    const int L = uniform_int(1, 3, rng);
    const int K = uniform_int(2, 5, rng);
    const Matrix x0 = uniform_matrix(L, K, -3, 3, rng);
    const Matrix target = uniform_matrix(L, K, 0, 1, rng);
    auto loss = [&](const Var& x) {
      Tape& t = x.tape();
      Var p = softmax_rows(x);
      return sum(square(p - t.constant(target))) + 0.3 * sum(hadamard(p, log_softmax_rows(x)));
    };
    Tape tape;
    Var x = tape.lift(x0, true);
    tape.backward(loss(x));
    const Matrix got = tape.grad(x);
    const Matrix want = finite_diff_gradient([&](const Matrix& m) { return evaluate(loss, m); }, x0);
    record(out, relative_error(got, want), "instance " + std::to_string(n), got, want);
  }
  return out;
}

OracleOutcome check_ddim_finite_differences(int instances, std::uint64_t seed) {
  OracleOutcome out{"ddim_finite_differences", 0, 0.0, 1e-5, ""};
  Rng rng(derive_seed(seed, 102));
  const Schedule schedule = linear_schedule(uniform_grid(4));
  for (int n = 0; n < instances; ++n) {
    const int L = uniform_int(1, 3, rng);
    const int K = uniform_int(2, 4, rng);
    const Matrix theta0 = uniform_matrix(L, K, -2, 2, rng);
    const Matrix w = uniform_matrix(L, K, -1, 1, rng);
    const TrajectoryNoise noise{standard_normal(L, K, rng), {}};
    Tape tape;
    Var theta = tape.lift(theta0, true);
    Var y = sample_trajectory(theta, schedule, noise).soft_sample;
    tape.backward(dot(tape.constant(w), y));
    const Matrix got = tape.grad(theta);
    const Matrix want = finite_diff_gradient(
        [&](const Matrix& th) { return soft_sample(th, schedule, noise, nullptr).cwiseProduct(w).sum(); }, theta0);
    record(out, relative_error(got, want), "instance " + std::to_string(n), got, want);
  }
  return out;
}

OracleOutcome check_denoiser_jacobians(int instances, std::uint64_t seed, bool inject_fault) {
  OracleOutcome out{"denoiser_jacobian", 0, 0.0, 1e-8, ""};
  Rng rng(derive_seed(seed, 103));
  const int ks[] = {2, 3, 8};
  const Schedule schedule = linear_schedule();
  for (int n = 0; n < instances; ++n) {
    const int K = ks[n % 3];
    const int L = uniform_int(1, 3, rng);
    const double t = 0.05 + 0.95 * uniform01(1, 1, rng)(0, 0);
    const Matrix theta0 = uniform_matrix(L, K, -3, 3, rng);
    const Matrix x0 = standard_normal(L, K, rng);
    Tape tape;
    Var theta = tape.lift(theta0, true);
    Var x = tape.lift(x0, true);
    Var d = denoiser(theta, x, t, schedule);
    const Matrix auto_theta = tape.jacobian(d, theta);
    const Matrix auto_x = tape.jacobian(d, x);
    DenoiserJacobians closed = denoiser_jacobians(theta0, x0, t, schedule);
    if (inject_fault) {
      for (Matrix& b : closed.wrt_x) b = -b;
    }
    const Matrix ct = block_diagonal(closed.wrt_logits);
    const Matrix cx = block_diagonal(closed.wrt_x);
    const std::string where = "K=" + std::to_string(K) + " L=" + std::to_string(L) + " t=" + format_double(t);
    record(out, max_abs(ct, auto_theta), where + " (logits)", ct, auto_theta);
    record(out, max_abs(cx, auto_x), where + " (x)", cx, auto_x);
  }
  return out;
}

OracleOutcome check_estimator_finite_differences(int instances, std::uint64_t seed) {
  OracleOutcome out{"estimator_finite_differences", 0, 0.0, 1e-5, ""};
  Rng rng(derive_seed(seed, 104));

  struct Case {
    EstimatorConfig cfg;
    const char* label;
  };
  std::vector<Case> cases;
  {
    EstimatorConfig c;
    c.kind = EstimatorKind::st;
    cases.push_back({c, "st"});
    c.kind = EstimatorKind::gumbel_softmax_st;
    c.temperature = 0.7;
    cases.push_back({c, "gs-st"});
    c = EstimatorConfig{};
    c.kind = EstimatorKind::redge_soft;
    c.steps = 4;
    cases.push_back({c, "redge-soft"});
    c.eta = EtaRule::ddpm;
    cases.push_back({c, "redge-soft (stochastic)"});
    c = EstimatorConfig{};
    c.kind = EstimatorKind::redge_hard;
    c.steps = 5;
    c.t1 = 0.3;
    cases.push_back({c, "redge"});
    c = EstimatorConfig{};
    c.kind = EstimatorKind::redge_cov;
    c.steps = 4;
    cases.push_back({c, "redge-cov"});
    c.base_backprop = false;
    cases.push_back({c, "redge-cov (base detached)"});
  }

  for (int n = 0; n < instances; ++n) {
    const int L = uniform_int(1, 3, rng);
    const int K = uniform_int(2, 4, rng);
    const Matrix theta0 = uniform_matrix(L, K, -2, 2, rng);
    const Objective f = smooth_objective(uniform_matrix(L, K, -1, 1, rng), uniform_matrix(L, K, 0, 1, rng));
    for (const Case& c : cases) {
      RngStreams streams = RngStreams::from_seed(derive_seed(seed, 1000 + n));
      const Randomness r = draw_randomness(c.cfg, L, K, streams);
      const GradientEstimate est = estimate(c.cfg, theta0, f, r);
      const Schedule schedule = c.cfg.schedule();
      std::function<double(const Matrix&)> map;
      Matrix g;
      if (est.hard_sample) g = objective_gradient(f, est.hard_sample->onehot);
      switch (c.cfg.kind) {
        case EstimatorKind::st:
          map = [&](const Matrix& th) { return softmax(th).cwiseProduct(g).sum(); };
          break;
        case EstimatorKind::gumbel_softmax_st:
          map = [&](const Matrix& th) {
            return softmax((th + r.gumbel) / c.cfg.temperature).cwiseProduct(g).sum();
          };
          break;
        case EstimatorKind::redge_soft:
          map = [&](const Matrix& th) { return evaluate(f, soft_sample(th, schedule, r.trajectory, nullptr)); };
          break;
        case EstimatorKind::redge_hard:
          map = [&](const Matrix& th) { return soft_sample(th, schedule, r.trajectory, nullptr).cwiseProduct(g).sum(); };
          break;
        case EstimatorKind::redge_cov:
          map = [&](const Matrix& th) {
            const Matrix& base_logits = c.cfg.base_backprop ? th : theta0;
            return soft_sample(th, schedule, r.trajectory, &base_logits).cwiseProduct(g).sum();
          };
          break;
        default:
          throw std::logic_error("no finite-difference oracle for this estimator");
      }
      const Matrix want = finite_diff_gradient(map, theta0);
      record(out, relative_error(est.grad, want), std::string(c.label) + " instance " + std::to_string(n), est.grad,
             want);
    }
  }
  return out;
}

OracleOutcome check_reduction_identities(int instances, std::uint64_t seed) {
  OracleOutcome out{"reduction_identities", 0, 0.0, 1e-12, ""};
  Rng rng(derive_seed(seed, 105));
  auto cfg_of = [](EstimatorKind k) {
    EstimatorConfig c;
    c.kind = k;
    c.steps = 2;
    return c;
  };
  for (int n = 0; n < instances; ++n) {
    const int L = uniform_int(1, 3, rng);
    const int K = uniform_int(2, 5, rng);
    const Matrix theta0 = uniform_matrix(L, K, -2, 2, rng);
    const Objective f = smooth_objective(uniform_matrix(L, K, -1, 1, rng), uniform_matrix(L, K, 0, 1, rng));
    RngStreams streams = RngStreams::from_seed(derive_seed(seed, 2000 + n));
    const Randomness r = draw_randomness(cfg_of(EstimatorKind::redge_hard), L, K, streams);
    const std::string at = " instance " + std::to_string(n);

    const Matrix p = softmax(theta0);
    const Matrix soft_st = st_closed_form(p, objective_gradient(f, p));
    const Matrix soft = estimate(cfg_of(EstimatorKind::redge_soft), theta0, f, r).grad;
    record(out, max_abs(soft, soft_st), "redge-soft vs soft st" + at, soft, soft_st);

    const Matrix hard = estimate(cfg_of(EstimatorKind::redge_hard), theta0, f, r).grad;
    const Matrix st = estimate(cfg_of(EstimatorKind::st), theta0, f, r).grad;
    record(out, max_abs(hard, st), "redge vs st" + at, hard, st);

    const Matrix mx = estimate(cfg_of(EstimatorKind::redge_max), theta0, f, r).grad;
    const Matrix rm = estimate(cfg_of(EstimatorKind::reinmax), theta0, f, r).grad;
    record(out, max_abs(mx, rm), "redge-max vs reinmax" + at, mx, rm);
  }
  return out;
}

OracleOutcome check_reinmax_forms(int samples, std::uint64_t seed) {
  OracleOutcome out{"reinmax_forms", 0, 0.0, 1e-12, ""};
  Rng rng(derive_seed(seed, 106));
  for (int n = 0; n < samples; ++n) {
    const int L = uniform_int(1, 3, rng);
    const int K = uniform_int(2, 6, rng);
    const FactorizedCategorical dist(uniform_matrix(L, K, -3, 3, rng));
    const Matrix x = dist.sample(rng).onehot;
    const Matrix g = uniform_matrix(L, K, -2, 2, rng);
    const Matrix a = reinmax_closed_form(dist.probs(), x, g);
    const Matrix b = reinmax_standard_form(dist.probs(), x, g);
    record(out, max_abs(a, b), "sample " + std::to_string(n), a, b);
  }
  return out;
}

namespace {

using ObjectiveFactory = std::function<Objective(Eigen::Index, Eigen::Index, Rng&)>;

OracleOutcome enumerated_mean_check(const char* name, double tol, EstimatorKind kind, const ObjectiveFactory& make,
                                    int draws, std::uint64_t seed, std::uint64_t stream) {
  OracleOutcome out{name, 0, 0.0, tol, ""};
  Rng rng(derive_seed(seed, stream));
  EstimatorConfig cfg;
  cfg.kind = kind;
  for (int L = 1; L <= 2; ++L) {
    for (int K = 2; K <= 4; ++K) {
      for (int n = 0; n < draws; ++n) {
        const FactorizedCategorical dist(uniform_matrix(L, K, -2, 2, rng));
        const Objective f = make(L, K, rng);
        Matrix mean = Matrix::Zero(L, K);
        enumerate_configurations(dist, [&](const Matrix& x, double prob) {
          Randomness r;
          r.forced_hard = x;
          mean += prob * estimate(cfg, dist.logits(), f, r).grad;
        });
        const Matrix exact = exact_gradient(dist, as_discrete(f));
        record(out, max_abs(mean, exact),
               "L=" + std::to_string(L) + " K=" + std::to_string(K) + " draw " + std::to_string(n), mean, exact);
      }
    }
  }
  return out;
}

}  // namespace

OracleOutcome check_st_linear_exactness(int draws, std::uint64_t seed) {
  return enumerated_mean_check(
      "st_linear_exactness", 1e-10, EstimatorKind::st,
      [](Eigen::Index L, Eigen::Index K, Rng& rng) { return linear_objective(uniform_matrix(L, K, -2, 2, rng)); },
      draws, seed, 107);
}

OracleOutcome check_reinmax_quadratic_exactness(int draws, std::uint64_t seed) {
  return enumerated_mean_check(
      "reinmax_quadratic_exactness", 1e-9, EstimatorKind::reinmax,
      [](Eigen::Index L, Eigen::Index K, Rng& rng) {
        return quadratic_objective(uniform_matrix(L, K, -2, 2, rng), uniform_matrix(L, K, -1, 1, rng),
                                   uniform_matrix(L, K, -1, 1, rng));
      },
      draws, seed, 108);
}

OracleOutcome check_reinforce_exactness(int draws, std::uint64_t seed) {
  return enumerated_mean_check(
      "reinforce_exactness", 1e-9, EstimatorKind::reinforce,
      [](Eigen::Index L, Eigen::Index K, Rng& rng) {
        return cubic_objective(uniform_matrix(L, K, -2, 2, rng), uniform_matrix(L, K, -1, 1, rng),
                               uniform_matrix(L, K, -1, 1, rng));
      },
      draws, seed, 109);
}

OracleOutcome check_mixture_covariance(int cases, std::uint64_t seed) {
  OracleOutcome out{"mixture_covariance", 0, 0.0, 1e-12, ""};
  Rng rng(derive_seed(seed, 110));
  for (int n = 0; n < cases; ++n) {
    const int K = uniform_int(2, 6, rng);
    const RowVector p = softmax(uniform_matrix(1, K, -3, 3, rng)).row(0);
    const RowVector x = random_onehot(1, K, rng).row(0);
    // Enumerate the K outcomes of 1/2 (pi + delta_x) directly.
    RowVector mean = RowVector::Zero(K);
    for (int k = 0; k < K; ++k) mean(k) += 0.5 * p(k) + 0.5 * x(k);
    Matrix cov = Matrix::Zero(K, K);
    for (int k = 0; k < K; ++k) {
      const double w = 0.5 * p(k) + 0.5 * x(k);
      RowVector e = RowVector::Zero(K);
      e(k) = 1.0;
      const RowVector dev = e - mean;
      cov += w * (dev.transpose() * dev);
    }
    const Matrix formula = mixture_covariance_halfhalf(p, x);
    record(out, max_abs(formula, cov), "case " + std::to_string(n), formula, cov);
  }
  return out;
}

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const NamedCheck& c : registry()) names.emplace_back(c.name);
  return names;
}

std::vector<OracleOutcome> run_gradcheck(const GradcheckOptions& options) {
  if (options.seeds.empty()) throw std::invalid_argument("gradcheck: no seeds given");
  std::vector<OracleOutcome> results;
  for (const NamedCheck& c : registry()) {
    const std::string name = c.name;
    if (!options.filter.empty() && name.find(options.filter) == std::string::npos) continue;
    OracleOutcome merged{name, 0, 0.0, 0.0, ""};
    for (std::uint64_t seed : options.seeds) {
      OracleOutcome o = c.run(seed, options.inject_fault == name);
      merged.tolerance = o.tolerance;
      const bool worse = merged.instances == 0 || !(o.max_error <= merged.max_error);
      merged.instances += o.instances;
      if (worse) {
        merged.max_error = o.max_error;
        merged.detail = "seed " + std::to_string(seed) + ", " + o.detail;
      }
    }
    results.push_back(std::move(merged));
  }
  return results;
}

}  // namespace redge
