#include <cmath>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "redge/analysis.hpp"
#include "redge/gradcheck.hpp"

using namespace redge;

TEST_CASE("margin of a point") {
  const MarginReport r = margin(RowVector{{0.1, 0.5, 0.4}});
  CHECK(r.argmax == 1);
  CHECK(r.margin == doctest::Approx(0.1));
  CHECK_FALSE(r.on_boundary);
  CHECK(margin(RowVector{{0.3, 0.3, 0.1}}).on_boundary);
  CHECK_THROWS_AS(margin(RowVector{{1.0}}), std::invalid_argument);
}

TEST_CASE("operator norm") {
  CHECK(operator_norm(Matrix{{3.0, 0.0}, {0.0, 1.0}}) == doctest::Approx(3.0));
  // Largest singular value of [[1, 1], [0, 1]] is the golden ratio.
  CHECK(operator_norm(Matrix{{1.0, 1.0}, {0.0, 1.0}}) == doctest::Approx(1.618033988749895).epsilon(1e-9));
  CHECK(operator_norm(Matrix::Zero(2, 3)) == 0.0);
}

TEST_CASE("time_for_c inverts (1 - t) / t^2") {
  CHECK(time_for_c(2.0) == doctest::Approx(0.5));
  CHECK_THROWS(time_for_c(0.0));
  const double t = time_for_c(123.0);
  CHECK((1.0 - t) / (t * t) == doctest::Approx(123.0));
}

TEST_CASE("t1 sweep is uniform in c and decreasing in t") {
  const std::vector<double> t = t1_sweep_in_c(1.0, 100.0, 12);
  REQUIRE(t.size() == 12);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] < t[i - 1]);
  CHECK((1.0 - t.front()) / (t.front() * t.front()) == doctest::Approx(1.0));
  CHECK((1.0 - t.back()) / (t.back() * t.back()) == doctest::Approx(100.0));
}

TEST_CASE("Jacobian decays along a t1 sweep") {
  const Matrix logits{{0.4, -0.3}};
  const Matrix x1{{-0.8, 0.6}};
  const DecayStudy study = jacobian_decay_study(logits, {1.0, 0.5}, t1_sweep_in_c(3.0, 300.0, 30), x1);
  CHECK(study.K == 2);
  CHECK(study.rows.size() == 30);
  CHECK(study.limit_margin > 0.0);
  CHECK(study.slope <= -study.limit_margin / 2.0 + 0.1);
  CHECK(study.first_c_below <= study.threshold_c);
  CHECK(study.rows.back().jac_norm < study.rows.front().jac_norm);
  std::ostringstream csv;
  write_decay_csv(csv, study);
  CHECK(csv.str().rfind("t1,", 0) == 0);
  CHECK_THROWS_AS(jacobian_decay_study(logits, {1.0, 0.5}, {0.7}, x1), std::invalid_argument);
  CHECK_THROWS_AS(jacobian_decay_study(Matrix::Zero(2, 2), {1.0, 0.5}, {0.1}, x1), std::invalid_argument);
}

TEST_CASE("straight-through is unbiased for a linear objective") {
  const FactorizedCategorical dist(Matrix{{0.2, -0.4, 0.9}, {0.0, 0.5, -0.5}});
  const Objective f = linear_objective(Matrix{{1.0, -2.0, 0.5}, {0.3, 0.0, 1.0}});
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::st;
  const BiasVarianceReport r = bias_variance(cfg, dist, f, 500, 0);
  CHECK(r.replications == 500);
  CHECK(r.bias_norm <= r.bias_ci);
  CHECK(r.mse == doctest::Approx(r.bias_norm * r.bias_norm + r.trace_cov).epsilon(1e-9));
}

TEST_CASE("REINFORCE is unbiased and its bias sits inside the interval") {
  Rng rng(4);
  const FactorizedCategorical dist(standard_normal(2, 3, rng));
  const Objective f = cubic_objective(standard_normal(2, 3, rng), standard_normal(2, 3, rng),
                                      standard_normal(2, 3, rng));
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::reinforce;
  const BiasVarianceReport r = bias_variance(cfg, dist, f, 4000, 1);
  CHECK(r.bias_norm <= r.bias_ci);
}

TEST_CASE("bias_variance is independent of the worker count") {
  const FactorizedCategorical dist(Matrix{{0.2, -0.4, 0.9}});
  const Objective f = quadratic_objective(Matrix{{1.0, 0.0, 0.5}}, Matrix{{0.2, 0.1, 0.0}}, Matrix{{1.0, 1.0, 1.0}});
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::redge_hard;
  cfg.steps = 4;
  const BiasVarianceReport a = bias_variance(cfg, dist, f, 64, 3, 1);
  const BiasVarianceReport b = bias_variance(cfg, dist, f, 64, 3, 4);
  CHECK((a.mean - b.mean).norm() == 0.0);
  CHECK(a.trace_cov == b.trace_cov);
}
