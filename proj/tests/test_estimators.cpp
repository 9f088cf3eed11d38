#include <stdexcept>

#include "doctest.h"
#include "redge/estimators.hpp"
#include "redge/gradcheck.hpp"

using namespace redge;

namespace {

const EstimatorKind kAll[] = {EstimatorKind::st,         EstimatorKind::reinmax,    EstimatorKind::gumbel_softmax_st,
                              EstimatorKind::redge_soft, EstimatorKind::redge_hard, EstimatorKind::redge_max,
                              EstimatorKind::redge_cov,  EstimatorKind::reinforce};

EstimatorConfig config(EstimatorKind kind, int steps = 4) {
  EstimatorConfig c;
  c.kind = kind;
  c.steps = steps;
  return c;
}

}  // namespace

TEST_CASE("estimator names round-trip") {
  for (EstimatorKind k : kAll) CHECK(parse_estimator(estimator_name(k)) == k);
  CHECK(estimator_name(EstimatorKind::redge_hard) == "redge");
  CHECK_THROWS_AS(parse_estimator("bogus"), std::invalid_argument);
  CHECK(is_diffusion(EstimatorKind::redge_cov));
  CHECK_FALSE(is_diffusion(EstimatorKind::reinmax));
}

TEST_CASE("configuration validation") {
  CHECK_THROWS_AS(config(EstimatorKind::redge_hard, 1).validate(), std::invalid_argument);
  EstimatorConfig gs = config(EstimatorKind::gumbel_softmax_st);
  gs.temperature = 0.0;
  CHECK_THROWS_AS(gs.validate(), std::invalid_argument);
  EstimatorConfig bad_t1 = config(EstimatorKind::redge_max, 10);
  bad_t1.t1 = 1.5;
  CHECK_THROWS_AS(bad_t1.validate(), std::invalid_argument);
  EstimatorConfig max = config(EstimatorKind::redge_max, 10);
  max.t1 = 0.5;
  CHECK(max.schedule().t1() == doctest::Approx(0.5));
}

TEST_CASE("hard estimators evaluate the objective at the hard sample") {
  const Matrix logits{{0.3, -0.2, 0.5}, {1.0, 0.0, -1.0}};
  const Objective f = linear_objective(Matrix{{1.0, 2.0, 3.0}, {-1.0, 0.5, 2.0}});
  for (EstimatorKind k : kAll) {
    if (k == EstimatorKind::redge_soft) continue;
    RngStreams rng = RngStreams::from_seed(17);
    const GradientEstimate e = estimate(config(k), logits, f, rng);
    REQUIRE(e.hard_sample.has_value());
    CHECK(e.objective_value == doctest::Approx(evaluate(f, e.hard_sample->onehot)));
    CHECK(e.grad.allFinite());
    CHECK(e.grad.rows() == 2);
  }
}

TEST_CASE("identical seeds give identical estimates") {
  const Matrix logits{{0.3, -0.2, 0.5}};
  const Objective f = smooth_objective(Matrix{{1.0, 2.0, 3.0}}, Matrix{{0.1, 0.2, 0.3}});
  for (EstimatorKind k : kAll) {
    RngStreams a = RngStreams::from_seed(5);
    RngStreams b = RngStreams::from_seed(5);
    CHECK((estimate(config(k), logits, f, a).grad - estimate(config(k), logits, f, b).grad).norm() == 0.0);
  }
}

TEST_CASE("straight-through with a linear objective is Sigma(p) a") {
  const Matrix logits{{0.3, -0.2, 0.5}};
  const Matrix a{{1.0, 2.0, 3.0}};
  RngStreams rng = RngStreams::from_seed(1);
  const GradientEstimate e = estimate(config(EstimatorKind::st), logits, linear_objective(a), rng);
  CHECK((e.grad - st_closed_form(softmax(logits), a)).norm() < 1e-15);
}

TEST_CASE("ReinMax forms") {
  const Matrix p{{0.2, 0.5, 0.3}};
  const Matrix x{{0.0, 0.0, 1.0}};
  const Matrix g{{1.0, -1.0, 2.0}};
  const Matrix closed = reinmax_closed_form(p, x, g);
  const Matrix d = x - p;
  const Matrix expected =
      (0.5 * (row_covariance(p.row(0)) + d.transpose() * d) * g.transpose()).transpose();
  CHECK((closed - expected).norm() < 1e-15);
  CHECK((reinmax_standard_form(p, x, g) - closed).norm() < 1e-15);
  const OracleOutcome o = check_reinmax_forms(200, 3);
  CHECK_MESSAGE(o.passed(), o.detail);
}

TEST_CASE("forced hard samples replace the Gumbel draw") {
  const Matrix logits{{0.0, 0.0}};
  const Objective f = linear_objective(Matrix{{0.0, 1.0}});
  EstimatorConfig cfg = config(EstimatorKind::st);
  RngStreams rng = RngStreams::from_seed(0);
  Randomness r = draw_randomness(cfg, 1, 2, rng);
  r.forced_hard = Matrix{{0.0, 1.0}};
  const GradientEstimate e = estimate(cfg, logits, f, r);
  CHECK(e.hard_sample->indices[0] == 1);
  CHECK(e.objective_value == 1.0);
}

TEST_CASE("estimator oracles pass") {
  for (const OracleOutcome& o :
       {check_estimator_finite_differences(5, 1), check_reduction_identities(10, 1),
        check_st_linear_exactness(5, 1), check_reinmax_quadratic_exactness(5, 1)}) {
    CHECK_MESSAGE(o.passed(), o.name << ": " << o.detail);
  }
}
