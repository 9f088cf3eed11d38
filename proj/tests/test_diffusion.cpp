#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "redge/diffusion.hpp"
#include "redge/gradcheck.hpp"

using namespace redge;

namespace {

bool grids_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > 1e-15) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("uniform grids") {
  CHECK(grids_equal(uniform_grid(2), {1.0, 0.0}));
  CHECK(grids_equal(uniform_grid(5), {1.0, 0.75, 0.5, 0.25, 0.0}));
  CHECK(grids_equal(uniform_grid(4, 0.1), {1.0, 0.55, 0.1, 0.0}));
  CHECK(grids_equal(uniform_grid(2, 1.0), {1.0, 0.0}));
  CHECK_THROWS_AS(uniform_grid(1), std::invalid_argument);
  CHECK_THROWS_AS(uniform_grid(3, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(uniform_grid(2, 0.5), std::invalid_argument);
}

TEST_CASE("linear schedule coefficients") {
  const Schedule s = linear_schedule(uniform_grid(3));
  CHECK(s.alpha(0.25) == doctest::Approx(0.75));
  CHECK(s.sigma(0.25) == doctest::Approx(0.25));
  CHECK(s.c(0.5) == doctest::Approx(2.0));
  CHECK(s.c(1.0) == 0.0);
  CHECK(s.t1() == doctest::Approx(0.5));
  CHECK(s.steps() == 3);
  CHECK_THROWS(s.c(0.0));
  CHECK_THROWS(linear_schedule({1.0, 0.5}));
  CHECK_THROWS(linear_schedule({1.0, 0.2, 0.5, 0.0}));
}

TEST_CASE("eta rules") {
  const Schedule ddpm = linear_schedule(uniform_grid(3), EtaRule::ddpm);
  // sigma_s sqrt(1 - (sigma_s alpha_t / (sigma_t alpha_s))^2) at s = 0.5, t = 0.75.
  CHECK(ddpm.eta(0.5, 0.75) == doctest::Approx(0.5 * std::sqrt(8.0 / 9.0)).epsilon(1e-14));
  CHECK(linear_schedule(uniform_grid(3), EtaRule::zero).eta(0.5, 0.75) == 0.0);
  CHECK(linear_schedule(uniform_grid(3), EtaRule::full).eta(0.5, 0.75) == doctest::Approx(0.5));
}

TEST_CASE("denoiser is softmax of phi + c_t x") {
  const Schedule s = linear_schedule(uniform_grid(3));
  Tape tape;
  const Matrix phi{{0.3, -0.4, 0.1}};
  const Matrix x{{0.2, 0.9, -0.5}};
  Var d = denoiser(tape.constant(phi), tape.constant(x), 0.5, s);
  CHECK((d.value() - softmax(phi + 2.0 * x)).norm() < 1e-15);
  CHECK_THROWS(denoiser(tape.constant(phi), tape.constant(x), 0.0, s));
}

TEST_CASE("covariance-base denoiser logits") {
  const Schedule s = linear_schedule(uniform_grid(3));
  Tape tape;
  const Matrix phi{{0.5, -0.5}};
  const Matrix x{{0.4, 0.1}};
  Var logits = tape.constant(phi);
  const GaussianBase base = mle_base(logits);
  const Matrix mu = softmax(phi);
  const Matrix lambda = (mu.array() * (1.0 - mu.array())).inverse().matrix();
  const Matrix expected =
      phi + (0.5 / 0.25) * (lambda.array() * (x.array() - 0.5 * mu.array() - 0.25)).matrix();
  CHECK((denoiser_cov_logits(logits, tape.constant(x), 0.5, s, base).value() - expected).norm() < 1e-13);
}

TEST_CASE("variance floor of the moment-matched base") {
  Tape tape;
  const GaussianBase base = mle_base(tape.constant(Matrix{{40.0, 0.0, 0.0}}));
  CHECK(base.v.value().minCoeff() == kVarianceFloor);
  CHECK(base.lambda.value().maxCoeff() == doctest::Approx(1.0 / kVarianceFloor));
}

TEST_CASE("a DDIM step to s = 0 returns the denoiser output") {
  const Schedule s = linear_schedule(uniform_grid(3));
  Tape tape;
  Var x = tape.constant(Matrix{{0.3, 0.7}});
  Var d = tape.constant(Matrix{{0.9, 0.1}});
  CHECK((ddim_step(0.0, 0.5, x, d, s).value() - d.value()).norm() == 0.0);
  // alpha_s = 0.5, alpha_t = 0.25, sigma_s / sigma_t = 2/3.
  const Matrix mid = ddim_step(0.5, 0.75, x, d, s).value();
  const Matrix expected = (0.5 - 0.25 * 2.0 / 3.0) * d.value() + (2.0 / 3.0) * x.value();
  CHECK((mid - expected).norm() < 1e-15);
}

TEST_CASE("a single-step chain returns the probabilities") {
  // At t = 1 the denoiser ignores x, and the last step outputs it.
  Tape tape;
  const Matrix phi{{1.0, -0.5, 0.2}};
  Rng rng(2);
  Trajectory traj = sample_trajectory(tape.constant(phi), linear_schedule(), rng);
  CHECK((traj.soft_sample.value() - softmax(phi)).norm() < 1e-15);
  CHECK(traj.states.size() == 2);
}

TEST_CASE("soft samples lie in the simplex and noise is reproducible") {
  const Schedule s = linear_schedule(uniform_grid(6), EtaRule::ddpm);
  Rng a(9), b(9);
  const TrajectoryNoise na = draw_trajectory_noise(s, 4, 5, a);
  const TrajectoryNoise nb = draw_trajectory_noise(s, 4, 5, b);
  CHECK((na.x1 - nb.x1).norm() == 0.0);
  CHECK(na.steps.size() == nb.steps.size());
  Tape tape;
  Trajectory traj = sample_trajectory(tape.constant(Matrix::Zero(4, 5)), s, na);
  const Matrix y = traj.soft_sample.value();
  CHECK(y.minCoeff() >= 0.0);
  CHECK((y.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("closed-form Jacobian blocks") {
  const Schedule s = linear_schedule(uniform_grid(3));
  const Matrix phi{{0.2, -0.1, 0.4}};
  const Matrix x{{0.1, 0.5, -0.3}};
  const DenoiserJacobians j = denoiser_jacobians(phi, x, 0.5, s);
  const Matrix d = softmax(phi + 2.0 * x);
  const Matrix sigma = Matrix(d.row(0).asDiagonal()) - d.transpose() * d;
  CHECK((j.wrt_logits[0] - sigma).norm() < 1e-15);
  CHECK((j.wrt_x[0] - 2.0 * sigma).norm() < 1e-15);
}

TEST_CASE("denoiser Jacobian oracle passes and detects a fault") {
  const OracleOutcome ok = check_denoiser_jacobians(10, 3);
  CHECK_MESSAGE(ok.passed(), ok.detail);
  CHECK_FALSE(check_denoiser_jacobians(10, 3, true).passed());
}

TEST_CASE("DDIM finite-difference oracle passes") {
  const OracleOutcome o = check_ddim_finite_differences(5, 4);
  CHECK_MESSAGE(o.passed(), o.detail);
}
