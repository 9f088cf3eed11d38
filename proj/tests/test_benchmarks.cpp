#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "redge/bench/adam.hpp"
#include "redge/bench/harness.hpp"

using namespace redge;

namespace {

const char* kSolved = "534678912672195348198342567859761423426853791713924856961537284287419635345286179";

Matrix rows_of(int L, int category) {
  Matrix x = Matrix::Zero(L, 2);
  x.col(category).setOnes();
  return x;
}

}  // namespace

TEST_CASE("first Adam step moves by lr times the gradient sign") {
  AdamState s(1, 3, 0.05);
  Matrix params = Matrix::Zero(1, 3);
  const Matrix g{{2.0, -0.5, 1e-3}};
  adam_step(s, params, g);
  for (int j = 0; j < 3; ++j) {
    CHECK(params(0, j) == doctest::Approx(-0.05 * g(0, j) / (std::abs(g(0, j)) + 1e-8)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(adam_step(s, params, Matrix{{std::nan(""), 0.0, 0.0}}), std::domain_error);
  CHECK_THROWS_AS(adam_step(s, params, Matrix::Zero(1, 2)), std::invalid_argument);
}

TEST_CASE("Adam minimises a quadratic") {
  AdamState s(1, 2, 0.1);
  Matrix x{{3.0, -2.0}};
  for (int i = 0; i < 2000; ++i) adam_step(s, x, Matrix(2.0 * x));
  CHECK(x.norm() < 1e-2);
}

TEST_CASE("polynomial programme at the vertices") {
  PolyProgProblem power;
  PolyProgProblem linear;
  linear.relaxation = Relaxation::linear;
  Tape tape;
  for (int k = 0; k < 2; ++k) {
    const double expected = k == 0 ? 0.2025 : 0.3025;
    Var x = tape.constant(rows_of(power.L, k));
    CHECK(polyprog_loss(x, power).scalar() == doctest::Approx(expected).epsilon(1e-14));
    CHECK(polyprog_loss(x, linear).scalar() == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK(polyprog_optimum(power) == doctest::Approx(0.2025));
  // Uniform logits average the two vertices.
  CHECK(polyprog_exact_loss(Matrix::Zero(power.L, 2), power) == doctest::Approx(0.2525));
  CHECK(polyprog_exact_loss(Matrix::Zero(power.L, 2), linear) == doctest::Approx(0.2525));
}

TEST_CASE("polynomial programme validation") {
  PolyProgProblem bad;
  bad.L = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  PolyProgProblem bad_p;
  bad_p.p = 0.0;
  CHECK_THROWS_AS(bad_p.validate(), std::invalid_argument);
}

TEST_CASE("Sudoku penalties of reference grids") {
  Matrix ones = Matrix::Zero(81, 9);
  ones.col(0).setOnes();
  CHECK(sudoku_penalty(ones) == doctest::Approx(1944.0));
  CHECK(sudoku_penalty(Matrix::Constant(81, 9, 1.0 / 9.0)) == doctest::Approx(0.0).epsilon(1e-12));
  const SudokuProblem solved = parse_sudoku(kSolved);
  CHECK(solved.free_count() == 0);
  CHECK(sudoku_valid(solved.cells()));
  CHECK(sudoku_penalty(solved.full_grid(Matrix::Zero(0, 9))) == 0.0);
  CHECK_THROWS(parse_sudoku("123"));
  CHECK_THROWS(parse_sudoku(std::string(80, '.') + "x"));
}

TEST_CASE("Sudoku free-cell penalty agrees with the full-grid penalty") {
  std::string line = kSolved;
  for (int i : {0, 10, 20, 40, 80}) line[i] = '.';
  const SudokuProblem p = parse_sudoku(line);
  REQUIRE(p.free_count() == 5);
  Rng rng(1);
  const Matrix x = softmax(standard_normal(5, 9, rng));
  CHECK(p.penalty(x) == doctest::Approx(sudoku_penalty(p.full_grid(x))).epsilon(1e-13));
  Tape tape;
  CHECK(sudoku_penalty(tape.constant(x), p).scalar() == doctest::Approx(p.penalty(x)).epsilon(1e-13));
  CHECK(sudoku_groups().size() == 27);
}

TEST_CASE("generated puzzles are deterministic and consistent") {
  const auto a = generate_puzzles(5, 7, 45);
  const auto b = generate_puzzles(5, 7, 45);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cells() == b[i].cells());
    CHECK(a[i].free_count() == 45);
  }
  CHECK(a[0].cells() != a[1].cells());
  CHECK(generate_puzzles(2, 7, 45)[1].cells() == a[1].cells());
  // Zero blanks gives the underlying valid grid.
  CHECK(sudoku_valid(generate_puzzles(1, 7, 0)[0].cells()));
}

TEST_CASE("GMM terms") {
  GmmConfig cfg;
  cfg.N = 6;
  cfg.K = 3;
  const GmmProblem problem = gmm_generate(2, cfg);
  CHECK(problem.Y.rows() == 6);
  CHECK(problem.z.size() == 6);
  Tape tape;
  // Uniform assignments: entropy and prior cancel.
  CHECK(gmm_entropy_prior(tape.constant(Matrix::Zero(6, 3)), problem).scalar() == doctest::Approx(0.0).scale(1.0));
  const double map0 = gmm_map_penalty(tape.constant(Matrix::Zero(3, 2)), problem).scalar();
  CHECK(map0 == doctest::Approx(3.0 * std::log(2.0 * std::numbers::pi * 225.0)).epsilon(1e-13));
}

TEST_CASE("GMM likelihood agrees with the per-component table on one-hot rows") {
  GmmConfig cfg;
  cfg.N = 5;
  cfg.K = 4;
  const GmmProblem problem = gmm_generate(3, cfg);
  Rng rng(3);
  const Matrix mhat = 10.0 * standard_normal(4, 2, rng);
  Tape tape;
  Var m = tape.constant(mhat);
  const Matrix nll = gmm_nll(m, problem).value();
  const std::vector<int> pick{0, 3, 1, 1, 2};
  Matrix z = Matrix::Zero(5, 4);
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    z(i, pick[i]) = 1.0;
    expected += nll(i, pick[i]);
  }
  CHECK(gmm_likelihood(tape.constant(z), m, problem).scalar() == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("GMM objective equals the enumerated expectation") {
  GmmConfig cfg;
  cfg.N = 4;
  cfg.K = 3;
  const GmmProblem problem = gmm_generate(4, cfg);
  Rng rng(4);
  const Matrix logits = standard_normal(4, 3, rng);
  const Matrix mhat = 5.0 * standard_normal(3, 2, rng);
  Tape tape;
  Var m = tape.constant(mhat);
  const DiscreteFunction lik = [&](const Matrix& z) {
    Tape scratch;
    return gmm_likelihood(scratch.constant(z), scratch.constant(mhat), problem).scalar();
  };
  const double enumerated = exact_objective(FactorizedCategorical(logits), lik) +
                            gmm_entropy_prior(tape.constant(logits), problem).scalar() +
                            gmm_map_penalty(m, problem).scalar();
  CHECK(std::abs(gmm_nelbo(logits, mhat, problem) - enumerated) < 1e-10);
}

TEST_CASE("clustering accuracy is invariant to label permutations") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  Matrix logits = Matrix::Zero(6, 3);
  for (int i = 0; i < 6; ++i) logits(i, truth[i]) = 5.0;
  CHECK(clustering_accuracy(logits, truth) == 1.0);
  Matrix permuted = Matrix::Zero(6, 3);
  for (int i = 0; i < 6; ++i) permuted(i, (truth[i] + 1) % 3) = 5.0;
  CHECK(clustering_accuracy(permuted, truth) == 1.0);
  Matrix lumped = Matrix::Zero(6, 3);
  lumped.col(0).setConstant(5.0);
  CHECK(clustering_accuracy(lumped, truth) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("Hungarian assignment finds the minimum-cost matching") {
  const Matrix cost{{4.0, 1.0, 3.0}, {2.0, 0.0, 5.0}, {3.0, 2.0, 2.0}};
  const std::vector<int> m = hungarian_assignment(cost);
  CHECK(cost(0, m[0]) + cost(1, m[1]) + cost(2, m[2]) == 5.0);
  CHECK_THROWS(hungarian_assignment(Matrix::Zero(2, 3)));
}

TEST_CASE("benchmark runs are deterministic") {
  PolyProgProblem problem;
  problem.L = 8;
  RunOptions opt;
  opt.steps = 30;
  const EstimatorConfig cfg = default_estimator_config(BenchProblem::poly, EstimatorKind::redge_hard);
  std::ostringstream a, b;
  write_trace_csv(a, run_polyprog(problem, cfg, opt, 4));
  write_trace_csv(b, run_polyprog(problem, cfg, opt, 4));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("step,loss,grad_norm,wall_ms\n", 0) == 0);
}

TEST_CASE("short benchmark runs make progress") {
  RunOptions opt;
  opt.steps = 200;
  PolyProgProblem problem;
  problem.L = 16;
  const RunResult poly = run_polyprog(problem, default_estimator_config(BenchProblem::poly, EstimatorKind::reinmax),
                                      opt, 16);
  CHECK_FALSE(poly.diverged);
  CHECK(poly.metric("final_loss") < poly.trace.front().loss);
  CHECK_THROWS_AS(poly.metric("nope"), std::out_of_range);

  GmmConfig cfg;
  cfg.N = 50;
  cfg.K = 4;
  RunOptions gopt;
  gopt.steps = 50;
  gopt.lr = 0.01;
  const RunResult gmm = run_gmm(gmm_generate(0, cfg), default_estimator_config(BenchProblem::gmm, EstimatorKind::st),
                                gopt);
  CHECK_FALSE(gmm.diverged);
  CHECK(gmm.trace.size() == 50);
}

TEST_CASE("Sudoku runs keep puzzle order under threads") {
  const auto puzzles = generate_puzzles(3, 1, 10);
  RunOptions opt;
  opt.steps = 40;
  const EstimatorConfig cfg = default_estimator_config(BenchProblem::sudoku, EstimatorKind::st);
  const auto serial = run_sudoku_batch(puzzles, cfg, opt, 1);
  const auto threaded = run_sudoku_batch(puzzles, cfg, opt, 3);
  for (std::size_t i = 0; i < puzzles.size(); ++i) {
    std::ostringstream a, b;
    write_trace_csv(a, serial[i]);
    write_trace_csv(b, threaded[i]);
    CHECK(a.str() == b.str());
  }
  const RunResult done = run_sudoku(parse_sudoku(kSolved), cfg, opt);
  CHECK(done.metric("solved") == 1.0);
}

TEST_CASE("problem names") {
  CHECK(parse_problem("gmm") == BenchProblem::gmm);
  CHECK(problem_name(BenchProblem::sudoku) == "sudoku");
  CHECK_THROWS(parse_problem("mnist"));
}
