#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "redge/gradcheck.hpp"
#include "redge/rng.hpp"
#include "redge/tensor.hpp"

using namespace redge;

TEST_CASE("softmax of (2, 0) matches the logistic function") {
  const Matrix p = softmax(Matrix{{2.0, 0.0}});
  CHECK(p(0, 0) == doctest::Approx(0.8807970779778823).epsilon(1e-14));
  CHECK(p(0, 1) == doctest::Approx(0.11920292202211755).epsilon(1e-14));
}

TEST_CASE("softmax stays finite for extreme logits") {
  const Matrix p = softmax(Matrix{{1000.0, -1000.0, 0.0}});
  CHECK(p.allFinite());
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p.row(0).sum() == doctest::Approx(1.0));
  Tape tape;
  Var s = softmax_rows(tape.constant(Matrix{{1e6, -1e6}}));
  CHECK(s.value().allFinite());
}

TEST_CASE("tape and plain softmax agree") {
  Rng rng(3);
  const Matrix x = 4.0 * standard_normal(5, 7, rng);
  Tape tape;
  const Matrix a = softmax_rows(tape.constant(x)).value();
  CHECK((a - softmax(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient of sum of squares is twice the input") {
  Tape tape;
  const Matrix x0{{1.0, -2.0}, {0.5, 3.0}};
  Var x = tape.lift(x0, true);
  tape.backward(sum(square(x)));
  CHECK((tape.grad(x) - 2.0 * x0).norm() < 1e-15);
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(11);
  const Matrix a0 = standard_normal(3, 4, rng);
  const Matrix b0 = standard_normal(4, 2, rng);
  Tape tape;
  Var a = tape.lift(a0, true);
  Var b = tape.lift(b0, false);
  tape.backward(sum(exp(scale(matmul(a, b), 0.3))));
  const Matrix fd = finite_diff_gradient(
      [&](const Matrix& m) { return (0.3 * (m * b0)).array().exp().sum(); }, a0);
  CHECK(relative_error(tape.grad(a), fd) < 1e-8);
}

TEST_CASE("repeated backward sweeps give the same gradient") {
  Tape tape;
  Var x = tape.lift(Matrix{{0.3, -0.7, 1.1}}, true);
  Var y = sum(softmax_rows(x) * 2.0 + log_softmax_rows(x));
  tape.backward(y);
  const Matrix g1 = tape.grad(x);
  tape.backward(y);
  CHECK((tape.grad(x) - g1).norm() == 0.0);
}

TEST_CASE("softmax Jacobian is diag(p) - p p^T") {
  Tape tape;
  const Matrix x0{{0.2, -1.0, 0.7}};
  Var x = tape.lift(x0, true);
  const Matrix J = tape.jacobian(softmax_rows(x), x);
  const Matrix p = softmax(x0);
  const Matrix expected = Matrix(p.row(0).asDiagonal()) - p.transpose() * p;
  CHECK((J - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("covariance link has the softmax Jacobian at the given probabilities") {
  Tape tape;
  const Matrix probs{{0.1, 0.6, 0.3}};
  Var theta = tape.lift(Matrix::Zero(1, 3), true);
  Var out = covariance_link(theta, probs);
  CHECK((out.value() - probs).norm() == 0.0);
  const Matrix expected = Matrix(probs.row(0).asDiagonal()) - probs.transpose() * probs;
  CHECK((tape.jacobian(out, theta) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("straight-through carries the hard value and the soft gradient") {
  Tape tape;
  Var x = tape.lift(Matrix{{0.5, -0.5}}, true);
  Var soft = softmax_rows(x);
  const Matrix hard{{1.0, 0.0}};
  Var st = straight_through(hard, soft);
  CHECK((st.value() - hard).norm() == 0.0);
  const Matrix a{{2.0, -1.0}};
  tape.backward(dot(st, tape.constant(a)));
  const Matrix g_st = tape.grad(x);
  tape.backward(dot(soft, tape.constant(a)));
  CHECK((g_st - tape.grad(x)).norm() == 0.0);
}

TEST_CASE("detach blocks the gradient") {
  Tape tape;
  Var x = tape.lift(Matrix{{1.0, 2.0}}, true);
  tape.backward(sum(hadamard(x, detach(x))));
  CHECK((tape.grad(x) - Matrix{{1.0, 2.0}}).norm() == 0.0);
}

TEST_CASE("reshape, transpose and broadcasts route gradients") {
  Tape tape;
  Var row = tape.lift(Matrix{{1.0, 2.0, 3.0}}, true);
  Var col = tape.lift(Matrix{{1.0}, {-1.0}}, true);
  Var m = broadcast_row(row, 2) + broadcast_col(col, 3);
  tape.backward(sum(square(transpose(reshape(m, 3, 2)))));
  // d/d row_j = sum_i 2 (row_j + col_i), d/d col_i = sum_j 2 (row_j + col_i).
  CHECK((tape.grad(row) - Matrix{{4.0, 8.0, 12.0}}).norm() < 1e-14);
  CHECK((tape.grad(col) - Matrix{{18.0}, {6.0}}).norm() < 1e-14);
  Var t = tile_rows(row, 3);
  CHECK(t.rows() == 3);
  tape.backward(sum(t));
  CHECK((tape.grad(row) - Matrix::Constant(1, 3, 3.0)).norm() == 0.0);
}

TEST_CASE("clamp_min passes gradient only on unclamped entries") {
  Tape tape;
  Var x = tape.lift(Matrix{{-1.0, 0.5}}, true);
  tape.backward(sum(clamp_min(x, 0.0)));
  CHECK((tape.grad(x) - Matrix{{0.0, 1.0}}).norm() == 0.0);
}

TEST_CASE("unused leaves get zero gradients") {
  Tape tape;
  Var x = tape.lift(Matrix{{1.0}}, true);
  Var unused = tape.lift(Matrix{{1.0, 1.0}}, true);
  tape.backward(square(x));
  CHECK(tape.grad(unused).norm() == 0.0);
  CHECK(tape.grad(unused).cols() == 2);
}

TEST_CASE("invalid inputs throw") {
  Tape tape;
  CHECK_THROWS_AS(tape.lift(Matrix{{std::nan("")}}, true), std::domain_error);
  CHECK_THROWS_AS(tape.lift(Matrix{{std::numeric_limits<double>::infinity()}}, false), std::domain_error);
  Var a = tape.constant(Matrix::Zero(2, 2));
  Var b = tape.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(b, a), std::invalid_argument);
  CHECK_THROWS_AS(log(tape.constant(Matrix{{-1.0}})), std::domain_error);
  CHECK_THROWS_AS(sqrt(tape.constant(Matrix{{-1.0}})), std::domain_error);
  CHECK_THROWS_AS(pow(tape.constant(Matrix{{-1.0}}), 0.5), std::domain_error);
  CHECK_THROWS_AS(reshape(a, 3, 1), std::invalid_argument);
  CHECK_THROWS(tape.backward(a));
}

TEST_CASE("pow with an integer exponent accepts negative bases") {
  Tape tape;
  Var x = tape.lift(Matrix{{-2.0}}, true);
  Var y = pow(x, 3.0);
  CHECK(y.scalar() == doctest::Approx(-8.0));
  tape.backward(y);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(12.0));
}

TEST_CASE("tape gradient oracle passes") {
  const OracleOutcome o = check_tape_finite_differences(10, 0);
  CHECK_MESSAGE(o.passed(), o.detail);
}
