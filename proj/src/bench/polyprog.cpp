#include "redge/bench/polyprog.hpp"

#include <cmath>
#include <stdexcept>

namespace redge {

void PolyProgProblem::validate() const {
  if (L < 1) throw std::invalid_argument("polyprog: L must be positive");
  if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("polyprog: c must lie in (0, 1)");
  if (!(p >= 1.0)) throw std::invalid_argument("polyprog: p must be at least 1");
}

Var polyprog_loss(const Var& x, const PolyProgProblem& problem) {
  problem.validate();
  if (x.cols() != 2) throw std::invalid_argument("polyprog_loss: rows must have two categories");
  Tape& tape = x.tape();
  const double rows = static_cast<double>(x.rows());
  if (problem.relaxation == Relaxation::linear) {
    Matrix w(x.rows(), 2);
    w.col(0).setConstant(std::pow(problem.c, problem.p));
    w.col(1).setConstant(std::pow(1.0 - problem.c, problem.p));
    return (1.0 / rows) * dot(tape.constant(std::move(w)), x);
  }
  Matrix pick(2, 1);
  pick << 0.0, 1.0;
  Var second = matmul(x, tape.constant(pick));
  return (1.0 / rows) * sum(pow(abs(second - problem.c), problem.p));
}

double polyprog_exact_loss(const Matrix& logits, const PolyProgProblem& problem) {
  problem.validate();
  if (logits.cols() != 2) throw std::invalid_argument("polyprog_exact_loss: rows must have two categories");
  const Matrix probs = softmax(logits);
  const double at_first = std::pow(problem.c, problem.p);
  const double at_second = std::pow(1.0 - problem.c, problem.p);
  return (probs.col(0).array() * at_first + probs.col(1).array() * at_second).mean();
}

double polyprog_optimum(const PolyProgProblem& problem) {
  problem.validate();
  return std::pow(problem.c, problem.p);
}

}  // namespace redge
