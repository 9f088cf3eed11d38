#pragma once

#include "redge/tensor.hpp"

namespace redge {

enum class Relaxation { power, linear };

/// min over theta of (1/L) E ||X (0 1)^T - c 1||_p^p for L Bernoulli rows.
struct PolyProgProblem {
  int L = 128;
  double c = 0.45;
  double p = 2.0;
  Relaxation relaxation = Relaxation::power;

  void validate() const;
};

/// Mean over rows, so a batch of stacked replicas gives the replica average.
/// power: |x_2 - c|^p; linear: c^p x_1 + (1 - c)^p x_2.
Var polyprog_loss(const Var& x, const PolyProgProblem& problem);
/// Exact expected loss, two outcomes per row.
double polyprog_exact_loss(const Matrix& logits, const PolyProgProblem& problem);
/// c^p, attained by putting every row on the first category.
double polyprog_optimum(const PolyProgProblem& problem);

}  // namespace redge
