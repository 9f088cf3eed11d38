#pragma once

#include <cmath>
#include <stdexcept>

#include "redge/tensor.hpp"

namespace redge {

struct AdamState {
  Matrix m;
  Matrix v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState(Eigen::Index rows, Eigen::Index cols, double learning_rate)
      : m(Matrix::Zero(rows, cols)), v(Matrix::Zero(rows, cols)), lr(learning_rate) {}
};

/// One bias-corrected Adam update in place. Throws std::domain_error on a
/// non-finite gradient and std::invalid_argument on a shape mismatch.
template <typename Derived, typename GradDerived>
void adam_step(AdamState& s, Eigen::MatrixBase<Derived>& params, const Eigen::MatrixBase<GradDerived>& grad) {
  if (params.rows() != s.m.rows() || params.cols() != s.m.cols() || grad.rows() != s.m.rows() ||
      grad.cols() != s.m.cols()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!grad.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

}  // namespace redge
