#include "redge/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace redge {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

void accumulate(Matrix* target, const auto& contribution) {
  if (target != nullptr) *target += contribution;
}

template <typename F, typename DF>
Var unary(const Var& a, F&& forward, DF&& derivative) {
  Matrix out = a.value().unaryExpr(forward);
  const Matrix& x = a.value();
  return a.tape().record(std::move(out), {a},
                         [&x, derivative](const Matrix& g, std::span<Matrix* const> pg) {
                           accumulate(pg[0], g.cwiseProduct(x.unaryExpr(derivative)));
                         });
}

}  // namespace

// --- Var / Tape ---------------------------------------------------------------

const Matrix& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar(): node is not 1x1");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::lift(Matrix value, bool requires_grad) {
  if (!value.allFinite()) throw std::domain_error("lift: non-finite input");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::record(Matrix value, std::vector<Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw std::invalid_argument("record: parent belongs to another tape");
    n.requires_grad = n.requires_grad || p.requires_grad();
    n.parents.push_back(p.id());
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& output) {
  if (output.value().size() != 1) throw std::invalid_argument("backward: output must be scalar");
  backward(output, Matrix::Ones(1, 1));
}

void Tape::backward(const Var& output, const Matrix& seed) {
  if (&output.tape() != this) throw std::invalid_argument("backward: output belongs to another tape");
  if (seed.rows() != output.rows() || seed.cols() != output.cols()) {
    throw std::invalid_argument("backward: seed shape mismatch");
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  Node& out = nodes_[output.id()];
  if (!out.requires_grad) return;
  out.grad = seed;
  out.has_grad = true;

  std::vector<Matrix*> parent_grads;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    parent_grads.assign(n.parents.size(), nullptr);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      Node& p = nodes_[n.parents[k]];
      if (!p.requires_grad) continue;
      if (!p.has_grad) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
        p.has_grad = true;
      }
      parent_grads[k] = &p.grad;
    }
    n.backward(n.grad, parent_grads);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::jacobian(const Var& out, const Var& in) {
  const Eigen::Index m = out.value().size();
  const Eigen::Index n = in.value().size();
  Matrix jac(m, n);
  for (Eigen::Index r = 0; r < m; ++r) {
    Matrix seed = Matrix::Zero(out.rows(), out.cols());
    seed(r / out.cols(), r % out.cols()) = 1.0;
    backward(out, seed);
    Matrix g = grad(in);
    jac.row(r) = Eigen::Map<const RowVector>(g.data(), n);
  }
  return jac;
}

// --- arithmetic ---------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g);
    accumulate(pg[1], g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g);
    accumulate(pg[1], -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  return a.tape().record(x.cwiseProduct(y), {a, b}, [&x, &y](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g.cwiseProduct(y));
    accumulate(pg[1], g.cwiseProduct(x));
  });
}

Var divide(const Var& a, const Var& b) {
  require_same_shape(a, b, "divide");
  if ((b.value().array() == 0.0).any()) throw std::domain_error("divide: zero denominator");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  return a.tape().record(x.cwiseQuotient(y), {a, b}, [&x, &y](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g.cwiseQuotient(y));
    accumulate(pg[1], -(g.array() * x.array() / y.array().square()).matrix());
  });
}

Var scale(const Var& a, double s) {
  return a.tape().record(s * a.value(), {a},
                         [s](const Matrix& g, std::span<Matrix* const> pg) { accumulate(pg[0], s * g); });
}

Var add_scalar(const Var& a, double s) {
  return a.tape().record((a.value().array() + s).matrix(), {a},
                         [](const Matrix& g, std::span<Matrix* const> pg) { accumulate(pg[0], g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return a.tape().record(out, {a}, [y = out](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g.cwiseProduct(y));
  });
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw std::domain_error("log: non-positive input");
  return unary(
      a, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var sqrt(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw std::domain_error("sqrt: non-positive input");
  return unary(
      a, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

Var pow(const Var& a, double p) {
  const bool integral = std::floor(p) == p;
  if (!integral && (a.value().array() < 0.0).any()) {
    throw std::domain_error("pow: non-integer exponent of negative input");
  }
  if (p < 0.0 && (a.value().array() == 0.0).any()) throw std::domain_error("pow: negative power of zero");
  return unary(
      a, [p](double v) { return std::pow(v, p); }, [p](double v) { return p * std::pow(v, p - 1.0); });
}

Var abs(const Var& a) {
  return unary(
      a, [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var reciprocal(const Var& a) {
  if ((a.value().array() == 0.0).any()) throw std::domain_error("reciprocal: zero input");
  return unary(
      a, [](double v) { return 1.0 / v; }, [](double v) { return -1.0 / (v * v); });
}

Var clamp_min(const Var& a, double lo) {
  return unary(
      a, [lo](double v) { return std::max(v, lo); }, [lo](double v) { return v > lo ? 1.0 : 0.0; });
}

// --- reductions and reshaping ---------------------------------------------------

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) pg[0]->array() += g(0, 0);
  });
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix out(1, 1);
  out(0, 0) = x.cwiseProduct(y).sum();
  return a.tape().record(std::move(out), {a, b}, [&x, &y](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g(0, 0) * y);
    accumulate(pg[1], g(0, 0) * x);
  });
}

Var row_sum(const Var& a) {
  return a.tape().record(a.value().rowwise().sum(), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) pg[0]->colwise() += g.col(0);
  });
}

Var broadcast_row(const Var& row, Eigen::Index rows) {
  if (row.rows() != 1) throw std::invalid_argument("broadcast_row: input must be a single row");
  return row.tape().record(row.value().replicate(rows, 1), {row},
                           [](const Matrix& g, std::span<Matrix* const> pg) {
                             accumulate(pg[0], g.colwise().sum());
                           });
}

Var broadcast_col(const Var& col, Eigen::Index cols) {
  if (col.cols() != 1) throw std::invalid_argument("broadcast_col: input must be a single column");
  return col.tape().record(col.value().replicate(1, cols), {col},
                           [](const Matrix& g, std::span<Matrix* const> pg) {
                             accumulate(pg[0], g.rowwise().sum());
                           });
}

Var tile_rows(const Var& a, Eigen::Index copies) {
  if (copies < 1) throw std::invalid_argument("tile_rows: copies must be positive");
  const Eigen::Index r = a.rows();
  return a.tape().record(a.value().replicate(copies, 1), {a},
                         [r, copies](const Matrix& g, std::span<Matrix* const> pg) {
                           if (pg[0] == nullptr) return;
                           for (Eigen::Index k = 0; k < copies; ++k) *pg[0] += g.middleRows(k * r, r);
                         });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  return a.tape().record(x * y, {a, b}, [&x, &y](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] != nullptr) pg[0]->noalias() += g * y.transpose();
    if (pg[1] != nullptr) pg[1]->noalias() += x.transpose() * g;
  });
}

Var transpose(const Var& a) {
  return a.tape().record(a.value().transpose(), {a}, [](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], g.transpose());
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  const Eigen::Index r0 = a.rows();
  const Eigen::Index c0 = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return a.tape().record(std::move(out), {a}, [r0, c0](const Matrix& g, std::span<Matrix* const> pg) {
    accumulate(pg[0], Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

// --- softmax family -------------------------------------------------------------

Var softmax_rows(const Var& a) { return covariance_link(a, softmax(a.value())); }

Var log_softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  Matrix p = softmax(x);
  return a.tape().record(std::move(out), {a}, [p = std::move(p)](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const Vector total = g.rowwise().sum();
    *pg[0] += g - (p.array().colwise() * total.array()).matrix();
  });
}

Var detach(const Var& a) { return a.tape().constant(a.value()); }

Var straight_through(const Matrix& hard, const Var& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw std::invalid_argument("straight_through: shape mismatch");
  }
  return soft.tape().record(hard, {soft}, [](const Matrix& g, std::span<Matrix* const> pg) { accumulate(pg[0], g); });
}

Var covariance_link(const Var& theta, const Matrix& probs) {
  if (theta.rows() != probs.rows() || theta.cols() != probs.cols()) {
    throw std::invalid_argument("covariance_link: shape mismatch");
  }
  return theta.tape().record(probs, {theta}, [q = probs](const Matrix& g, std::span<Matrix* const> pg) {
    if (pg[0] == nullptr) return;
    const Vector inner = g.cwiseProduct(q).rowwise().sum();
    *pg[0] += (q.array() * (g.colwise() - inner).array()).matrix();
  });
}

// --- finite differences ----------------------------------------------------------

Matrix finite_diff_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + h;
      const double up = f(probe);
      probe(i, j) = orig - h;
      const double down = f(probe);
      probe(i, j) = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::domain_error("finite_diff_gradient: non-finite value at perturbed point");
      }
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace redge
