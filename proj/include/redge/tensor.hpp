#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace redge {

/// Dense row-major real matrix. Every matrix-valued quantity in the library
/// (logits, probabilities, diffusion states, gradients) uses this type.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates the vector-Jacobian product of a node into its parents.
/// `parent_grads[i]` is null when parent i does not need a gradient.
using BackwardFn = std::function<void(const Matrix& grad_out, std::span<Matrix* const> parent_grads)>;

/// Append-only reverse-mode differentiation graph over dense matrices.
///
/// Node ids are insertion indices, so the insertion order is a topological
/// order and backward() is a single reverse sweep. A tape belongs to one
/// thread; replications use independent tapes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a leaf. Throws std::domain_error on non-finite entries.
  Var lift(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return lift(std::move(value), false); }
  Var constant(double value);

  /// Records an interior node. Used by the op library; parents that do not
  /// require gradients are pruned from the backward sweep.
  Var record(Matrix value, std::vector<Var> parents, BackwardFn backward);

  /// Reverse sweep from a scalar output. Gradients of previous sweeps are
  /// discarded, so calling it repeatedly (e.g. one row of a Jacobian at a
  /// time) is fine.
  void backward(const Var& output);
  /// Same sweep with an explicit output cotangent of the output's shape.
  void backward(const Var& output, const Matrix& seed);

  /// Gradient of the last backward() w.r.t. `v`; zeros if nothing flowed.
  Matrix grad(const Var& v) const;

  /// Explicit Jacobian d vec(out) / d vec(in) with row-major vectorisation.
  /// One reverse sweep per output entry; intended for tests and small K.
  Matrix jacobian(const Var& out, const Var& in);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  const Node& node(std::size_t id) const { return nodes_[id]; }

  // deque keeps node addresses stable, so closures may hold references to
  // parent values.
  std::deque<Node> nodes_;
};

// --- op library -------------------------------------------------------------
// Shape mismatches throw std::invalid_argument; log/sqrt/pow outside their
// domain throw std::domain_error.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
/// Elementwise power. Non-integer exponents require a non-negative base.
Var pow(const Var& a, double p);
Var abs(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
/// max(a, lo) elementwise; no gradient flows through clamped entries.
Var clamp_min(const Var& a, double lo);

/// Sum of all entries (1x1).
Var sum(const Var& a);
/// Frobenius inner product (1x1).
Var dot(const Var& a, const Var& b);
/// Per-row sums (L x 1).
Var row_sum(const Var& a);
/// Repeats a 1 x K row `rows` times.
Var broadcast_row(const Var& row, Eigen::Index rows);
/// Repeats an L x 1 column `cols` times.
Var broadcast_col(const Var& col, Eigen::Index cols);
/// Stacks `copies` vertical copies of `a`.
Var tile_rows(const Var& a, Eigen::Index copies);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Row-major reshape.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

/// Row-wise softmax with max subtraction; exponent arguments are clamped at
/// -745 so that no row underflows to an all-zero vector.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

/// Same value, no gradient.
Var detach(const Var& a);

/// Value `hard`, gradient passed unchanged to `soft`. Same as
/// hard + soft - detach(soft) without the rounding of the two additions.
Var straight_through(const Matrix& hard, const Var& soft);

/// Node whose value is the fixed row-stochastic matrix `probs` and whose
/// Jacobian w.r.t. `theta` is diag(q) - q q^T per row, q = probs row. This is
/// the Jacobian of softmax at any point where it evaluates to `probs`.
Var covariance_link(const Var& theta, const Matrix& probs);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(double s, const Var& a) { return add_scalar(neg(a), s); }

// --- plain numeric helpers ---------------------------------------------------

/// Row-wise stable softmax on a plain matrix; same arithmetic as softmax_rows.
template <typename Derived>
Matrix softmax(const Eigen::MatrixBase<Derived>& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double e = std::exp(std::max(x(i, j) - m, -745.0));
      out(i, j) = e;
      total += e;
    }
    out.row(i) /= total;
  }
  return out;
}

/// Central-difference gradient of a scalar function of a matrix, O(h^2).
/// Throws std::domain_error when f is non-finite at a perturbed point.
Matrix finite_diff_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                            double h = 1e-5);

}  // namespace redge
