#include "redge/categorical.hpp"

#include <cmath>
#include <stdexcept>

namespace redge {

double evaluate(const Objective& f, const Matrix& x) {
  Tape tape;
  return f(tape.constant(x)).scalar();
}

Matrix objective_gradient(const Objective& f, const Matrix& x) {
  Tape tape;
  Var v = tape.lift(x, true);
  tape.backward(f(v));
  return tape.grad(v);
}

DiscreteFunction as_discrete(Objective f) {
  return [f = std::move(f)](const Matrix& x) { return evaluate(f, x); };
}

FactorizedCategorical::FactorizedCategorical(Matrix logits) : logits_(std::move(logits)) {
  if (logits_.rows() < 1 || logits_.cols() < 1) throw std::invalid_argument("FactorizedCategorical: empty logits");
  if (!logits_.allFinite()) throw std::domain_error("FactorizedCategorical: non-finite logits");
  probs_ = softmax(logits_);
}

OneHotSample FactorizedCategorical::sample(Rng& rng) const { return gumbel_max(logits_, rng); }

double FactorizedCategorical::log_prob(const Matrix& onehot) const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits_.rows(); ++i) {
    const double m = logits_.row(i).maxCoeff();
    const double lse = m + std::log((logits_.row(i).array() - m).exp().sum());
    total += onehot.row(i).dot(logits_.row(i)) - lse;
  }
  return total;
}

Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix u = uniform01(rows, cols, rng);
  return u.unaryExpr([](double v) {
    const double c = std::clamp(v, 1e-12, 1.0 - 1e-12);
    return -std::log(-std::log(c));
  });
}

OneHotSample argmax_onehot(const Matrix& scores) {
  OneHotSample s;
  s.indices.resize(scores.rows());
  s.onehot = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index k = 0;
    scores.row(i).maxCoeff(&k);
    s.indices[i] = static_cast<int>(k);
    s.onehot(i, k) = 1.0;
  }
  return s;
}

OneHotSample gumbel_max(const Matrix& logits, Rng& rng) {
  return argmax_onehot(logits + gumbel_noise(logits.rows(), logits.cols(), rng));
}

namespace {

void require_simplex(const RowVector& p, const char* what) {
  if ((p.array() < -1e-9).any() || std::abs(p.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": vector is not in the probability simplex");
  }
}

}  // namespace

Matrix row_covariance(const RowVector& p) {
  require_simplex(p, "row_covariance");
  Matrix cov = -p.transpose() * p;
  cov.diagonal() += p.transpose();
  return cov;
}

Matrix mixture_covariance_halfhalf(const RowVector& p, const RowVector& x) {
  require_simplex(p, "mixture_covariance_halfhalf");
  const bool onehot = (x.array() == 0.0 || x.array() == 1.0).all() && x.sum() == 1.0;
  if (!onehot) throw std::invalid_argument("mixture_covariance_halfhalf: x is not one-hot");
  const RowVector r = x - p;
  return 0.5 * row_covariance(p) + 0.25 * (r.transpose() * r);
}

void enumerate_configurations(const FactorizedCategorical& dist,
                              const std::function<void(const Matrix&, double)>& visit, std::uint64_t cap) {
  const Eigen::Index L = dist.rows();
  const Eigen::Index K = dist.cols();
  std::uint64_t total = 1;
  for (Eigen::Index i = 0; i < L; ++i) {
    if (total > cap / static_cast<std::uint64_t>(K)) {
      throw std::length_error("enumeration exceeds the configured cap of " + std::to_string(cap) + " states");
    }
    total *= static_cast<std::uint64_t>(K);
  }
  const Matrix& p = dist.probs();
  std::vector<Eigen::Index> idx(L, 0);
  Matrix x = Matrix::Zero(L, K);
  for (Eigen::Index i = 0; i < L; ++i) x(i, 0) = 1.0;
  for (std::uint64_t n = 0; n < total; ++n) {
    double prob = 1.0;
    for (Eigen::Index i = 0; i < L; ++i) prob *= p(i, idx[i]);
    visit(x, prob);
    for (Eigen::Index i = L; i-- > 0;) {
      x(i, idx[i]) = 0.0;
      idx[i] = (idx[i] + 1) % K;
      x(i, idx[i]) = 1.0;
      if (idx[i] != 0) break;
    }
  }
}

double exact_objective(const FactorizedCategorical& dist, const DiscreteFunction& f, std::uint64_t cap) {
  double total = 0.0;
  enumerate_configurations(dist, [&](const Matrix& x, double prob) { total += prob * f(x); }, cap);
  return total;
}

Matrix exact_gradient(const FactorizedCategorical& dist, const DiscreteFunction& f, std::uint64_t cap) {
  Matrix grad = Matrix::Zero(dist.rows(), dist.cols());
  const Matrix& p = dist.probs();
  enumerate_configurations(
      dist, [&](const Matrix& x, double prob) { grad += (prob * f(x)) * (x - p); }, cap);
  return grad;
}

Matrix reinforce_term(const FactorizedCategorical& dist, const DiscreteFunction& f, const Matrix& x,
                      double baseline) {
  return (f(x) - baseline) * (x - dist.probs());
}

GradientEstimate reinforce_estimate(const FactorizedCategorical& dist, const DiscreteFunction& f, Rng& rng,
                                    double baseline) {
  GradientEstimate est;
  OneHotSample s = dist.sample(rng);
  est.objective_value = f(s.onehot);
  est.grad = (est.objective_value - baseline) * (s.onehot - dist.probs());
  est.soft_sample = s.onehot;
  est.hard_sample = std::move(s);
  est.estimator = "reinforce";
  return est;
}

}  // namespace redge
