#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "redge/rng.hpp"
#include "redge/tensor.hpp"

namespace redge {

/// One one-hot row per categorical component.
struct OneHotSample {
  std::vector<int> indices;
  Matrix onehot;
};

/// Objective evaluated on plain one-hot (or relaxed) matrices.
using DiscreteFunction = std::function<double(const Matrix&)>;
/// Objective recorded on a tape, so estimators can differentiate it.
using Objective = std::function<Var(const Var&)>;

/// Evaluates a tape objective at a fixed point on a scratch tape.
double evaluate(const Objective& f, const Matrix& x);
/// Gradient of a tape objective at a fixed point.
Matrix objective_gradient(const Objective& f, const Matrix& x);
DiscreteFunction as_discrete(Objective f);

/// Product of L independent K-way categoricals parameterised by logits.
class FactorizedCategorical {
 public:
  explicit FactorizedCategorical(Matrix logits);

  const Matrix& logits() const { return logits_; }
  const Matrix& probs() const { return probs_; }
  /// E[X], which is the probability matrix.
  const Matrix& mean() const { return probs_; }
  Eigen::Index rows() const { return logits_.rows(); }
  Eigen::Index cols() const { return logits_.cols(); }

  OneHotSample sample(Rng& rng) const;
  double log_prob(const Matrix& onehot) const;

 private:
  Matrix logits_;
  Matrix probs_;
};

/// Gumbel(0,1) noise, G = -log(-log U) with U clamped to [1e-12, 1-1e-12].
Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);
/// Row-wise argmax as one-hot. Ties go to the lowest index.
OneHotSample argmax_onehot(const Matrix& scores);
/// argmax(logits + G): an exact draw from the categorical with these logits.
OneHotSample gumbel_max(const Matrix& logits, Rng& rng);

/// diag(p) - p p^T. Throws if p is not in the simplex (tolerance 1e-9).
Matrix row_covariance(const RowVector& p);
/// Covariance of the mixture 1/2 (pi + delta_x): 1/2 Sigma(p) + 1/4 (x-p)(x-p)^T.
Matrix mixture_covariance_halfhalf(const RowVector& p, const RowVector& x);

inline constexpr std::uint64_t kEnumerationCap = std::uint64_t{1} << 20;

/// Calls visit(onehot, probability) for every configuration, rows varying
/// fastest in the last row. Throws std::length_error when K^L exceeds cap.
void enumerate_configurations(const FactorizedCategorical& dist,
                              const std::function<void(const Matrix&, double)>& visit,
                              std::uint64_t cap = kEnumerationCap);

/// E[f(X)] by enumeration.
double exact_objective(const FactorizedCategorical& dist, const DiscreteFunction& f,
                       std::uint64_t cap = kEnumerationCap);
/// Gradient of E[f(X)] w.r.t. the logits by enumeration, using
/// sum_x pi(x) f(x) (x - p).
Matrix exact_gradient(const FactorizedCategorical& dist, const DiscreteFunction& f,
                      std::uint64_t cap = kEnumerationCap);

/// Gradient estimate plus what produced it.
struct GradientEstimate {
  Matrix grad;
  std::optional<OneHotSample> hard_sample;
  Matrix soft_sample;
  double objective_value = 0.0;
  std::string estimator;
  int steps = 0;
  std::uint64_t seed = 0;
};

/// (f(x) - b)(x - p) for a given one-hot x.
Matrix reinforce_term(const FactorizedCategorical& dist, const DiscreteFunction& f, const Matrix& x,
                      double baseline = 0.0);
GradientEstimate reinforce_estimate(const FactorizedCategorical& dist, const DiscreteFunction& f, Rng& rng,
                                    double baseline = 0.0);

}  // namespace redge
