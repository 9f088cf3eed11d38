#include "redge/bench/gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "redge/rng.hpp"

namespace redge {

GmmProblem gmm_generate(std::uint64_t seed, const GmmConfig& config) {
  if (config.d < 1 || config.K < 1 || config.N < 1) throw std::invalid_argument("gmm_generate: sizes must be positive");
  if (!(config.sigma0 > 0.0 && config.sigma_y > 0.0)) {
    throw std::invalid_argument("gmm_generate: scales must be positive");
  }
  Rng rng(derive_seed(seed, 0x9a11));
  GmmProblem prob;
  prob.config = config;
  prob.seed = seed;
  std::uniform_int_distribution<int> pick(0, config.K - 1);
  prob.z.resize(config.N);
  for (int& z : prob.z) z = pick(rng);
  prob.means = config.sigma0 * standard_normal(config.K, config.d, rng);
  prob.Y = config.sigma_y * standard_normal(config.N, config.d, rng);
  for (int i = 0; i < config.N; ++i) prob.Y.row(i) += prob.means.row(prob.z[i]);
  return prob;
}

Var gmm_nll(const Var& mhat, const GmmProblem& problem) {
  const GmmConfig& c = problem.config;
  if (mhat.rows() != c.K || mhat.cols() != c.d) throw std::invalid_argument("gmm_nll: mhat must be K x d");
  Tape& tape = mhat.tape();
  const double s2 = c.sigma_y * c.sigma_y;
  const double log_norm = 0.5 * c.d * std::log(2.0 * std::numbers::pi * s2);
  const Vector ysq = problem.Y.rowwise().squaredNorm();
  Matrix base(c.N, c.K);
  base.colwise() = ((log_norm + ysq.array() / (2.0 * s2))).matrix();
  Var cross = matmul(tape.constant(problem.Y), transpose(mhat));
  Var msq = broadcast_row(transpose(row_sum(square(mhat))), c.N);
  return tape.constant(std::move(base)) + (1.0 / (2.0 * s2)) * (msq - 2.0 * cross);
}

Var gmm_likelihood(const Var& z, const Var& mhat, const GmmProblem& problem) {
  const GmmConfig& c = problem.config;
  if (z.rows() != c.N || z.cols() != c.K) throw std::invalid_argument("gmm_likelihood: z must be N x K");
  if (mhat.rows() != c.K || mhat.cols() != c.d) throw std::invalid_argument("gmm_likelihood: mhat must be K x d");
  Tape& tape = mhat.tape();
  const double s2 = c.sigma_y * c.sigma_y;
  const double log_norm = 0.5 * c.d * std::log(2.0 * std::numbers::pi * s2);
  Var resid = tape.constant(problem.Y) - matmul(z, mhat);
  return (1.0 / (2.0 * s2)) * sum(square(resid)) + c.N * log_norm;
}

Var gmm_map_penalty(const Var& mhat, const GmmProblem& problem) {
  const GmmConfig& c = problem.config;
  const double s2 = c.sigma0 * c.sigma0;
  const double log_norm = 0.5 * c.d * std::log(2.0 * std::numbers::pi * s2);
  return (1.0 / (2.0 * s2)) * sum(square(mhat)) + c.K * log_norm;
}

Var gmm_entropy_prior(const Var& logits, const GmmProblem& problem) {
  const GmmConfig& c = problem.config;
  if (logits.rows() != c.N || logits.cols() != c.K) throw std::invalid_argument("gmm: logits must be N x K");
  Var p = softmax_rows(logits);
  return sum(hadamard(p, log_softmax_rows(logits) + std::log(static_cast<double>(c.K))));
}

Var gmm_objective(const Var& logits, const Var& mhat, const GmmProblem& problem) {
  Var p = softmax_rows(logits);
  return gmm_entropy_prior(logits, problem) + sum(hadamard(p, gmm_nll(mhat, problem))) +
         gmm_map_penalty(mhat, problem);
}

double gmm_nelbo(const Matrix& logits, const Matrix& mhat, const GmmProblem& problem) {
  Tape tape;
  return gmm_objective(tape.constant(logits), tape.constant(mhat), problem).scalar();
}

std::vector<int> hungarian_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian_assignment: cost must be square");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation with 1-based sentinels.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (match[j] > 0) result[match[j] - 1] = j - 1;
  }
  return result;
}

double clustering_accuracy(const Matrix& logits, const std::vector<int>& true_z) {
  if (static_cast<std::size_t>(logits.rows()) != true_z.size()) {
    throw std::invalid_argument("clustering_accuracy: label count differs from rows");
  }
  if (true_z.empty()) return 1.0;
  int labels = static_cast<int>(logits.cols());
  for (int z : true_z) {
    if (z < 0) throw std::invalid_argument("clustering_accuracy: negative label");
    labels = std::max(labels, z + 1);
  }
  Matrix confusion = Matrix::Zero(labels, labels);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index k = 0;
    logits.row(i).maxCoeff(&k);
    confusion(k, true_z[i]) += 1.0;
  }
  const std::vector<int> assign = hungarian_assignment(-confusion);
  double hits = 0.0;
  for (int k = 0; k < labels; ++k) hits += confusion(k, assign[k]);
  return hits / static_cast<double>(true_z.size());
}

}  // namespace redge
