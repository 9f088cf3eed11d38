#pragma once

#include <cstdint>
#include <vector>

#include "redge/tensor.hpp"

namespace redge {

struct GmmConfig {
  int d = 2;
  int K = 20;
  int N = 500;
  double sigma0 = 15.0;
  double sigma_y = 2.0;
};

struct GmmProblem {
  GmmConfig config;
  Matrix Y;       ///< N x d observations
  Matrix means;   ///< K x d true component means
  std::vector<int> z;  ///< true assignments, used only for accuracy
  std::uint64_t seed = 0;
};

/// Z ~ uniform, M ~ N(0, sigma0^2 I), Y_i ~ N(M_{Z_i}, sigma_y^2 I).
GmmProblem gmm_generate(std::uint64_t seed, const GmmConfig& config = {});

/// N x K matrix of -log N(y_i; mhat_k, sigma_y^2 I).
Var gmm_nll(const Var& mhat, const GmmProblem& problem);
/// sum_i -log N(y_i; z_i mhat, sigma_y^2 I) with the assignment rows z given
/// as one-hot or relaxed N x K rows. The mean z_i mhat makes this quadratic
/// in z; on one-hot rows it agrees with the matching gmm_nll entry.
Var gmm_likelihood(const Var& z, const Var& mhat, const GmmProblem& problem);
/// sum_k -log N(mhat_k; 0, sigma0^2 I).
Var gmm_map_penalty(const Var& mhat, const GmmProblem& problem);
/// Per-row negative entropy plus the log K prior term, summed: sum p (log p + log K).
Var gmm_entropy_prior(const Var& logits, const GmmProblem& problem);
/// Negative ELBO with every expectation summed over the K outcomes per row.
Var gmm_objective(const Var& logits, const Var& mhat, const GmmProblem& problem);
double gmm_nelbo(const Matrix& logits, const Matrix& mhat, const GmmProblem& problem);

/// Best-permutation accuracy of the row argmax against the true labels.
double clustering_accuracy(const Matrix& logits, const std::vector<int>& true_z);

/// Minimum-cost perfect matching on a square cost matrix; result[row] = col.
std::vector<int> hungarian_assignment(const Matrix& cost);

}  // namespace redge
