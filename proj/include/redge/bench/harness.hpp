#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "redge/bench/gmm.hpp"
#include "redge/bench/polyprog.hpp"
#include "redge/bench/sudoku.hpp"
#include "redge/estimators.hpp"

namespace redge {

enum class BenchProblem { poly, gmm, sudoku };

BenchProblem parse_problem(const std::string& name);
std::string problem_name(BenchProblem p);

/// Default estimator settings per benchmark: steps, t1 and temperature.
EstimatorConfig default_estimator_config(BenchProblem problem, EstimatorKind kind);
double default_learning_rate(BenchProblem problem);
int default_steps(BenchProblem problem);

struct RunOptions {
  int steps = 1000;
  double lr = 0.05;
  std::uint64_t seed = 0;
  /// Record wall-clock time per step; off keeps traces byte-identical.
  bool timing = false;
};

struct TracePoint {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct RunResult {
  std::vector<TracePoint> trace;
  /// Named final metrics in insertion order.
  std::vector<std::pair<std::string, double>> metrics;
  bool diverged = false;
  std::string error;

  double metric(const std::string& name) const;
};

/// Loss per step is the exact expected loss of the current logits.
/// `batch` replicas of every row are stacked and averaged per step.
RunResult run_polyprog(const PolyProgProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt,
                       int batch = 256);
/// Loss per step is the negative ELBO with per-row enumeration; the
/// reported final NELBO averages the last 100 steps.
RunResult run_gmm(const GmmProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt);
/// Loss per step is the mean penalty of 16 hard samples; solved means the
/// row-argmax grid has zero penalty after the last step.
RunResult run_sudoku(const SudokuProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt,
                     int mc_draws = 16);

/// Runs every puzzle, puzzle i with run seed derive_seed(opt.seed, i), on up
/// to `threads` workers. Results keep the puzzle order.
std::vector<RunResult> run_sudoku_batch(const std::vector<SudokuProblem>& puzzles, const EstimatorConfig& cfg,
                                        const RunOptions& opt, int threads = 1, int mc_draws = 16);

/// Header step,loss,grad_norm,wall_ms; LF endings; shortest round-trip numbers.
void write_trace_csv(std::ostream& out, const RunResult& result);

}  // namespace redge
