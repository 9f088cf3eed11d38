#include "redge/bench/harness.hpp"

#include <chrono>
#include <stdexcept>

#include "redge/bench/adam.hpp"
#include "redge/categorical.hpp"
#include "redge/format.hpp"
#include "redge/parallel.hpp"
#include "redge/rng.hpp"

namespace redge {

namespace {

using Clock = std::chrono::steady_clock;

// Stream indices under a run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEstimatorStream = 2;
constexpr std::uint64_t kEvalStream = 3;

Matrix init_logits(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitStream));
  return 0.1 * standard_normal(rows, cols, rng);
}

double elapsed_ms(Clock::time_point since, bool timing) {
  if (!timing) return 0.0;
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

BenchProblem parse_problem(const std::string& name) {
  if (name == "poly") return BenchProblem::poly;
  if (name == "gmm") return BenchProblem::gmm;
  if (name == "sudoku") return BenchProblem::sudoku;
  throw std::invalid_argument("unknown problem '" + name + "' (expected poly, gmm, sudoku)");
}

std::string problem_name(BenchProblem p) {
  switch (p) {
    case BenchProblem::poly:
      return "poly";
    case BenchProblem::gmm:
      return "gmm";
    case BenchProblem::sudoku:
      return "sudoku";
  }
  return "unknown";
}

EstimatorConfig default_estimator_config(BenchProblem problem, EstimatorKind kind) {
  EstimatorConfig cfg;
  cfg.kind = kind;
  const int redge_steps[] = {7, 4, 4};
  const double redge_max_t1[] = {0.7, 0.5, 0.5};
  const int redge_cov_steps[] = {5, 3, 3};
  const double gs_temperature[] = {0.1, 0.1, 0.3};
  const auto p = static_cast<int>(problem);
  switch (kind) {
    case EstimatorKind::redge_soft:
    case EstimatorKind::redge_hard:
      cfg.steps = redge_steps[p];
      break;
    case EstimatorKind::redge_max:
      cfg.steps = 10;
      cfg.t1 = redge_max_t1[p];
      break;
    case EstimatorKind::redge_cov:
      cfg.steps = redge_cov_steps[p];
      break;
    case EstimatorKind::gumbel_softmax_st:
      cfg.temperature = gs_temperature[p];
      break;
    default:
      break;
  }
  return cfg;
}

double default_learning_rate(BenchProblem problem) { return problem == BenchProblem::gmm ? 0.01 : 0.05; }

int default_steps(BenchProblem problem) {
  switch (problem) {
    case BenchProblem::poly:
      return 3000;
    case BenchProblem::gmm:
      return 2000;
    case BenchProblem::sudoku:
      return 1000;
  }
  return 1000;
}

double RunResult::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw std::out_of_range("no metric named " + name);
}

RunResult run_polyprog(const PolyProgProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt, int batch) {
  problem.validate();
  if (batch < 1) throw std::invalid_argument("run_polyprog: batch must be positive");
  RunResult res;
  Matrix logits = init_logits(problem.L, 2, opt.seed);
  AdamState adam(problem.L, 2, opt.lr);
  RngStreams streams = RngStreams::from_seed(derive_seed(opt.seed, kEstimatorStream));
  const Objective f = [&problem](const Var& x) { return polyprog_loss(x, problem); };
  const auto start = Clock::now();
  try {
    for (int step = 0; step < opt.steps; ++step) {
      const double loss = polyprog_exact_loss(logits, problem);
      Tape tape;
      Var theta = tape.lift(logits, true);
      Var stacked = batch > 1 ? tile_rows(theta, batch) : theta;
      const Randomness r = draw_randomness(cfg, stacked.rows(), 2, streams);
      Surrogate s = build_surrogate(cfg, stacked, f, r);
      tape.backward(s.value);
      const Matrix g = tape.grad(theta);
      adam_step(adam, logits, g);
      res.trace.push_back({step, loss, g.norm(), elapsed_ms(start, opt.timing)});
    }
  } catch (const std::exception& e) {
    res.diverged = true;
    res.error = e.what();
  }
  res.metrics.emplace_back("final_loss", polyprog_exact_loss(logits, problem));
  res.metrics.emplace_back("optimum", polyprog_optimum(problem));
  return res;
}

RunResult run_gmm(const GmmProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt) {
  const GmmConfig& c = problem.config;
  RunResult res;
  Matrix logits = init_logits(c.N, c.K, opt.seed);
  Matrix mhat;
  {
    Rng rng(derive_seed(opt.seed, kInitStream + 100));
    mhat = c.sigma0 * standard_normal(c.K, c.d, rng);
  }
  AdamState adam_logits(c.N, c.K, opt.lr);
  AdamState adam_means(c.K, c.d, opt.lr);
  RngStreams streams = RngStreams::from_seed(derive_seed(opt.seed, kEstimatorStream));
  const auto start = Clock::now();
  double tail_sum = 0.0;
  int tail_count = 0;
  try {
    for (int step = 0; step < opt.steps; ++step) {
      Tape tape;
      Var theta = tape.lift(logits, true);
      Var m = tape.lift(mhat, true);
      const Objective f = [&m, &problem](const Var& y) { return gmm_likelihood(y, m, problem); };
      const Randomness r = draw_randomness(cfg, c.N, c.K, streams);
      Surrogate s = build_surrogate(cfg, theta, f, r);
      Var total = s.value + gmm_entropy_prior(theta, problem) + gmm_map_penalty(m, problem);
      tape.backward(total);
      const Matrix g = tape.grad(theta);
      const Matrix gm = tape.grad(m);
      // Evaluated at the parameters that produced this step's gradient.
      const double loss = gmm_nelbo(logits, mhat, problem);
      if (opt.steps - step <= 100) {
        tail_sum += loss;
        ++tail_count;
      }
      adam_step(adam_logits, logits, g);
      adam_step(adam_means, mhat, gm);
      res.trace.push_back({step, loss, g.norm(), elapsed_ms(start, opt.timing)});
    }
  } catch (const std::exception& e) {
    res.diverged = true;
    res.error = e.what();
  }
  res.metrics.emplace_back("final_nelbo", tail_count > 0 ? tail_sum / tail_count : gmm_nelbo(logits, mhat, problem));
  res.metrics.emplace_back("last_nelbo", gmm_nelbo(logits, mhat, problem));
  res.metrics.emplace_back("accuracy", clustering_accuracy(logits, problem.z));
  return res;
}

RunResult run_sudoku(const SudokuProblem& problem, const EstimatorConfig& cfg, const RunOptions& opt, int mc_draws) {
  if (mc_draws < 1) throw std::invalid_argument("run_sudoku: need at least one Monte Carlo draw");
  RunResult res;
  const Eigen::Index F = problem.free_count();
  auto mc_loss = [&](const Matrix& logits, Rng& rng) {
    double total = 0.0;
    for (int k = 0; k < mc_draws; ++k) total += problem.penalty(gumbel_max(logits, rng).onehot);
    return total / mc_draws;
  };
  if (F == 0) {
    res.metrics.emplace_back("final_loss", problem.penalty(Matrix::Zero(0, 9)));
    res.metrics.emplace_back("solved", sudoku_valid(problem.cells()) ? 1.0 : 0.0);
    return res;
  }
  Matrix logits = init_logits(F, 9, opt.seed);
  AdamState adam(F, 9, opt.lr);
  RngStreams streams = RngStreams::from_seed(derive_seed(opt.seed, kEstimatorStream));
  Rng eval_rng(derive_seed(opt.seed, kEvalStream));
  const Objective f = [&problem](const Var& x) { return sudoku_penalty(x, problem); };
  const auto start = Clock::now();
  try {
    for (int step = 0; step < opt.steps; ++step) {
      const double loss = mc_loss(logits, eval_rng);
      Tape tape;
      Var theta = tape.lift(logits, true);
      const Randomness r = draw_randomness(cfg, F, 9, streams);
      Surrogate s = build_surrogate(cfg, theta, f, r);
      tape.backward(s.value);
      const Matrix g = tape.grad(theta);
      adam_step(adam, logits, g);
      res.trace.push_back({step, loss, g.norm(), elapsed_ms(start, opt.timing)});
    }
  } catch (const std::exception& e) {
    res.diverged = true;
    res.error = e.what();
  }
  const Matrix best = argmax_onehot(logits).onehot;
  const double argmax_penalty = problem.penalty(best);
  res.metrics.emplace_back("final_loss", mc_loss(logits, eval_rng));
  res.metrics.emplace_back("argmax_penalty", argmax_penalty);
  res.metrics.emplace_back("solved", argmax_penalty == 0.0 ? 1.0 : 0.0);
  return res;
}

std::vector<RunResult> run_sudoku_batch(const std::vector<SudokuProblem>& puzzles, const EstimatorConfig& cfg,
                                        const RunOptions& opt, int threads, int mc_draws) {
  std::vector<RunResult> results(puzzles.size());
  parallel_for(puzzles.size(), threads, [&](std::size_t i) {
    RunOptions local = opt;
    local.seed = derive_seed(opt.seed, i);
    results[i] = run_sudoku(puzzles[i], cfg, local, mc_draws);
  });
  return results;
}

void write_trace_csv(std::ostream& out, const RunResult& result) {
  out << "step,loss,grad_norm,wall_ms\n";
  for (const TracePoint& p : result.trace) {
    out << p.step << ',' << format_double(p.loss) << ',' << format_double(p.grad_norm) << ','
        << format_double(p.wall_ms) << '\n';
  }
}

}  // namespace redge
