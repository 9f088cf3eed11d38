#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "redge/analysis.hpp"
#include "redge/bench/harness.hpp"
#include "redge/format.hpp"
#include "redge/gradcheck.hpp"
#include "redge/parallel.hpp"

namespace redge::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

std::uint64_t parse_seed(const std::string& s) {
  std::size_t used = 0;
  if (s.empty() || s[0] == '-') throw std::invalid_argument("seed must be a non-negative integer: '" + s + "'");
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("seed must be a non-negative integer: '" + s + "'");
  return v;
}

/// Option values from one JSON config entry.
std::vector<std::string> json_inputs(const json& value) {
  std::vector<std::string> out;
  auto scalar = [](const json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return format_double(v.get<double>());
    throw std::invalid_argument("config values must be strings, numbers, booleans or arrays of those");
  };
  if (value.is_array()) {
    for (const json& v : value) out.push_back(scalar(v));
  } else {
    out.push_back(scalar(value));
  }
  return out;
}

/// Fills options that were not given on the command line from a flat JSON
/// object keyed by option name, so flags always win over the file.
void apply_config(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("config " + path + ": top level must be an object");
  // A run summary carries its settings under "config" and can be replayed.
  if (doc.contains("config") && doc["config"].is_object()) doc = json(doc["config"]);
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (opt == nullptr) opt = cmd.get_option_no_throw(key);
    if (opt == nullptr) throw std::runtime_error("config " + path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    if (value.is_null()) continue;
    for (const std::string& v : json_inputs(value)) opt->add_result(v);
    opt->run_callback();
  }
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return format_double(v);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  if (!std::isfinite(v)) return format_double(v);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation of the finite values.
Stats stats_of(const std::vector<double>& values) {
  Stats s;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    s.mean += v;
    ++s.count;
  }
  if (s.count == 0) return {std::nan(""), std::nan(""), 0};
  s.mean /= static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) {
      if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string trace_text(const RunResult& r) {
  std::ostringstream ss;
  write_trace_csv(ss, r);
  return ss.str();
}

json metrics_json(const RunResult& r) {
  json m = json::object();
  for (const auto& [k, v] : r.metrics) m[k] = std::isfinite(v) ? json(v) : json(format_double(v));
  return m;
}

EtaRule parse_eta(const std::string& s) {
  if (s == "zero") return EtaRule::zero;
  if (s == "ddpm") return EtaRule::ddpm;
  if (s == "full") return EtaRule::full;
  throw std::invalid_argument("unknown eta rule '" + s + "' (expected zero, ddpm, full)");
}

std::string eta_name(EtaRule e) {
  switch (e) {
    case EtaRule::zero:
      return "zero";
    case EtaRule::ddpm:
      return "ddpm";
    case EtaRule::full:
      return "full";
  }
  return "zero";
}

// Estimator overrides shared by bench and biasvar.
struct EstimatorFlags {
  std::optional<int> n;
  std::optional<double> t1;
  std::optional<double> tau;
  std::string eta = "zero";
  bool no_base_backprop = false;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--n", n, "Diffusion grid points for the redge family");
    cmd.add_option("--t1", t1, "Smallest non-zero time of the diffusion grid");
    cmd.add_option("--tau", tau, "Gumbel-Softmax temperature");
    cmd.add_option("--eta", eta, "Noise rule of the reverse steps: zero, ddpm, full");
    cmd.add_flag("--no-base-backprop", no_base_backprop, "Treat the redge-cov base moments as constants");
  }

  void apply(EstimatorConfig& cfg) const {
    if (n) cfg.steps = *n;
    if (t1) cfg.t1 = *t1;
    if (tau) cfg.temperature = *tau;
    cfg.eta = parse_eta(eta);
    if (no_base_backprop) cfg.base_backprop = false;
    cfg.validate();
  }
};

json estimator_json(const EstimatorConfig& cfg) {
  json j;
  j["estimator"] = std::string(estimator_name(cfg.kind));
  j["n"] = cfg.steps;
  if (cfg.t1) j["t1"] = *cfg.t1;
  j["tau"] = cfg.temperature;
  j["eta"] = eta_name(cfg.eta);
  j["no-base-backprop"] = !cfg.base_backprop;
  return j;
}

std::vector<EstimatorKind> parse_estimators(const std::vector<std::string>& names) {
  std::vector<EstimatorKind> kinds;
  for (const std::string& raw : names) {
    for (const std::string& name : split(raw, ',')) kinds.push_back(parse_estimator(name));
  }
  if (kinds.empty()) throw std::invalid_argument("no estimators given");
  return kinds;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string config;
  std::string seeds = "0..4";
  std::string filter;
  std::string inject_fault;
  std::string out;
  bool list = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (a.list) {
    for (const std::string& name : gradcheck_names()) out << name << '\n';
    return 0;
  }
  GradcheckOptions opt;
  opt.seeds = parse_seed_list(a.seeds);
  opt.filter = a.filter;
  opt.inject_fault = a.inject_fault;
  if (!a.inject_fault.empty()) {
    const auto names = gradcheck_names();
    if (std::find(names.begin(), names.end(), a.inject_fault) == names.end()) {
      throw std::invalid_argument("unknown check '" + a.inject_fault + "'");
    }
  }
  const std::vector<OracleOutcome> results = run_gradcheck(opt);
  if (results.empty()) throw std::invalid_argument("filter '" + a.filter + "' matches no check");
  int failures = 0;
  json report = json::array();
  for (const OracleOutcome& r : results) {
    const bool ok = r.passed();
    failures += ok ? 0 : 1;
    out << (ok ? "PASS " : "FAIL ") << r.name << " instances=" << r.instances << " max_error=" << general(r.max_error)
        << " tolerance=" << general(r.tolerance);
    if (!ok) out << " worst: " << r.detail;
    out << '\n';
    report.push_back({{"name", r.name},
                      {"passed", ok},
                      {"instances", r.instances},
                      {"max_error", r.max_error},
                      {"tolerance", r.tolerance},
                      {"detail", r.detail}});
  }
  out << (failures == 0 ? "all " + std::to_string(results.size()) + " checks passed"
                        : std::to_string(failures) + " of " + std::to_string(results.size()) + " checks failed")
      << '\n';
  if (!a.out.empty()) write_json(a.out, json{{"seeds", opt.seeds}, {"filter", a.filter}, {"checks", report}});
  return failures == 0 ? 0 : 1;
}

// -------------------------------------------------------------------- bench

struct BenchArgs {
  std::string config;
  std::string problem;
  std::vector<std::string> estimators;
  std::optional<std::uint64_t> seed;
  std::string seeds = "0";
  std::optional<int> steps;
  std::optional<double> lr;
  double p = 2.0;
  std::string relaxation = "power";
  int batch = 256;
  int L = 128;
  double c = 0.45;
  std::string puzzles;
  int generate = 200;
  int blanks = 45;
  std::uint64_t puzzle_seed = 0;
  int mc_draws = 16;
  std::string out = "runs";
  std::string format = "text";
  bool timing = false;
  bool no_trace = false;
  EstimatorFlags est;
};

struct BenchRun {
  EstimatorConfig cfg;
  std::uint64_t seed = 0;
  RunResult result;                  // poly and gmm
  std::vector<RunResult> puzzles;    // sudoku
};

json bench_config_echo(const BenchArgs& a, BenchProblem problem, const EstimatorConfig& cfg, std::uint64_t seed,
                       const RunOptions& opt) {
  json j = estimator_json(cfg);
  j["problem"] = problem_name(problem);
  j["seed"] = seed;
  j["steps"] = opt.steps;
  j["lr"] = opt.lr;
  j["timing"] = opt.timing;
  switch (problem) {
    case BenchProblem::poly:
      j["p"] = a.p;
      j["relaxation"] = a.relaxation;
      j["batch"] = a.batch;
      j["L"] = a.L;
      j["c"] = a.c;
      break;
    case BenchProblem::gmm:
      break;
    case BenchProblem::sudoku:
      if (a.puzzles.empty()) {
        j["generate"] = a.generate;
        j["blanks"] = a.blanks;
        j["puzzle-seed"] = a.puzzle_seed;
      } else {
        j["puzzles"] = a.puzzles;
      }
      j["mc-draws"] = a.mc_draws;
      break;
  }
  return j;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  if (a.problem.empty()) throw std::invalid_argument("bench needs a problem: poly, gmm or sudoku");
  const BenchProblem problem = parse_problem(a.problem);
  std::vector<std::string> names = a.estimators;
  if (names.empty()) names = {"redge"};
  const std::vector<EstimatorKind> kinds = parse_estimators(names);
  const std::vector<std::uint64_t> seeds = a.seed ? std::vector<std::uint64_t>{*a.seed} : parse_seed_list(a.seeds);
  if (a.format != "text" && a.format != "csv" && a.format != "json") {
    throw std::invalid_argument("format must be text, csv or json");
  }

  RunOptions base;
  base.steps = a.steps.value_or(default_steps(problem));
  base.lr = a.lr.value_or(default_learning_rate(problem));
  base.timing = a.timing;
  if (base.steps < 1) throw std::invalid_argument("steps must be positive");
  if (!(base.lr > 0.0)) throw std::invalid_argument("lr must be positive");

  PolyProgProblem poly;
  poly.L = a.L;
  poly.c = a.c;
  poly.p = a.p;
  if (a.relaxation == "power") {
    poly.relaxation = Relaxation::power;
  } else if (a.relaxation == "linear") {
    poly.relaxation = Relaxation::linear;
  } else {
    throw std::invalid_argument("relaxation must be power or linear");
  }
  if (problem == BenchProblem::poly) poly.validate();

  std::vector<SudokuProblem> puzzles;
  if (problem == BenchProblem::sudoku) {
    puzzles = a.puzzles.empty() ? generate_puzzles(a.generate, a.puzzle_seed, a.blanks) : load_puzzles(a.puzzles);
    if (puzzles.empty()) throw std::invalid_argument("no puzzles to run");
  }

  std::vector<BenchRun> runs;
  for (EstimatorKind kind : kinds) {
    EstimatorConfig cfg = default_estimator_config(problem, kind);
    a.est.apply(cfg);
    for (std::uint64_t seed : seeds) runs.push_back({cfg, seed, {}, {}});
  }

  const int threads = thread_count_from_env();
  // GMM data is drawn once per seed and shared by every estimator.
  std::vector<GmmProblem> gmm_data;
  if (problem == BenchProblem::gmm) {
    for (std::uint64_t seed : seeds) gmm_data.push_back(gmm_generate(seed));
  }
  auto gmm_for = [&](std::uint64_t seed) -> const GmmProblem& {
    return gmm_data[static_cast<std::size_t>(std::find(seeds.begin(), seeds.end(), seed) - seeds.begin())];
  };

  if (problem == BenchProblem::sudoku) {
    for (BenchRun& run : runs) {
      RunOptions opt = base;
      opt.seed = run.seed;
      run.puzzles = run_sudoku_batch(puzzles, run.cfg, opt, threads, a.mc_draws);
    }
  } else {
    parallel_for(runs.size(), threads, [&](std::size_t i) {
      BenchRun& run = runs[i];
      RunOptions opt = base;
      opt.seed = run.seed;
      run.result = problem == BenchProblem::poly ? run_polyprog(poly, run.cfg, opt, a.batch)
                                                 : run_gmm(gmm_for(run.seed), run.cfg, opt);
    });
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const std::string prefix = problem_name(problem);
  for (const BenchRun& run : runs) {
    RunOptions opt = base;
    opt.seed = run.seed;
    const std::string stem = prefix + "_" + std::string(estimator_name(run.cfg.kind)) + "_s" + std::to_string(run.seed);
    json summary;
    summary["command"] = "bench";
    summary["problem"] = prefix;
    summary["estimator"] = std::string(estimator_name(run.cfg.kind));
    summary["seed"] = run.seed;
    summary["config"] = bench_config_echo(a, problem, run.cfg, run.seed, opt);
    if (problem == BenchProblem::sudoku) {
      json per = json::array();
      std::vector<double> losses, solved;
      int diverged = 0;
      for (std::size_t i = 0; i < run.puzzles.size(); ++i) {
        const RunResult& r = run.puzzles[i];
        char idx[16];
        std::snprintf(idx, sizeof(idx), "%04zu", i);
        const std::string trace_name = stem + "_p" + idx + ".csv";
        if (!a.no_trace) {
          fs::create_directories(dir / stem);
          write_text(dir / stem / trace_name, trace_text(r));
        }
        losses.push_back(r.metric("final_loss"));
        solved.push_back(r.metric("solved"));
        diverged += r.diverged ? 1 : 0;
        json item{{"index", i}, {"metrics", metrics_json(r)}, {"diverged", r.diverged}};
        if (r.diverged) item["error"] = r.error;
        if (!a.no_trace) item["trace"] = (fs::path(stem) / trace_name).generic_string();
        per.push_back(item);
      }
      const Stats loss = stats_of(losses);
      const Stats solve = stats_of(solved);
      summary["metrics"] = {{"mean_final_loss", loss.mean},
                            {"std_final_loss", loss.std},
                            {"solved_fraction", solve.mean},
                            {"puzzles", run.puzzles.size()},
                            {"diverged", diverged}};
      summary["puzzles"] = per;
    } else {
      const RunResult& r = run.result;
      summary["metrics"] = metrics_json(r);
      summary["diverged"] = r.diverged;
      if (r.diverged) {
        summary["error"] = r.error;
        err << "warning: " << stem << " diverged: " << r.error << '\n';
      }
      if (!a.no_trace) {
        write_text(dir / (stem + ".csv"), trace_text(r));
        summary["trace"] = stem + ".csv";
      }
    }
    write_json(dir / (stem + ".json"), summary);
  }

  // Comparison table, one line per estimator.
  json table = json::array();
  std::ostringstream text;
  if (a.format == "csv") {
    out << (problem == BenchProblem::poly   ? "estimator,runs,diverged,final_loss_mean,final_loss_std,gap_to_optimum\n"
            : problem == BenchProblem::gmm  ? "estimator,runs,diverged,nelbo_mean,nelbo_std,accuracy_mean,accuracy_std\n"
                                            : "estimator,runs,diverged,loss_mean,loss_std,solved_percent\n");
  } else if (a.format == "text") {
    out << prefix << ": " << seeds.size() << " seed(s), " << base.steps << " steps, lr " << general(base.lr);
    if (problem == BenchProblem::poly) {
      out << ", p " << general(a.p) << ", " << a.relaxation << " relaxation, optimum "
          << general(polyprog_optimum(poly));
    }
    if (problem == BenchProblem::sudoku) out << ", " << puzzles.size() << " puzzles";
    out << "\n";
    char head[160];
    if (problem == BenchProblem::poly) {
      std::snprintf(head, sizeof(head), "%-12s %-28s %-14s %s\n", "Sampler", "Final loss (mean +- std)", "Gap", "Diverged");
    } else if (problem == BenchProblem::gmm) {
      std::snprintf(head, sizeof(head), "%-12s %-28s %-33s %s\n", "Sampler", "Final NELBO (mean +- std)",
                    "Clustering accuracy (mean +- std)", "Diverged");
    } else {
      std::snprintf(head, sizeof(head), "%-12s %-24s %-12s %s\n", "Sampler", "Loss (mean +- std)", "Solved (%)", "Diverged");
    }
    out << head;
  }
  for (EstimatorKind kind : kinds) {
    std::vector<double> primary, secondary;
    int total = 0, diverged = 0;
    for (const BenchRun& run : runs) {
      if (run.cfg.kind != kind) continue;
      if (problem == BenchProblem::sudoku) {
        for (const RunResult& r : run.puzzles) {
          primary.push_back(r.metric("final_loss"));
          secondary.push_back(r.metric("solved"));
          ++total;
          diverged += r.diverged ? 1 : 0;
        }
      } else {
        ++total;
        diverged += run.result.diverged ? 1 : 0;
        if (run.result.diverged) continue;
        if (problem == BenchProblem::poly) {
          primary.push_back(run.result.metric("final_loss"));
        } else {
          primary.push_back(run.result.metric("final_nelbo"));
          secondary.push_back(run.result.metric("accuracy"));
        }
      }
    }
    const Stats s1 = stats_of(primary);
    const Stats s2 = stats_of(secondary);
    const std::string name(estimator_name(kind));
    json row{{"estimator", name}, {"runs", total}, {"diverged", diverged}};
    char line[256];
    if (problem == BenchProblem::poly) {
      const double gap = s1.mean - polyprog_optimum(poly);
      row["final_loss_mean"] = s1.mean;
      row["final_loss_std"] = s1.std;
      row["gap_to_optimum"] = gap;
      const std::string cell = general(s1.mean) + " +- " + general(s1.std);
      std::snprintf(line, sizeof(line), "%-12s %-28s %-14s %d/%d\n", name.c_str(), cell.c_str(), general(gap).c_str(),
                    diverged, total);
      if (a.format == "csv") {
        out << name << ',' << total << ',' << diverged << ',' << format_double(s1.mean) << ',' << format_double(s1.std)
            << ',' << format_double(gap) << '\n';
      }
    } else if (problem == BenchProblem::gmm) {
      row["nelbo_mean"] = s1.mean;
      row["nelbo_std"] = s1.std;
      row["accuracy_mean"] = s2.mean;
      row["accuracy_std"] = s2.std;
      const std::string c1 = fixed(s1.mean, 2) + " +- " + fixed(s1.std, 2);
      const std::string c2 = fixed(s2.mean, 2) + " +- " + fixed(s2.std, 2);
      std::snprintf(line, sizeof(line), "%-12s %-28s %-33s %d/%d\n", name.c_str(), c1.c_str(), c2.c_str(), diverged,
                    total);
      if (a.format == "csv") {
        out << name << ',' << total << ',' << diverged << ',' << format_double(s1.mean) << ',' << format_double(s1.std)
            << ',' << format_double(s2.mean) << ',' << format_double(s2.std) << '\n';
      }
    } else {
      const double solved_pct = 100.0 * s2.mean;
      row["loss_mean"] = s1.mean;
      row["loss_std"] = s1.std;
      row["solved_percent"] = solved_pct;
      const std::string c1 = fixed(s1.mean, 2) + " +- " + fixed(s1.std, 2);
      std::snprintf(line, sizeof(line), "%-12s %-24s %-12s %d/%d\n", name.c_str(), c1.c_str(),
                    fixed(solved_pct, 2).c_str(), diverged, total);
      if (a.format == "csv") {
        out << name << ',' << total << ',' << diverged << ',' << format_double(s1.mean) << ',' << format_double(s1.std)
            << ',' << format_double(solved_pct) << '\n';
      }
    }
    if (a.format == "text") out << line;
    table.push_back(row);
  }
  if (a.format == "json") out << table.dump(2) << '\n';
  write_json(dir / (prefix + "_table.json"), table);
  return 0;
}

// ------------------------------------------------------------------- vanish

struct VanishArgs {
  std::string config;
  std::string probs = "0.3,0.7";
  std::string t1 = "0.5,0.25,0.1,0.05,0.01";
  std::string upper = "1,0.75";
  std::uint64_t seed = 0;
  std::string quantiles = "0.1,0.3,0.5,0.7,0.9";
  int theta_points = 99;
  std::string out;
  std::string slice_out;
};

int cmd_vanish(const VanishArgs& a, std::ostream& out, std::ostream& err) {
  const std::vector<double> probs = parse_number_list(a.probs);
  const std::vector<double> t1_list = parse_number_list(a.t1);
  const std::vector<double> upper = parse_number_list(a.upper);
  if (probs.size() < 2) throw std::invalid_argument("need at least two probabilities");
  double total = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw std::invalid_argument("probabilities must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities must sum to one");
  for (std::size_t i = 0; i < t1_list.size(); ++i) {
    if (!(t1_list[i] > 0.0)) throw std::invalid_argument("every t1 must be positive");
    if (i > 0 && !(t1_list[i] < t1_list[i - 1])) throw std::invalid_argument("the t1 sweep must be decreasing");
  }
  const auto K = static_cast<Eigen::Index>(probs.size());
  Matrix logits(1, K);
  for (Eigen::Index j = 0; j < K; ++j) logits(0, j) = std::log(probs[static_cast<std::size_t>(j)]);
  Rng rng(derive_seed(a.seed, 0));
  const Matrix x1 = standard_normal(1, K, rng);
  const DecayStudy study = jacobian_decay_study(logits, upper, t1_list, x1);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + a.out);
  }
  std::ostream& csv = a.out.empty() ? out : file;
  write_decay_csv(csv, study);
  std::ostream& report = a.out.empty() ? err : out;
  const double bound_slope = -study.limit_margin / 2.0 + 0.1;
  report << "limit margin m = " << general(study.limit_margin) << (study.limit_on_boundary ? " (on boundary)" : "")
         << ", M = " << general(study.M) << '\n';
  report << "asymptotic slope = " << general(study.slope) << ", bound -m/2 + 0.1 = " << general(bound_slope) << ": "
         << (study.slope <= bound_slope ? "within bound" : "above bound") << '\n';
  report << "first c_t1 with jac_norm < 1e-6: " << general(study.first_c_below)
         << ", bound-implied threshold: " << general(study.threshold_c) << " (limit margin), "
         << general(study.row_threshold_c) << " (per-row margin): "
         << (study.first_c_below <= study.row_threshold_c ? "before threshold" : "not before threshold") << '\n';

  if (K == 2 && !a.slice_out.empty()) {
    const std::vector<double> quantiles = parse_number_list(a.quantiles);
    if (a.theta_points < 2) throw std::invalid_argument("theta-points must be at least 2");
    std::ofstream slice(a.slice_out, std::ios::binary);
    if (!slice) throw std::runtime_error("cannot write " + a.slice_out);
    slice << "t1,q,z,theta,soft\n";
    for (double t1 : t1_list) {
      std::vector<double> grid = upper;
      grid.push_back(t1);
      grid.push_back(0.0);
      const Schedule schedule = linear_schedule(grid);
      for (double q : quantiles) {
        const double z = normal_quantile(q);
        // Only the difference of the two coordinates matters; it has law N(0, 2).
        Matrix x(1, 2);
        x << -z / std::numbers::sqrt2, z / std::numbers::sqrt2;
        const TrajectoryNoise noise{x, {}};
        for (int k = 1; k <= a.theta_points; ++k) {
          const double theta = static_cast<double>(k) / (a.theta_points + 1);
          Tape tape;
          Matrix lg(1, 2);
          lg << std::log(theta), std::log1p(-theta);
          const Trajectory traj = sample_trajectory(tape.constant(lg), schedule, noise);
          slice << format_double(t1) << ',' << format_double(q) << ',' << format_double(z) << ','
                << format_double(theta) << ',' << format_double(traj.soft_sample.value()(0, 0)) << '\n';
        }
      }
    }
  } else if (!a.slice_out.empty()) {
    err << "note: the transport slice is only defined for K = 2\n";
  }
  return 0;
}

// ------------------------------------------------------------------ biasvar

struct BiasvarArgs {
  std::string config;
  int L = 2;
  int K = 3;
  std::string f = "linear";
  std::vector<std::string> estimators{"st,reinmax,gs-st,redge-soft,redge,redge-max,redge-cov,reinforce"};
  int replications = 10000;
  std::uint64_t seed = 0;
  double logit_scale = 1.0;
  std::string out;
  EstimatorFlags est;
};

int cmd_biasvar(BiasvarArgs a, std::ostream& out) {
  if (a.L < 1 || a.K < 2) throw std::invalid_argument("need L >= 1 and K >= 2");
  if (a.replications < 2) throw std::invalid_argument("need at least two replications");
  if (!a.est.tau) a.est.tau = 1.0;
  const std::vector<EstimatorKind> kinds = parse_estimators(a.estimators);
  Rng rng(derive_seed(a.seed, 0));
  const Matrix logits = a.logit_scale * standard_normal(a.L, a.K, rng);
  const Matrix ca = standard_normal(a.L, a.K, rng);
  const Matrix cb = standard_normal(a.L, a.K, rng);
  const Matrix cc = standard_normal(a.L, a.K, rng);
  Objective f;
  if (a.f == "linear") {
    f = linear_objective(ca);
  } else if (a.f == "quadratic") {
    f = quadratic_objective(ca, cb, cc);
  } else if (a.f == "cubic") {
    f = cubic_objective(ca, cb, cc);
  } else if (a.f == "polyprog") {
    if (a.K != 2) throw std::invalid_argument("the polyprog objective needs K = 2");
    PolyProgProblem prob;
    prob.L = a.L;
    f = [prob](const Var& x) { return polyprog_loss(x, prob); };
  } else {
    throw std::invalid_argument("f must be linear, quadratic, cubic or polyprog");
  }
  const FactorizedCategorical dist(logits);
  const int threads = thread_count_from_env();

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + a.out);
  }
  std::ostream& csv = a.out.empty() ? out : file;
  csv << "estimator,replications,bias_norm,bias_ci,bias_within_ci,trace_cov,mse,exact_norm\n";
  for (EstimatorKind kind : kinds) {
    EstimatorConfig cfg = default_estimator_config(BenchProblem::gmm, kind);
    a.est.apply(cfg);
    const BiasVarianceReport r = bias_variance(cfg, dist, f, a.replications, a.seed, threads);
    csv << r.estimator << ',' << r.replications << ',' << format_double(r.bias_norm) << ','
        << format_double(r.bias_ci) << ',' << (r.bias_norm <= r.bias_ci ? 1 : 0) << ',' << format_double(r.trace_cov) << ',' << format_double(r.mse) << ','
        << format_double(r.exact.norm()) << '\n';
  }
  return 0;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const std::string t = trim(text);
  std::vector<std::uint64_t> seeds;
  const auto dots = t.find("..");
  if (dots != std::string::npos) {
    const std::uint64_t lo = parse_seed(trim(t.substr(0, dots)));
    const std::uint64_t hi = parse_seed(trim(t.substr(dots + 2)));
    if (hi < lo) throw std::invalid_argument("seed range must not be decreasing: '" + text + "'");
    if (hi - lo >= 100000) throw std::invalid_argument("seed range too long: '" + text + "'");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  } else {
    for (const std::string& part : split(t, ',')) seeds.push_back(parse_seed(part));
  }
  if (seeds.empty()) throw std::invalid_argument("seed list is empty");
  return seeds;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> values;
  for (const std::string& part : split(text, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || used == 0) throw std::invalid_argument("not a number: '" + part + "'");
    values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("empty number list");
  return values;
}

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("quantile must lie in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::numbers::sqrt2);
    (cdf < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based gradient estimators for categorical distributions"};
  app.require_subcommand(1);

  GradcheckArgs ga;
  CLI::App* gc = app.add_subcommand("gradcheck", "Run the gradient oracle suite");
  gc->add_option("--config", ga.config, "JSON file of option values; flags win");
  gc->add_option("--seeds", ga.seeds, "Seeds as a range 0..4 or a list 0,1,2");
  gc->add_option("--filter", ga.filter, "Run only checks whose name contains this text");
  gc->add_option("--inject-fault", ga.inject_fault, "Break the oracle of the named check");
  gc->add_option("--out", ga.out, "Write a JSON report here");
  gc->add_flag("--list", ga.list, "List check names and exit");

  BenchArgs ba;
  CLI::App* bench = app.add_subcommand("bench", "Run a benchmark for one or more estimators and seeds");
  bench->add_option("problem", ba.problem, "poly, gmm or sudoku");
  bench->add_option("--config", ba.config, "JSON file of option values; flags win");
  bench->add_option("--estimator,--estimators", ba.estimators, "Estimator names, comma separated")->delimiter(',');
  bench->add_option("--seed", ba.seed, "Single run seed");
  bench->add_option("--seeds", ba.seeds, "Seeds as a range 0..4 or a list 0,1,2");
  bench->add_option("--steps", ba.steps, "Optimisation steps (default per problem)");
  bench->add_option("--lr", ba.lr, "Adam learning rate (default per problem)");
  bench->add_option("--p", ba.p, "Polynomial exponent");
  bench->add_option("--relaxation", ba.relaxation, "power or linear");
  bench->add_option("--batch", ba.batch, "Estimator replications averaged per step (poly)");
  bench->add_option("--L", ba.L, "Number of rows (poly)");
  bench->add_option("--c", ba.c, "Target value (poly)");
  bench->add_option("--puzzles", ba.puzzles, "Puzzle file, one 81-character puzzle per line");
  bench->add_option("--generate", ba.generate, "Number of generated puzzles when no file is given");
  bench->add_option("--blanks", ba.blanks, "Blank cells per generated puzzle");
  bench->add_option("--puzzle-seed", ba.puzzle_seed, "Seed of the puzzle generator");
  bench->add_option("--mc-draws", ba.mc_draws, "Hard samples per Sudoku loss evaluation");
  bench->add_option("--out", ba.out, "Output directory for traces and summaries");
  bench->add_option("--format", ba.format, "Comparison table format: text, csv or json");
  bench->add_flag("--timing", ba.timing, "Record wall-clock time per step in the traces");
  bench->add_flag("--no-trace", ba.no_trace, "Skip the per-run trace files");
  ba.est.add_to(*bench);

  VanishArgs va;
  CLI::App* vanish = app.add_subcommand("vanish", "Jacobian decay study as t1 goes to zero");
  vanish->add_option("--config", va.config, "JSON file of option values; flags win");
  vanish->add_option("--probs", va.probs, "Category probabilities, comma separated");
  vanish->add_option("--t1", va.t1, "Decreasing t1 values");
  vanish->add_option("--upper", va.upper, "Fixed upper grid from 1 down to t2");
  vanish->add_option("--seed", va.seed, "Seed of the frozen initial noise");
  vanish->add_option("--quantiles", va.quantiles, "Noise quantiles of the K = 2 transport slice");
  vanish->add_option("--theta-points", va.theta_points, "Points of the theta sweep in the slice");
  vanish->add_option("--out", va.out, "Decay table CSV (stdout when omitted)");
  vanish->add_option("--slice-out", va.slice_out, "Transport slice CSV, K = 2 only");

  BiasvarArgs bv;
  CLI::App* biasvar = app.add_subcommand("biasvar", "Bias, variance and MSE against the exact gradient");
  biasvar->add_option("--config", bv.config, "JSON file of option values; flags win");
  biasvar->add_option("--L", bv.L, "Rows");
  biasvar->add_option("--K", bv.K, "Categories");
  biasvar->add_option("--f", bv.f, "linear, quadratic, cubic or polyprog");
  biasvar->add_option("--estimators", bv.estimators, "Estimator names, comma separated")->delimiter(',');
  biasvar->add_option("--replications", bv.replications, "Estimates per estimator");
  biasvar->add_option("--seed", bv.seed, "Seed of the instance and the replications");
  biasvar->add_option("--logit-scale", bv.logit_scale, "Standard deviation of the random logits");
  biasvar->add_option("--out", bv.out, "Report CSV (stdout when omitted)");
  bv.est.add_to(*biasvar);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gc->parsed()) {
      if (!ga.config.empty()) apply_config(*gc, ga.config);
      return cmd_gradcheck(ga, out);
    }
    if (bench->parsed()) {
      if (!ba.config.empty()) apply_config(*bench, ba.config);
      return cmd_bench(ba, out, err);
    }
    if (vanish->parsed()) {
      if (!va.config.empty()) apply_config(*vanish, va.config);
      return cmd_vanish(va, out, err);
    }
    if (biasvar->parsed()) {
      if (!bv.config.empty()) apply_config(*biasvar, bv.config);
      return cmd_biasvar(bv, out);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace redge::cli
