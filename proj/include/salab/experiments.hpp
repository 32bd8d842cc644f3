#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "salab/algorithms.hpp"
#include "salab/bounds.hpp"
#include "salab/config.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"
#include "salab/operators.hpp"
#include "salab/parallel.hpp"
#include "salab/plot.hpp"
#include "salab/sa_engine.hpp"

namespace salab {

// ---------------------------------------------------------------------------
// Typed configuration

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t base_seed = 1;
  long runs = 100;
  long horizon = 10000;
  std::string output_dir = "salab_out";

  std::string mdp_file;
  std::uint64_t mdp_seed = 1;
  int states = 5;
  int actions = 3;
  int branching = 3;
  double gamma = 0.9;

  Family family = Family::q_learning;
  int n = 1;
  double lambda = 0.5;
  double c_bar = 1.0;
  double rho_bar = 1.0;
  std::string policy = "uniform";
  std::uint64_t policy_seed = 1;
  std::string behavior = "target";
  std::uint64_t behavior_seed = 2;
  double policy_floor = 0.05;
  std::string x0 = "zero";

  std::string step_kind = "constant";
  double alpha = 0.05;
  double h = 1.0;
  double xi = 0.5;

  MartingaleNoise noise;

  std::string cp_kind = "geometric";
  long cp_count = 200;

  std::vector<double> sweep;
  long budget = 100000;
  long mixing_horizon = 200;
  long instances = 10;
  long samples = 1000000;
  long pairs = 1000;
  std::vector<double> gamma_grid{0.3, 0.5, 0.7, 0.9, 0.95};
  bool log_y = true;

  std::string hash;
};

namespace detail {

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"mse_curve",         "bias_variance_n",      "bias_variance_lambda",
                                                 "contraction_check", "operator_equivalence", "bound_envelope",
                                                 "optimal_n_scan"};
  return names;
}

inline bool one_of(const std::string& v, std::initializer_list<const char*> opts) {
  for (const char* o : opts)
    if (v == o) return true;
  return false;
}

}  // namespace detail

inline ExperimentConfig experiment_config(const Config& c) {
  ExperimentConfig e;
  e.experiment = c.text("experiment");
  const auto& names = detail::experiment_names();
  if (std::find(names.begin(), names.end(), e.experiment) == names.end())
    c.fail("experiment", "unknown experiment `" + e.experiment + "`");
  e.base_seed = static_cast<std::uint64_t>(c.integer("base_seed", 1));
  e.runs = c.integer("runs", e.runs);
  e.horizon = c.integer("horizon", e.horizon);
  e.output_dir = c.text("output_dir", e.output_dir);

  e.mdp_file = c.text("mdp.file", "");
  if (!e.mdp_file.empty())
    for (const char* k : {"mdp.seed", "mdp.states", "mdp.actions", "mdp.branching", "mdp.gamma"})
      if (c.has(k)) c.fail(k, "cannot be combined with mdp.file");
  e.mdp_seed = static_cast<std::uint64_t>(c.integer("mdp.seed", 1));
  e.states = static_cast<int>(c.integer("mdp.states", e.states));
  e.actions = static_cast<int>(c.integer("mdp.actions", e.actions));
  e.branching = static_cast<int>(c.integer("mdp.branching", std::min(e.branching, e.states)));
  e.gamma = c.real("mdp.gamma", e.gamma);
  if (e.states < 1) c.fail("mdp.states", "must be positive");
  if (e.actions < 1) c.fail("mdp.actions", "must be positive");
  if (e.branching < 1 || e.branching > e.states) c.fail("mdp.branching", "must lie in [1, mdp.states]");
  if (!(e.gamma > 0.0 && e.gamma < 1.0)) c.fail("mdp.gamma", "must lie in (0,1)");

  try {
    e.family = parse_family(c.text("algorithm.family", "q_learning"));
  } catch (const Error& err) {
    c.fail("algorithm.family", err.what());
  }
  e.n = static_cast<int>(c.integer("algorithm.n", e.n));
  e.lambda = c.real("algorithm.lambda", e.lambda);
  e.c_bar = c.real("algorithm.c_bar", e.c_bar);
  e.rho_bar = c.real("algorithm.rho_bar", e.rho_bar);
  e.policy = c.text("algorithm.policy", e.policy);
  e.policy_seed = static_cast<std::uint64_t>(c.integer("algorithm.policy_seed", 1));
  e.behavior = c.text("algorithm.behavior", e.behavior);
  e.behavior_seed = static_cast<std::uint64_t>(c.integer("algorithm.behavior_seed", 2));
  e.policy_floor = c.real("algorithm.policy_floor", e.policy_floor);
  e.x0 = c.text("algorithm.x0", e.x0);
  if (e.n < 1) c.fail("algorithm.n", "must be positive");
  if (!(e.lambda >= 0.0 && e.lambda < 1.0)) c.fail("algorithm.lambda", "must lie in [0,1)");
  if (!(e.c_bar >= 1.0)) c.fail("algorithm.c_bar", "must be at least 1");
  if (!(e.rho_bar >= e.c_bar)) c.fail("algorithm.rho_bar", "must be at least algorithm.c_bar");
  if (!detail::one_of(e.policy, {"uniform", "random"})) c.fail("algorithm.policy", "expected uniform or random");
  if (!detail::one_of(e.behavior, {"uniform", "random", "target"}))
    c.fail("algorithm.behavior", "expected uniform, random or target");
  if (!(e.policy_floor >= 0.0 && e.policy_floor * e.actions <= 1.0))
    c.fail("algorithm.policy_floor", "must lie in [0, 1/mdp.actions]");
  if (!detail::one_of(e.x0, {"zero", "ones", "fixed_point"})) c.fail("algorithm.x0", "expected zero, ones or fixed_point");

  e.step_kind = c.text("stepsize.kind", e.step_kind);
  e.alpha = c.real("stepsize.alpha", e.alpha);
  e.h = c.real("stepsize.h", e.h);
  e.xi = c.real("stepsize.xi", e.xi);
  if (!detail::one_of(e.step_kind, {"constant", "linear", "polynomial", "admissible"}))
    c.fail("stepsize.kind", "expected constant, linear, polynomial or admissible");
  if (!(e.alpha > 0.0)) c.fail("stepsize.alpha", "must be positive");
  if (e.step_kind == "constant" && !(e.alpha < 1.0)) c.fail("stepsize.alpha", "a constant stepsize must lie in (0,1)");
  if (!(e.h > 0.0)) c.fail("stepsize.h", "must be positive");
  if (e.step_kind == "polynomial" && !(e.xi > 0.0 && e.xi < 1.0)) c.fail("stepsize.xi", "must lie in (0,1)");

  std::string shape = c.text("noise.shape", "none");
  if (shape == "none") e.noise.shape = NoiseShape::none;
  else if (shape == "bounded_symmetric") e.noise.shape = NoiseShape::bounded_symmetric;
  else c.fail("noise.shape", "expected none or bounded_symmetric");
  e.noise.A2 = c.real("noise.a2", 0.0);
  e.noise.B2 = c.real("noise.b2", 0.0);
  if (!(e.noise.A2 >= 0.0)) c.fail("noise.a2", "must be nonnegative");
  if (!(e.noise.B2 >= 0.0)) c.fail("noise.b2", "must be nonnegative");

  e.cp_kind = c.text("checkpoints.kind", e.cp_kind);
  e.cp_count = c.integer("checkpoints.count", e.cp_count);
  if (!detail::one_of(e.cp_kind, {"geometric", "linear", "every"}))
    c.fail("checkpoints.kind", "expected geometric, linear or every");
  if (e.cp_count < 1) c.fail("checkpoints.count", "must be positive");

  e.sweep = c.reals("sweep.values");
  e.budget = c.integer("sweep.budget", e.budget);
  e.mixing_horizon = c.integer("mixing.horizon", e.mixing_horizon);
  e.instances = c.integer("instances", e.instances);
  e.samples = c.integer("samples", e.samples);
  e.pairs = c.integer("pairs", e.pairs);
  e.gamma_grid = c.reals("gamma_grid", e.gamma_grid);
  e.log_y = c.boolean("plot.log_y", e.log_y);
  if (e.horizon < 1) c.fail("horizon", "must be positive");
  if (e.mixing_horizon < 1) c.fail("mixing.horizon", "must be positive");
  if (e.instances < 1) c.fail("instances", "must be positive");
  if (e.samples < 2) c.fail("samples", "must be at least 2");
  if (e.pairs < 1) c.fail("pairs", "must be positive");
  for (double g : e.gamma_grid)
    if (!(g > 0.0 && g < 1.0)) c.fail("gamma_grid", "every discount must lie in (0,1)");

  const bool monte_carlo = detail::one_of(e.experiment, {"mse_curve", "bias_variance_n", "bias_variance_lambda", "bound_envelope"});
  if (monte_carlo && e.runs < 2) c.fail("runs", "Monte-Carlo experiments need at least 2 runs");
  if (e.experiment == "bias_variance_n") {
    if (e.sweep.empty())
      for (int v = 1; v <= 20; ++v) e.sweep.push_back(v);
    for (double v : e.sweep)
      if (!(v >= 1.0 && v == std::floor(v))) c.fail("sweep.values", "n values must be positive integers");
    if (e.budget < static_cast<long>(*std::max_element(e.sweep.begin(), e.sweep.end())))
      c.fail("sweep.budget", "must cover at least one update for every n");
  }
  if (e.experiment == "bias_variance_lambda") {
    if (e.sweep.empty())
      for (int v = 1; v <= 9; ++v) e.sweep.push_back(v / 10.0);
    for (double v : e.sweep)
      if (!(v > 0.0 && v < 1.0)) c.fail("sweep.values", "lambda values must lie in (0,1)");
  }
  if (e.sweep.size() == 1 && detail::one_of(e.experiment, {"bias_variance_n", "bias_variance_lambda"}))
    c.fail("sweep.values", "a trend needs at least two grid points");
  if (e.family == Family::td_lambda && e.experiment != "contraction_check" && e.experiment != "operator_equivalence" &&
      e.step_kind != "constant" && e.step_kind != "admissible")
    c.fail("stepsize.kind", "TD(lambda) runs use a constant stepsize");
  if (e.family == Family::td_lambda && !(e.lambda > 0.0) && e.experiment != "bias_variance_lambda")
    c.fail("algorithm.lambda", "TD(lambda) needs lambda in (0,1); use nstep_td with n = 1 for lambda = 0");
  e.hash = config_hash(c);
  return e;
}

inline ExperimentConfig load_config(const std::string& path) { return experiment_config(Config::load(path)); }

// ---------------------------------------------------------------------------
// Problem instances

struct Problem {
  Mdp mdp;
  Family family = Family::q_learning;
  Policy target;
  Policy behavior;
  int n = 1;
  double lambda = 0.5;
  double c_bar = 1.0;
  double rho_bar = 1.0;

  NormKind norm() const { return (family == Family::q_learning || family == Family::v_trace) ? NormKind::linf : NormKind::l2; }
  int dimension() const { return family == Family::q_learning ? mdp.q_size() : mdp.num_states(); }
  VTraceParams vtrace() const { return VTraceParams{n, c_bar, rho_bar, target, behavior}; }
  const Policy& sampling() const { return (family == Family::q_learning || family == Family::v_trace) ? behavior : target; }

  Vector fixed_point() const {
    switch (family) {
      case Family::q_learning: return solve_optimal_q(mdp).q;
      case Family::v_trace: return vtrace_fixed_point(mdp, vtrace());
      default: return solve_value_function(mdp, target);
    }
  }
};

inline Policy make_policy(const std::string& kind, std::uint64_t seed, int S, int A, double floor) {
  if (kind == "uniform") return uniform_policy(S, A);
  return random_policy(seed, S, A, floor);
}

inline Problem make_problem(const ExperimentConfig& e) {
  Problem p;
  p.mdp = e.mdp_file.empty() ? random_mdp(e.mdp_seed, e.states, e.actions, e.branching, e.gamma) : load_mdp(e.mdp_file);
  const int S = p.mdp.num_states(), A = p.mdp.num_actions();
  p.family = e.family;
  p.target = make_policy(e.policy, e.policy_seed, S, A, e.policy_floor);
  p.behavior = e.behavior == "target" ? p.target : make_policy(e.behavior, e.behavior_seed, S, A, e.policy_floor);
  p.n = e.n;
  p.lambda = e.lambda;
  p.c_bar = e.c_bar;
  p.rho_bar = e.rho_bar;
  return p;
}

inline Vector initial_iterate(const Problem& p, const std::string& kind) {
  if (kind == "fixed_point") return p.fixed_point();
  if (kind == "ones") return Vector::Ones(p.dimension());
  return Vector::Zero(p.dimension());
}

// The SA operator of the problem; TD(lambda) uses the trace cut at the level set by alpha.
inline std::unique_ptr<AsyncOperator> make_operator(const Problem& p, double alpha) {
  switch (p.family) {
    case Family::q_learning: return std::make_unique<QLearningOperator>(p.mdp, p.behavior);
    case Family::v_trace: return std::make_unique<VTraceOperator>(p.mdp, p.vtrace());
    case Family::nstep_td: return std::make_unique<NStepOperator>(p.mdp, p.target, p.n);
    case Family::td_lambda:
      return std::make_unique<TdLambdaOperator>(p.mdp, p.target, TdLambdaParams::from_stepsize(p.mdp.gamma, p.lambda, alpha));
  }
  throw Error("make_operator: unknown family");
}

// Chain whose mixing enters the family bound: state-action-next-state
// windows for Q-learning, the state chain of the sampling policy otherwise.
inline ErgodicityFit problem_mixing(const Problem& p, long horizon) {
  if (p.family == Family::q_learning) return ergodicity_fit(lift_q_chain(p.mdp, p.behavior).chain, horizon);
  FiniteChain c = make_chain(policy_transition(p.mdp, p.sampling()));
  check_ergodic(c);
  return ergodicity_fit(c, horizon);
}

inline FamilyBound problem_bound(const Problem& p, const Vector& x0, const MixingModel& mm, const BoundOptions& opt = {}) {
  switch (p.family) {
    case Family::q_learning: return q_constant_bound(p.mdp, p.behavior, x0, mm, opt);
    case Family::v_trace: return vtrace_constant_bound(p.mdp, p.vtrace(), x0, mm, opt);
    case Family::nstep_td: return nstep_constant_bound(p.mdp, p.target, p.n, x0, mm, opt);
    case Family::td_lambda: return tdlambda_constant_bound(p.mdp, p.target, p.lambda, x0, mm, opt);
  }
  throw Error("problem_bound: unknown family");
}

// ---------------------------------------------------------------------------
// Monte-Carlo error curves along the algorithms themselves

struct McRuns {
  McCurve curve;
  std::vector<std::vector<double>> per_run;  // squared errors, per run and checkpoint
};

// One run of the problem's algorithm; obs sees (k, x_k) at each checkpoint.
inline void run_algorithm(const Problem& p, const StepsizeSchedule& s, const Vector& x0, long horizon,
                          const std::vector<long>& cps, std::uint64_t seed, const Observer& obs) {
  switch (p.family) {
    case Family::q_learning: run_q_learning(p.mdp, p.behavior, s, x0, horizon, cps, seed, obs); return;
    case Family::v_trace: run_vtrace(p.mdp, p.vtrace(), s, x0, horizon, cps, seed, obs); return;
    case Family::nstep_td: run_nstep_td(p.mdp, p.target, p.n, s, x0, horizon, cps, seed, obs); return;
    case Family::td_lambda:
      if (s.kind != StepsizeKind::constant) throw Error("run_algorithm: TD(lambda) runs use a constant stepsize");
      run_td_lambda(p.mdp, p.target, p.lambda, s.alpha, x0, horizon, cps, seed, obs);
      return;
  }
}

inline McRuns algorithm_mse(const Problem& p, const StepsizeSchedule& s, const Vector& x0, long horizon,
                            const std::vector<long>& cps, long runs, std::uint64_t base_seed) {
  if (runs < 2) throw Error("algorithm_mse: need at least two runs");
  const Vector xs = p.fixed_point();
  const NormKind nk = p.norm();
  McRuns out;
  out.per_run.assign(static_cast<std::size_t>(runs), {});
  parallel_for(static_cast<std::size_t>(runs), [&](std::size_t r) {
    auto& row = out.per_run[r];
    row.reserve(cps.size());
    run_algorithm(p, s, x0, horizon, cps, run_seed(base_seed, static_cast<long>(r)), [&](long, const Vector& x) {
      double e = norm(x - xs, nk);
      row.push_back(e * e);
    });
  });
  out.curve = aggregate_runs(cps, out.per_run);
  return out;
}

// Mean over the last 10% of checkpoints, averaged per run first so the
// standard error reflects run-to-run spread.
inline McStat plateau(const McRuns& r) {
  const std::size_t nc = r.curve.checkpoints.size();
  const std::size_t tail = std::max<std::size_t>(1, (nc + 9) / 10);
  std::vector<double> per(r.per_run.size());
  for (std::size_t i = 0; i < r.per_run.size(); ++i)
    per[i] = pairwise_sum(r.per_run[i].data() + (nc - tail), tail) / static_cast<double>(tail);
  return summarize(per);
}

// First checkpoint whose mean is at or below `level`; -1 if none.
inline long first_below(const McCurve& c, double level) {
  for (std::size_t i = 0; i < c.checkpoints.size(); ++i)
    if (c.mean[i] <= level) return c.checkpoints[i];
  return -1;
}

// Ranks with ties averaged.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length samples of size >= 2");
  auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<long> make_checkpoints(const std::string& kind, long horizon, long count) {
  if (kind == "every") return every_checkpoint(horizon);
  if (kind == "linear") return linear_checkpoints(horizon, std::min(count, horizon));
  return geometric_checkpoints(horizon);
}

// ---------------------------------------------------------------------------
// Results

struct RunResult {
  std::string experiment;
  std::vector<std::string> files;
  std::vector<std::pair<std::string, double>> summary;
  long violations = 0;  // bound / contraction breaches; nonzero fails acceptance
  double wall_seconds = 0.0;
  std::string config_hash;

  void add(const std::string& k, double v) { summary.emplace_back(k, v); }
  double get(const std::string& k) const {
    for (const auto& [key, v] : summary)
      if (key == k) return v;
    throw Error("RunResult: no summary entry `" + k + "`");
  }
};

namespace detail {

class OutputDir {
 public:
  OutputDir(const std::string& dir, RunResult& r) : dir_(dir), r_(r) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_ + ": " + ec.message());
  }
  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

  template <class Fn>
  void csv(const std::string& name, Fn&& write) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw IoError("cannot write " + path(name));
    write(f);
    if (!f) throw IoError("write failed for " + path(name));
    r_.files.push_back(path(name));
  }
  void plot(const std::string& name, const std::vector<Curve>& curves, const PlotOptions& o) {
    emit_plot(curves, path(name), o);
    r_.files.push_back(path(name));
  }

 private:
  std::string dir_;
  RunResult& r_;
};

inline Curve curve_of(const std::string& label, const std::vector<long>& k, const std::vector<double>& y) {
  Curve c{label, {}, y};
  for (long v : k) c.x.push_back(static_cast<double>(v));
  return c;
}

inline StepsizeSchedule resolve_schedule(const ExperimentConfig& e, const Problem& p, const Vector& x0, RunResult& r) {
  if (e.step_kind == "admissible") {
    auto fit = problem_mixing(p, e.mixing_horizon);
    double a = problem_bound(p, x0, fit.model()).max_stepsize();
    r.add("alpha", a);
    return StepsizeSchedule::constant(a);
  }
  if (e.step_kind == "linear") return StepsizeSchedule::linear(e.alpha, e.h);
  if (e.step_kind == "polynomial") return StepsizeSchedule::polynomial(e.alpha, e.h, e.xi);
  return StepsizeSchedule::constant(e.alpha);
}

inline std::uint64_t instance_seed(std::uint64_t base, long i) { return child_seed(base, "instance", static_cast<std::uint64_t>(i)); }

// Random instance i for the instance-sweeping checks.
inline Problem instance_problem(const ExperimentConfig& e, Family f, long i) {
  const std::uint64_t s = instance_seed(e.base_seed, i);
  Problem p;
  p.mdp = random_mdp(child_seed(s, "mdp"), e.states, e.actions, e.branching, e.gamma);
  p.family = f;
  p.target = random_policy(child_seed(s, "target"), e.states, e.actions, e.policy_floor);
  p.behavior = random_policy(child_seed(s, "behavior"), e.states, e.actions, std::max(e.policy_floor, 1e-3));
  p.n = e.n;
  p.lambda = e.lambda > 0.0 ? e.lambda : 0.5;
  p.c_bar = e.c_bar;
  p.rho_bar = e.rho_bar;
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

inline void experiment_mse_curve(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  Problem p = make_problem(e);
  Vector x0 = initial_iterate(p, e.x0);
  StepsizeSchedule s = detail::resolve_schedule(e, p, x0, r);
  auto op = make_operator(p, s.alpha < 1.0 ? s.alpha : 0.5);
  auto cps = make_checkpoints(e.cp_kind, e.horizon, e.cp_count);
  McCurve c = mse_curve(*op, s, e.noise, x0, e.horizon, cps, e.runs, e.base_seed);
  out.csv("mse.csv", [&](std::ostream& os) { write_mse_csv(os, c); });
  PlotOptions po;
  po.title = std::string("mean squared error, ") + family_name(p.family);
  po.y_label = "E|x_k - x*|^2";
  po.log_y = e.log_y && *std::min_element(c.mean.begin(), c.mean.end()) > 0.0;
  out.plot("mse.svg", {detail::curve_of("mse", c.checkpoints, c.mean)}, po);
  // Plateau from the mean curve; the engine does not keep per-run data.
  const std::size_t nc = c.checkpoints.size(), tail = std::max<std::size_t>(1, (nc + 9) / 10);
  double pl = pairwise_sum(c.mean.data() + (nc - tail), tail) / static_cast<double>(tail);
  r.add("beta", op->beta());
  r.add("final_mse", c.mean.back());
  r.add("final_stderr", c.stderr_.back());
  r.add("plateau", pl);
}

inline void experiment_bias_variance_n(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  Problem base = make_problem(e);
  base.family = Family::nstep_td;
  Vector x0 = initial_iterate(base, e.x0);
  const StepsizeSchedule s = StepsizeSchedule::constant(e.alpha);
  std::vector<double> ns, plateaus, speeds;
  std::vector<Curve> curves;
  std::ostringstream table;
  table << "n,updates,plateau,plateau_stderr,updates_to_2x,samples_to_2x,final_mse\n";
  for (std::size_t g = 0; g < e.sweep.size(); ++g) {
    Problem p = base;
    p.n = static_cast<int>(e.sweep[g]);
    const long updates = e.budget / p.n;
    auto cps = linear_checkpoints(updates, std::min(updates, e.cp_count));
    McRuns mr = algorithm_mse(p, s, x0, updates, cps, e.runs, child_seed(e.base_seed, "grid", g));
    McStat pl = plateau(mr);
    long hit = first_below(mr.curve, 2.0 * pl.mean);
    ns.push_back(p.n);
    plateaus.push_back(pl.mean);
    speeds.push_back(static_cast<double>(hit));
    table << p.n << ',' << updates << ',' << format_double(pl.mean) << ',' << format_double(pl.stderr_) << ',' << hit
          << ',' << hit * p.n << ',' << format_double(mr.curve.mean.back()) << '\n';
    out.csv("mse_n" + std::to_string(p.n) + ".csv", [&](std::ostream& os) { write_mse_csv(os, mr.curve); });
    Curve c = detail::curve_of("n=" + std::to_string(p.n), mr.curve.checkpoints, mr.curve.mean);
    for (double& x : c.x) x *= p.n;  // samples consumed
    curves.push_back(std::move(c));
  }
  out.csv("bias_variance_n.csv", [&](std::ostream& os) { os << table.str(); });
  PlotOptions po;
  po.title = "n-step TD at a fixed sample budget";
  po.x_label = "samples";
  po.y_label = "E|V_k - V_pi|_2^2";
  po.log_y = e.log_y;
  out.plot("bias_variance_n.svg", curves, po);
  const double rho_plateau = spearman(ns, plateaus);
  const double rho_speed = spearman(ns, speeds);
  std::size_t best = static_cast<std::size_t>(std::min_element(plateaus.begin(), plateaus.end()) - plateaus.begin());
  r.add("spearman_plateau", rho_plateau);
  r.add("spearman_updates_to_2x", rho_speed);
  r.add("argmin_plateau_n", ns[best]);
  r.add("trend_ok", (rho_plateau >= 0.8 && rho_speed <= -0.8) ? 1.0 : 0.0);
}

inline void experiment_bias_variance_lambda(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  Problem base = make_problem(e);
  base.family = Family::td_lambda;
  Vector x0 = initial_iterate(base, e.x0);
  const StepsizeSchedule s = StepsizeSchedule::constant(e.alpha);
  auto cps = linear_checkpoints(e.horizon, std::min(e.horizon, e.cp_count));
  std::vector<double> lambdas, plateaus, speeds;
  std::vector<Curve> curves;
  std::ostringstream table;
  table << "lambda,plateau,plateau_stderr,updates_to_2x,final_mse\n";
  for (std::size_t g = 0; g < e.sweep.size(); ++g) {
    Problem p = base;
    p.lambda = e.sweep[g];
    McRuns mr = algorithm_mse(p, s, x0, e.horizon, cps, e.runs, child_seed(e.base_seed, "grid", g));
    McStat pl = plateau(mr);
    long hit = first_below(mr.curve, 2.0 * pl.mean);
    lambdas.push_back(p.lambda);
    plateaus.push_back(pl.mean);
    speeds.push_back(static_cast<double>(hit));
    table << format_double(p.lambda) << ',' << format_double(pl.mean) << ',' << format_double(pl.stderr_) << ',' << hit
          << ',' << format_double(mr.curve.mean.back()) << '\n';
    char name[64];
    std::snprintf(name, sizeof name, "mse_lambda%.2f.csv", p.lambda);
    out.csv(name, [&](std::ostream& os) { write_mse_csv(os, mr.curve); });
    char label[32];
    std::snprintf(label, sizeof label, "lambda=%.2f", p.lambda);
    curves.push_back(detail::curve_of(label, mr.curve.checkpoints, mr.curve.mean));
  }
  out.csv("bias_variance_lambda.csv", [&](std::ostream& os) { os << table.str(); });
  PlotOptions po;
  po.title = "TD(lambda) at a fixed stepsize";
  po.y_label = "E|V_k - V_pi|_2^2";
  po.log_y = e.log_y;
  out.plot("bias_variance_lambda.svg", curves, po);
  const double rho_plateau = spearman(lambdas, plateaus);
  const double rho_speed = spearman(lambdas, speeds);
  r.add("spearman_plateau", rho_plateau);
  r.add("spearman_updates_to_2x", rho_speed);
  r.add("trend_ok", (rho_plateau >= 0.8 && rho_speed <= -0.8) ? 1.0 : 0.0);
}

struct ContractionRecord {
  long instance;
  Family family;
  NormKind norm;
  double ratio;
  double beta;
};

inline const char* norm_name(NormKind k) {
  switch (k) {
    case NormKind::l1: return "l1";
    case NormKind::l2: return "l2";
    case NormKind::linf: return "linf";
  }
  return "?";
}

// Sup ratio of the expected operator over random pairs, per family and norm.
inline std::vector<ContractionRecord> contraction_records(const ExperimentConfig& e) {
  std::vector<ContractionRecord> recs;
  const Family fams[] = {Family::q_learning, Family::v_trace, Family::nstep_td, Family::td_lambda};
  for (long i = 0; i < e.instances; ++i) {
    for (Family f : fams) {
      Problem p = detail::instance_problem(e, f, i);
      const std::uint64_t seed = child_seed(detail::instance_seed(e.base_seed, i), family_name(f));
      std::function<Vector(const Vector&)> F;
      double beta = 0.0;
      std::vector<NormKind> norms{p.norm()};
      if (f == Family::q_learning) {
        F = [&p](const Vector& q) { return q_expected(q, p.mdp, p.behavior); };
        beta = q_beta(p.mdp, p.behavior);
      } else if (f == Family::v_trace) {
        auto vp = p.vtrace();
        validate_vtrace(p.mdp, vp);
        auto mats = vtrace_matrices(p.mdp, vp);
        F = [mats](const Vector& v) { return Vector(mats.G * v + mats.b); };
        beta = vtrace_beta_formula(mats.K_min, p.mdp.gamma, vp.n, mats.C_min, mats.D_min);
      } else if (f == Family::nstep_td) {
        auto op = discounted_trace_operator(p.mdp, p.target, p.mdp.gamma, p.n);
        F = [op](const Vector& v) { return Vector(op.G * v + op.b); };
        beta = nstep_beta_formula(op.K_min, p.mdp.gamma, p.n);
        norms = {NormKind::l1, NormKind::l2, NormKind::linf};
      } else {
        int tau = tdlambda_truncation_level(p.mdp.gamma, p.lambda, e.alpha);
        auto op = discounted_trace_operator(p.mdp, p.target, p.mdp.gamma * p.lambda, tau + 1);
        F = [op](const Vector& v) { return Vector(op.G * v + op.b); };
        beta = tdlambda_beta_formula(op.K_min, p.mdp.gamma, p.lambda, tau);
      }
      for (NormKind nk : norms) {
        double ratio = contraction_ratio(F, p.dimension(), nk, static_cast<int>(e.pairs), child_seed(seed, norm_name(nk)));
        recs.push_back({i, f, nk, ratio, beta});
      }
    }
  }
  return recs;
}

inline void experiment_contraction_check(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  auto recs = contraction_records(e);
  double worst_gap = -INFINITY;
  out.csv("contraction.csv", [&](std::ostream& os) {
    os << "instance,family,norm,ratio,beta,holds\n";
    for (const auto& c : recs) {
      bool holds = c.ratio <= c.beta + 1e-12;
      if (!holds) ++r.violations;
      worst_gap = std::max(worst_gap, c.ratio - c.beta);
      os << c.instance << ',' << family_name(c.family) << ',' << norm_name(c.norm) << ',' << format_double(c.ratio)
         << ',' << format_double(c.beta) << ',' << (holds ? 1 : 0) << '\n';
    }
  });
  r.add("checks", static_cast<double>(recs.size()));
  r.add("max_ratio_minus_beta", worst_gap);
}

struct EquivalenceRecord {
  long instance;
  Family family;
  int coord;
  double analytic;
  double empirical;
  double stderr_;
};

inline std::vector<EquivalenceRecord> equivalence_records(const ExperimentConfig& e) {
  std::vector<EquivalenceRecord> recs;
  const Family fams[] = {Family::q_learning, Family::v_trace, Family::nstep_td, Family::td_lambda};
  for (long i = 0; i < e.instances; ++i) {
    for (Family f : fams) {
      Problem p = detail::instance_problem(e, f, i);
      const std::uint64_t seed = child_seed(detail::instance_seed(e.base_seed, i), family_name(f));
      auto op = make_operator(p, e.alpha);
      Rng rng(child_seed(seed, "point"));
      Vector x(op->dimension());
      for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = rng.uniform(-5.0, 5.0);
      Vector exact = op->expected(x);
      EmpiricalEstimate est = empirical_expected(*op, x, e.samples, child_seed(seed, "draws"));
      for (Eigen::Index j = 0; j < x.size(); ++j)
        recs.push_back({i, f, static_cast<int>(j), exact(j), est.mean(j), est.stderr_(j)});
    }
  }
  return recs;
}

// True when |analytic - empirical| <= 3 stderr (plus rounding slack).
inline bool within_3se(const EquivalenceRecord& r) {
  return std::abs(r.analytic - r.empirical) <= 3.0 * r.stderr_ + 1e-12 * (1.0 + std::abs(r.analytic));
}

// V-trace with behavior = target and c_bar = rho_bar = 1 against n-step TD.
struct ReductionCheck {
  double max_operator_diff = 0.0;
  double max_beta_diff = 0.0;
};

inline ReductionCheck vtrace_nstep_reduction(const Mdp& m, const Policy& pi, int n, std::uint64_t seed) {
  VTraceParams vp{n, 1.0, 1.0, pi, pi};
  auto mats = vtrace_matrices(m, vp);
  auto op = discounted_trace_operator(m, pi, m.gamma, n);
  Rng rng(seed);
  ReductionCheck out;
  for (int t = 0; t < 20; ++t) {
    Vector v(m.num_states());
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.uniform(-10.0, 10.0);
    Vector a = mats.G * v + mats.b, b = op.G * v + op.b;
    out.max_operator_diff = std::max(out.max_operator_diff, (a - b).cwiseAbs().maxCoeff());
  }
  double b2 = vtrace_beta_formula(mats.K_min, m.gamma, n, mats.C_min, mats.D_min);
  double b3 = nstep_beta_formula(op.K_min, m.gamma, n);
  out.max_beta_diff = std::abs(b2 - b3);
  return out;
}

inline void experiment_operator_equivalence(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  auto recs = equivalence_records(e);
  long outside = 0;
  double max_z = 0.0;
  out.csv("equivalence.csv", [&](std::ostream& os) {
    os << "instance,family,coord,analytic,empirical,stderr,within_3se\n";
    for (const auto& c : recs) {
      bool ok = within_3se(c);
      if (!ok) ++outside;
      if (c.stderr_ > 0.0) max_z = std::max(max_z, std::abs(c.analytic - c.empirical) / c.stderr_);
      os << c.instance << ',' << family_name(c.family) << ',' << c.coord << ',' << format_double(c.analytic) << ','
         << format_double(c.empirical) << ',' << format_double(c.stderr_) << ',' << (ok ? 1 : 0) << '\n';
    }
  });
  ReductionCheck red;
  for (long i = 0; i < e.instances; ++i) {
    Problem p = detail::instance_problem(e, Family::nstep_td, i);
    auto rc = vtrace_nstep_reduction(p.mdp, p.target, p.n, child_seed(detail::instance_seed(e.base_seed, i), "reduction"));
    red.max_operator_diff = std::max(red.max_operator_diff, rc.max_operator_diff);
    red.max_beta_diff = std::max(red.max_beta_diff, rc.max_beta_diff);
  }
  r.add("coordinates", static_cast<double>(recs.size()));
  r.add("outside_3se", static_cast<double>(outside));
  r.add("max_abs_z", max_z);
  r.add("reduction_max_diff", red.max_operator_diff);
  r.add("reduction_beta_diff", red.max_beta_diff);
}

struct EnvelopeOutcome {
  McCurve mse;
  BoundCurve bound;
  double alpha = 0.0;
  long start = 0;
  long violations = 0;
  double min_margin = INFINITY;  // smallest bound - (mean + 3 stderr)
  double beta = 0.0;
};

// Empirical MSE of the algorithm against the family bound at a constant stepsize.
inline EnvelopeOutcome bound_envelope(const Problem& p, const Vector& x0, std::optional<double> alpha, long horizon,
                                      const std::vector<long>& cps, long runs, std::uint64_t base_seed,
                                      long mixing_horizon, const BoundOptions& opt = {}) {
  auto fit = problem_mixing(p, mixing_horizon);
  FamilyBound fb = problem_bound(p, x0, fit.model(), opt);
  EnvelopeOutcome out;
  out.alpha = alpha ? *alpha : fb.max_stepsize();
  if (!fb.admissible(out.alpha))
    throw StepsizeError("bound_envelope: alpha = " + format_double(out.alpha) +
                        " is above the admissible threshold of the family bound");
  out.start = fb.start(out.alpha);
  out.beta = fb.terms(out.alpha).beta;
  McRuns mr = algorithm_mse(p, StepsizeSchedule::constant(out.alpha), x0, horizon, cps, runs, base_seed);
  out.mse = mr.curve;
  out.bound = fb.curve(out.alpha, cps);
  for (std::size_t i = 0, j = 0; i < cps.size(); ++i) {
    if (cps[i] < out.start) continue;
    while (out.bound.k[j] != cps[i]) ++j;
    double upper = out.mse.mean[i] + 3.0 * out.mse.stderr_[i];
    double margin = out.bound.values[j].total - upper;
    out.min_margin = std::min(out.min_margin, margin);
    if (margin < 0.0) ++out.violations;
  }
  return out;
}

inline void experiment_bound_envelope(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  Problem p = make_problem(e);
  Vector x0 = initial_iterate(p, e.x0);
  std::optional<double> alpha;
  if (e.step_kind == "constant") alpha = e.alpha;
  else if (e.step_kind != "admissible") throw ConfigError("field `stepsize.kind`: bound_envelope needs constant or admissible");
  auto cps = make_checkpoints(e.cp_kind, e.horizon, e.cp_count);
  EnvelopeOutcome o = bound_envelope(p, x0, alpha, e.horizon, cps, e.runs, e.base_seed, e.mixing_horizon);
  r.violations = o.violations;
  out.csv("mse.csv", [&](std::ostream& os) { write_mse_csv(os, o.mse); });
  out.csv("bound.csv", [&](std::ostream& os) { write_bound_csv(os, o.bound); });
  PlotOptions po;
  po.title = std::string("bound envelope, ") + family_name(p.family);
  po.y_label = "squared error";
  po.log_y = e.log_y && *std::min_element(o.mse.mean.begin(), o.mse.mean.end()) > 0.0;
  std::vector<double> bt;
  for (std::size_t i = 0; i < o.bound.k.size(); ++i) bt.push_back(o.bound.values[i].total);
  out.plot("envelope.svg",
           {detail::curve_of("empirical", o.mse.checkpoints, o.mse.mean), detail::curve_of("bound", o.bound.k, bt)}, po);
  r.add("alpha", o.alpha);
  r.add("beta", o.beta);
  r.add("first_valid_k", static_cast<double>(o.start));
  r.add("min_margin", o.min_margin);
  r.add("final_mse", o.mse.mean.back());
}

inline void experiment_optimal_n_scan(const ExperimentConfig& e, detail::OutputDir& out, RunResult& r) {
  std::vector<Curve> curves;
  double worst_ratio_dev = 0.0;
  out.csv("optimal_n.csv", [&](std::ostream& os) {
    os << "gamma,argmin,estimate,ratio,f_argmin\n";
    for (double g : e.gamma_grid) {
      OptimalN o = optimal_n(g);
      double ratio = static_cast<double>(o.estimate) / o.argmin;
      worst_ratio_dev = std::max(worst_ratio_dev, std::abs(std::log2(ratio)));
      os << format_double(g) << ',' << o.argmin << ',' << o.estimate << ',' << format_double(ratio) << ','
         << format_double(o.value) << '\n';
      Curve c;
      char label[32];
      std::snprintf(label, sizeof label, "gamma=%.2f", g);
      c.label = label;
      for (int n = 1; n <= 50; ++n) {
        c.x.push_back(n);
        c.y.push_back(nstep_factor(g, n) / o.value);
      }
      curves.push_back(std::move(c));
    }
  });
  PlotOptions po;
  po.title = "n / (1 - gamma^n)^2, normalised by its minimum";
  po.x_label = "n";
  po.log_y = true;
  out.plot("optimal_n.svg", curves, po);
  r.add("max_abs_log2_ratio", worst_ratio_dev);
}

inline RunResult run_experiment(const ExperimentConfig& e) {
  auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.experiment = e.experiment;
  r.config_hash = e.hash;
  detail::OutputDir out(e.output_dir, r);
  if (e.experiment == "mse_curve") experiment_mse_curve(e, out, r);
  else if (e.experiment == "bias_variance_n") experiment_bias_variance_n(e, out, r);
  else if (e.experiment == "bias_variance_lambda") experiment_bias_variance_lambda(e, out, r);
  else if (e.experiment == "contraction_check") experiment_contraction_check(e, out, r);
  else if (e.experiment == "operator_equivalence") experiment_operator_equivalence(e, out, r);
  else if (e.experiment == "bound_envelope") experiment_bound_envelope(e, out, r);
  else if (e.experiment == "optimal_n_scan") experiment_optimal_n_scan(e, out, r);
  else throw ConfigError("unknown experiment `" + e.experiment + "`");
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace salab
