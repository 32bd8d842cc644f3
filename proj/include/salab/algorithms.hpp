#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "salab/error.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"
#include "salab/operators.hpp"
#include "salab/sa_engine.hpp"

// Trajectory-driven versions of the four algorithms. Each keeps its own small
// buffer of the trajectory and never goes through AsyncOperator; the update
// arithmetic is written in the same order as the operator increments so the
// two paths can be compared bit for bit.

namespace salab {

struct AlgoRunLog {
  std::vector<long> checkpoints;
  std::vector<Vector> iterates;
  std::vector<Vector> traces;  // TD(lambda) only
  std::uint64_t seed = 0;
  StepsizeSchedule schedule;
  double max_residual_ratio = 0.0;  // TD(lambda) with residual tracking
};

inline void write_algo_csv(std::ostream& os, const AlgoRunLog& log) {
  os << "k,coord_index,value\n";
  for (std::size_t c = 0; c < log.checkpoints.size(); ++c)
    for (Eigen::Index i = 0; i < log.iterates[c].size(); ++i)
      os << log.checkpoints[c] << ',' << i << ',' << format_double(log.iterates[c](i)) << '\n';
}

// Called at each checkpoint with (k, x_k).
using Observer = std::function<void(long, const Vector&)>;

struct RunOptions {
  std::optional<int> start_from;  // default: stationary start
};

namespace detail {

inline StartSpec start_for(const Mdp& m, const Policy& p, const RunOptions& o) {
  if (o.start_from) return StartSpec{*o.start_from};
  return StartSpec{stationary_distribution(make_chain(policy_transition(m, p)))};
}

inline void guard(double v, long k) {
  if (!std::isfinite(v) || std::abs(v) > kOverflowLimit)
    throw NumericalError("iterate overflow at iteration " + std::to_string(k + 1));
}

struct CheckpointCursor {
  const std::vector<long>& cps;
  std::size_t next = 0;
  bool hit(long k) {
    if (next < cps.size() && cps[next] == k) {
      ++next;
      return true;
    }
    return false;
  }
};

// Ring of the last m transitions: states s_k..s_{k+m}, actions a_k..a_{k+m-1}.
class Lookahead {
 public:
  Lookahead(TrajectoryStream& stream, int m) : stream_(stream) {
    states_.assign(static_cast<std::size_t>(m + 1), 0);
    actions_.assign(static_cast<std::size_t>(m), 0);
    states_[0] = stream_.state();
    for (int i = 0; i < m; ++i) {
      Step st = stream_.next();
      actions_[static_cast<std::size_t>(i)] = st.action;
      states_[static_cast<std::size_t>(i) + 1] = st.next_state;
    }
  }
  int state(int i) const { return states_[(head_ + static_cast<std::size_t>(i)) % states_.size()]; }
  int action(int i) const { return actions_[(head_ + static_cast<std::size_t>(i)) % actions_.size()]; }
  void advance() {
    Step st = stream_.next();
    // The oldest slot of each ring becomes the newest entry.
    actions_[head_ % actions_.size()] = st.action;
    states_[head_ % states_.size()] = st.next_state;
    ++head_;
  }

 private:
  TrajectoryStream& stream_;
  std::vector<int> states_;
  std::vector<int> actions_;
  std::size_t head_ = 0;
};

}  // namespace detail

// Q(S_k,A_k) += alpha_k Gamma_1, Gamma_1 = R + gamma max_a' Q(S_{k+1},a') - Q(S_k,A_k).
inline void run_q_learning(const Mdp& m, const Policy& behavior, const StepsizeSchedule& schedule, const Vector& q0,
                           long horizon, const std::vector<long>& checkpoints, std::uint64_t seed, const Observer& obs,
                           RunOptions opts = {}) {
  if (q0.size() != m.q_size()) throw DimensionError("run_q_learning: q0 has wrong length");
  require_full_support(behavior);
  validate_checkpoints(checkpoints, horizon);
  TrajectoryStream stream(m, behavior, detail::start_for(m, behavior, opts), seed);
  const int A = m.num_actions();
  const double gamma = m.gamma;
  Vector q = q0;
  detail::CheckpointCursor cur{checkpoints};
  for (long k = 0;; ++k) {
    if (cur.hit(k)) obs(k, q);
    if (k == horizon) break;
    Step st = stream.next();
    double best = q(st.next_state * A);
    for (int a = 1; a < A; ++a) best = std::max(best, q(st.next_state * A + a));
    const int i = st.state * A + st.action;
    const double g1 = m.rewards(st.state, st.action) + gamma * best - q(i);
    q(i) += stepsize_at(schedule, k) * g1;
    detail::guard(q(i), k);
  }
}

inline AlgoRunLog run_q_learning(const Mdp& m, const Policy& behavior, const StepsizeSchedule& schedule,
                                 const Vector& q0, long horizon, const std::vector<long>& checkpoints,
                                 std::uint64_t seed, RunOptions opts = {}) {
  AlgoRunLog log{checkpoints, {}, {}, seed, schedule, 0.0};
  run_q_learning(m, behavior, schedule, q0, horizon, checkpoints, seed,
                 [&](long, const Vector& x) { log.iterates.push_back(x); }, opts);
  return log;
}

// V(S_k) += alpha_k sum_{i<n} gamma^i (prod_{j<i} c_j) rho_i Gamma_2(S_i, A_i, S_{i+1}).
inline void run_vtrace(const Mdp& m, const VTraceParams& p, const StepsizeSchedule& schedule, const Vector& v0,
                       long horizon, const std::vector<long>& checkpoints, std::uint64_t seed, const Observer& obs,
                       RunOptions opts = {}) {
  if (v0.size() != m.num_states()) throw DimensionError("run_vtrace: v0 has wrong length");
  validate_vtrace(m, p);
  validate_checkpoints(checkpoints, horizon);
  TrajectoryStream stream(m, p.behavior, detail::start_for(m, p.behavior, opts), seed);
  detail::Lookahead look(stream, p.n);
  const double gamma = m.gamma;
  Vector v = v0;
  detail::CheckpointCursor cur{checkpoints};
  for (long k = 0;; ++k) {
    if (cur.hit(k)) obs(k, v);
    if (k == horizon) break;
    double coef = 1.0, sum = 0.0;
    for (int i = 0; i < p.n; ++i) {
      const int s = look.state(i), a = look.action(i), s2 = look.state(i + 1);
      const double b = p.behavior(s, a);
      if (!(b > 0.0)) throw AssumptionViolation("run_vtrace: behavior probability is zero at a visited action");
      const double r = p.target(s, a) / b;
      const double rho = std::min(p.rho_bar, r);
      sum += coef * rho * (m.rewards(s, a) + gamma * v(s2) - v(s));
      coef *= gamma * std::min(p.c_bar, r);
    }
    const int s0 = look.state(0);
    v(s0) += stepsize_at(schedule, k) * sum;
    detail::guard(v(s0), k);
    look.advance();
  }
}

inline AlgoRunLog run_vtrace(const Mdp& m, const VTraceParams& p, const StepsizeSchedule& schedule, const Vector& v0,
                             long horizon, const std::vector<long>& checkpoints, std::uint64_t seed,
                             RunOptions opts = {}) {
  AlgoRunLog log{checkpoints, {}, {}, seed, schedule, 0.0};
  run_vtrace(m, p, schedule, v0, horizon, checkpoints, seed, [&](long, const Vector& x) { log.iterates.push_back(x); },
             opts);
  return log;
}

// V(S_k) += alpha_k Gamma_3, Gamma_3 = sum_{i<n} gamma^i R_{k+i} + gamma^n V(S_{k+n}) - V(S_k).
inline void run_nstep_td(const Mdp& m, const Policy& target, int n, const StepsizeSchedule& schedule,
                         const Vector& v0, long horizon, const std::vector<long>& checkpoints, std::uint64_t seed,
                         const Observer& obs, RunOptions opts = {}) {
  if (n < 1) throw Error("run_nstep_td: n must be positive");
  if (v0.size() != m.num_states()) throw DimensionError("run_nstep_td: v0 has wrong length");
  validate_checkpoints(checkpoints, horizon);
  TrajectoryStream stream(m, target, detail::start_for(m, target, opts), seed);
  detail::Lookahead look(stream, n);
  const double gamma = m.gamma;
  Vector v = v0;
  detail::CheckpointCursor cur{checkpoints};
  for (long k = 0;; ++k) {
    if (cur.hit(k)) obs(k, v);
    if (k == horizon) break;
    double coef = 1.0, ret = 0.0;
    for (int i = 0; i < n; ++i) {
      ret += coef * m.rewards(look.state(i), look.action(i));
      coef *= gamma;
    }
    const int s0 = look.state(0);
    const double g3 = ret + coef * v(look.state(n)) - v(s0);
    v(s0) += stepsize_at(schedule, k) * g3;
    detail::guard(v(s0), k);
    look.advance();
  }
}

inline AlgoRunLog run_nstep_td(const Mdp& m, const Policy& target, int n, const StepsizeSchedule& schedule,
                               const Vector& v0, long horizon, const std::vector<long>& checkpoints,
                               std::uint64_t seed, RunOptions opts = {}) {
  AlgoRunLog log{checkpoints, {}, {}, seed, schedule, 0.0};
  run_nstep_td(m, target, n, schedule, v0, horizon, checkpoints, seed,
               [&](long, const Vector& x) { log.iterates.push_back(x); }, opts);
  return log;
}

struct TdLambdaOptions {
  RunOptions run;
  // Track the gap between the full-trace step and the step of the trace cut
  // after tau terms, as a ratio to alpha (gamma lambda)^{tau+1}/(1-gamma lambda) (1 + 2|V|_2).
  std::optional<int> residual_tau;
  bool record_traces = false;
};

// z_k = gamma lambda z_{k-1} + e_{S_k}, z_{-1} = 0;  V += alpha z_k Gamma_4.
inline AlgoRunLog run_td_lambda(const Mdp& m, const Policy& target, double lambda, double alpha, const Vector& v0,
                                long horizon, const std::vector<long>& checkpoints, std::uint64_t seed,
                                const Observer& obs = nullptr, TdLambdaOptions opts = {}) {
  if (!(lambda >= 0.0)) throw Error("run_td_lambda: lambda must be nonnegative");
  if (lambda >= 1.0) throw Error("run_td_lambda: lambda must lie in [0,1); lambda = 1 is outside the analysed range");
  if (v0.size() != m.num_states()) throw DimensionError("run_td_lambda: v0 has wrong length");
  validate_checkpoints(checkpoints, horizon);
  TrajectoryStream stream(m, target, detail::start_for(m, target, opts.run), seed);
  const double gamma = m.gamma;
  const double gl = gamma * lambda;
  const int S = m.num_states();
  Vector v = v0, z = Vector::Zero(S);
  AlgoRunLog log{checkpoints, {}, {}, seed, StepsizeSchedule::constant(alpha), 0.0};
  detail::CheckpointCursor cur{checkpoints};

  const int tau = opts.residual_tau.value_or(-1);
  std::vector<int> recent;  // last tau+1 states, oldest first
  Vector zt(S);
  double bound_factor = tau >= 0 ? std::pow(gl, tau + 1) / (1.0 - gl) : 0.0;

  for (long k = 0;; ++k) {
    if (cur.hit(k)) {
      if (obs) obs(k, v);
      else log.iterates.push_back(v);
      if (opts.record_traces) log.traces.push_back(z);
    }
    if (k == horizon) break;
    Step st = stream.next();
    z *= gl;
    z(st.state) += 1.0;
    const double g4 = m.rewards(st.state, st.action) + gamma * v(st.next_state) - v(st.state);
    if (tau >= 0) {
      recent.push_back(st.state);
      if (static_cast<int>(recent.size()) > tau + 1) recent.erase(recent.begin());
      zt.setZero();
      double w = 1.0;
      for (int i = static_cast<int>(recent.size()) - 1; i >= 0; --i) {
        zt(recent[static_cast<std::size_t>(i)]) += w;
        w *= gl;
      }
      double resid = std::abs(alpha * g4) * (z - zt).norm();
      double bound = alpha * bound_factor * (1.0 + 2.0 * v.norm());
      if (bound > 0.0) log.max_residual_ratio = std::max(log.max_residual_ratio, resid / bound);
      else if (resid > 0.0) log.max_residual_ratio = std::numeric_limits<double>::infinity();
    }
    v += (alpha * g4) * z;
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > kOverflowLimit)
      throw NumericalError("run_td_lambda: iterate overflow at iteration " + std::to_string(k + 1));
  }
  return log;
}

// TD(lambda) with the trace cut after tau terms. Updates start once tau+1
// transitions have been seen, so update k uses states S_k..S_{k+tau+1}; this
// is the SA recursion of the truncated operator driven by the same trajectory.
inline AlgoRunLog run_td_lambda_truncated(const Mdp& m, const Policy& target, double lambda, int tau,
                                          const StepsizeSchedule& schedule, const Vector& v0, long horizon,
                                          const std::vector<long>& checkpoints, std::uint64_t seed,
                                          RunOptions opts = {}) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw Error("run_td_lambda_truncated: lambda must lie in [0,1)");
  if (tau < 0) throw Error("run_td_lambda_truncated: tau must be nonnegative");
  validate_checkpoints(checkpoints, horizon);
  TrajectoryStream stream(m, target, detail::start_for(m, target, opts), seed);
  detail::Lookahead look(stream, tau + 1);
  const double gamma = m.gamma, gl = gamma * lambda;
  Vector v = v0, d(v0.size());
  AlgoRunLog log{checkpoints, {}, {}, seed, schedule, 0.0};
  detail::CheckpointCursor cur{checkpoints};
  for (long k = 0;; ++k) {
    if (cur.hit(k)) log.iterates.push_back(v);
    if (k == horizon) break;
    const int s = look.state(tau), a = look.action(tau), s2 = look.state(tau + 1);
    const double g4 = m.rewards(s, a) + gamma * v(s2) - v(s);
    d.setZero();
    double w = 1.0;
    for (int i = tau; i >= 0; --i) {
      d(look.state(i)) += w * g4;
      w *= gl;
    }
    v += stepsize_at(schedule, k) * d;
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > kOverflowLimit)
      throw NumericalError("run_td_lambda_truncated: iterate overflow at iteration " + std::to_string(k + 1));
    look.advance();
  }
  return log;
}

// Closed-form trace sum_{i<=k} (gamma lambda)^{k-i} e_{S_i}.
inline Vector trace_closed_form(const std::vector<int>& states, int S, double gl) {
  Vector z = Vector::Zero(S);
  const int k = static_cast<int>(states.size()) - 1;
  for (int i = 0; i <= k; ++i) z(states[static_cast<std::size_t>(i)]) += std::pow(gl, k - i);
  return z;
}

}  // namespace salab
