#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "salab/error.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"
#include "salab/parallel.hpp"
#include "salab/rng.hpp"

namespace salab {

enum class Family { q_learning, v_trace, nstep_td, td_lambda };
enum class NormKind { l1, l2, linf };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::q_learning: return "q_learning";
    case Family::v_trace: return "v_trace";
    case Family::nstep_td: return "nstep_td";
    case Family::td_lambda: return "td_lambda";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "q_learning") return Family::q_learning;
  if (s == "v_trace") return Family::v_trace;
  if (s == "nstep_td") return Family::nstep_td;
  if (s == "td_lambda") return Family::td_lambda;
  throw Error("unknown algorithm family '" + s + "' (expected q_learning, v_trace, nstep_td or td_lambda)");
}

inline double norm(const Vector& v, NormKind k) {
  switch (k) {
    case NormKind::l1: return v.cwiseAbs().sum();
    case NormKind::l2: return v.norm();
    case NormKind::linf: return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
  }
  return 0.0;
}

// Operator norm induced by l1 (max column sum) and linf (max row sum).
inline double induced_norm_1(const Matrix& G) { return G.cwiseAbs().colwise().sum().maxCoeff(); }
inline double induced_norm_inf(const Matrix& G) { return G.cwiseAbs().rowwise().sum().maxCoeff(); }

// x -> F(x, y) for a lifted noise state y, plus everything known in closed form.
class AsyncOperator {
 public:
  virtual ~AsyncOperator() = default;

  virtual Family family() const = 0;
  virtual int dimension() const = 0;
  virtual NormKind contraction_norm() const = 0;
  virtual double beta() const = 0;
  virtual const Vector& fixed_point() const = 0;
  virtual Vector expected(const Vector& x) const = 0;
  virtual double lipschitz() const = 0;
  virtual double bound_at_zero() const = 0;

  // out = F(x, y) - x. out must already have the right size; untouched
  // coordinates are set to exactly zero.
  virtual void increment(const Vector& x, const Window& y, Vector& out) const = 0;

  // Shape of the noise state: number of transitions and whether only the
  // last action is recorded.
  virtual int window_transitions() const = 0;
  virtual bool last_action_only() const { return false; }
  virtual const Mdp& mdp() const = 0;
  virtual const Policy& sampling_policy() const = 0;

  Vector apply(const Vector& x, const Window& y) const {
    Vector d(x.size());
    increment(x, y, d);
    return x + d;
  }
};

namespace detail {

inline void check_window(const Window& y, int transitions, bool last_only, const Mdp& m) {
  if (static_cast<int>(y.states.size()) != transitions + 1)
    throw DimensionError("window has " + std::to_string(y.states.size()) + " states, expected " +
                         std::to_string(transitions + 1));
  std::size_t na = last_only ? 1 : static_cast<std::size_t>(transitions);
  if (y.actions.size() != na) throw DimensionError("window has the wrong number of actions");
  for (int s : y.states)
    if (s < 0 || s >= m.num_states()) throw DimensionError("window state out of range");
  for (int a : y.actions)
    if (a < 0 || a >= m.num_actions()) throw DimensionError("window action out of range");
}

inline Vector stationary_of(const Mdp& m, const Policy& p) { return stationary_distribution(make_chain(policy_transition(m, p))); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Q-learning

inline Vector q_occupancy(const Mdp& m, const Policy& behavior) {
  Vector kappa = detail::stationary_of(m, behavior);
  const int A = m.num_actions();
  Vector N(m.q_size());
  for (int s = 0; s < m.num_states(); ++s)
    for (int a = 0; a < A; ++a) N(s * A + a) = kappa(s) * behavior(s, a);
  return N;
}

inline Vector q_apply(const Vector& q, const Window& y, const Mdp& m) {
  detail::check_window(y, 1, false, m);
  if (q.size() != m.q_size()) throw DimensionError("q_apply: q has wrong length");
  const int A = m.num_actions();
  int s0 = y.states[0], a0 = y.actions[0], s1 = y.states[1];
  Vector out = q;
  double target = m.rewards(s0, a0) + m.gamma * q.segment(s1 * A, A).maxCoeff();
  out(s0 * A + a0) = q(s0 * A + a0) + (target - q(s0 * A + a0));
  return out;
}

inline Vector q_expected(const Vector& q, const Mdp& m, const Policy& behavior) {
  Vector N = q_occupancy(m, behavior);
  Vector h = bellman_optimality(q, m);
  return N.cwiseProduct(h) + (Vector::Ones(N.size()) - N).cwiseProduct(q);
}

inline double q_beta(const Mdp& m, const Policy& behavior) {
  return 1.0 - q_occupancy(m, behavior).minCoeff() * (1.0 - m.gamma);
}

class QLearningOperator : public AsyncOperator {
 public:
  QLearningOperator(Mdp m, Policy behavior) : mdp_(std::move(m)), behavior_(std::move(behavior)) {
    validate_mdp(mdp_);
    validate_policy(behavior_);
    check_policy_dims(mdp_, behavior_);
    require_full_support(behavior_);
    N_ = q_occupancy(mdp_, behavior_);
    beta_ = 1.0 - N_.minCoeff() * (1.0 - mdp_.gamma);
    fixed_ = solve_optimal_q(mdp_).q;
  }

  Family family() const override { return Family::q_learning; }
  int dimension() const override { return mdp_.q_size(); }
  NormKind contraction_norm() const override { return NormKind::linf; }
  double beta() const override { return beta_; }
  const Vector& fixed_point() const override { return fixed_; }
  Vector expected(const Vector& x) const override {
    return N_.cwiseProduct(bellman_optimality(x, mdp_)) + (Vector::Ones(N_.size()) - N_).cwiseProduct(x);
  }
  double lipschitz() const override { return 2.0; }
  double bound_at_zero() const override { return 1.0; }
  int window_transitions() const override { return 1; }
  const Mdp& mdp() const override { return mdp_; }
  const Policy& sampling_policy() const override { return behavior_; }
  const Vector& occupancy() const { return N_; }

  void increment(const Vector& x, const Window& y, Vector& out) const override {
    const int A = mdp_.num_actions();
    const int s0 = y.states[0], a0 = y.actions[0], s1 = y.states[1];
    out.setZero();
    double best = x(s1 * A);
    for (int a = 1; a < A; ++a) best = std::max(best, x(s1 * A + a));
    out(s0 * A + a0) = mdp_.rewards(s0, a0) + mdp_.gamma * best - x(s0 * A + a0);
  }

 private:
  Mdp mdp_;
  Policy behavior_;
  Vector N_;
  double beta_;
  Vector fixed_;
};

// ---------------------------------------------------------------------------
// V-trace

struct VTraceParams {
  int n = 1;
  double c_bar = 1.0;
  double rho_bar = 1.0;
  Policy target;
  Policy behavior;
};

inline double vtrace_eta(double gamma, double c_bar, int n) {
  double g = gamma * c_bar;
  if (g == 1.0) return n;
  return (1.0 - std::pow(g, n)) / (1.0 - g);
}

inline void validate_vtrace(const Mdp& m, const VTraceParams& p) {
  if (p.n < 1) throw Error("v-trace: n must be positive");
  if (!(p.c_bar >= 1.0)) throw Error("v-trace: c_bar must be at least 1");
  if (!(p.rho_bar >= p.c_bar)) throw Error("v-trace: rho_bar must be at least c_bar");
  validate_policy(p.target);
  validate_policy(p.behavior);
  check_policy_dims(m, p.target);
  check_policy_dims(m, p.behavior);
  for (int s = 0; s < m.num_states(); ++s)
    for (int a = 0; a < m.num_actions(); ++a)
      if (p.target(s, a) > 0.0 && !(p.behavior(s, a) > 0.0))
        throw AssumptionViolation("target policy uses action " + std::to_string(a) + " in state " + std::to_string(s) +
                                  " where the behavior policy does not: the coverage assumption fails");
  // The behavior chain must be ergodic.
  check_ergodic(make_chain(policy_transition(m, p.behavior)));
}

// min(cap * pi_b, pi) summed into per-action weights.
inline Matrix truncated_weights(const VTraceParams& p, double cap) { return (cap * p.behavior.probs).cwiseMin(p.target.probs); }

// pi_rho: the policy whose value V-trace converges to.
inline Policy vtrace_target_policy(const VTraceParams& p) {
  Matrix w = truncated_weights(p, p.rho_bar);
  Vector D = w.rowwise().sum();
  return Policy{D.cwiseInverse().asDiagonal() * w};
}

struct VTraceMatrices {
  Matrix G;
  Vector b;
  double C_min;
  double D_min;
  double K_min;
};

inline VTraceMatrices vtrace_matrices(const Mdp& m, const VTraceParams& p) {
  const int S = m.num_states();
  Vector kappa = detail::stationary_of(m, p.behavior);
  Matrix wc = truncated_weights(p, p.c_bar);
  Matrix wr = truncated_weights(p, p.rho_bar);
  Matrix CPc = Matrix::Zero(S, S), DPr = Matrix::Zero(S, S);
  for (int a = 0; a < m.num_actions(); ++a) {
    CPc += wc.col(a).asDiagonal() * m.P(a);
    DPr += wr.col(a).asDiagonal() * m.P(a);
  }
  Vector C = wc.rowwise().sum();
  Vector D = wr.rowwise().sum();
  Vector DR = m.rewards.cwiseProduct(wr).rowwise().sum();
  Matrix sum = Matrix::Zero(S, S), pw = Matrix::Identity(S, S);
  for (int i = 0; i < p.n; ++i) {
    sum += pw;
    pw = pw * (m.gamma * CPc);
  }
  Matrix M = kappa.asDiagonal() * sum;
  VTraceMatrices out;
  out.G = Matrix::Identity(S, S) + M * (m.gamma * DPr - Matrix(D.asDiagonal()));
  out.b = M * DR;
  out.C_min = C.minCoeff();
  out.D_min = D.minCoeff();
  out.K_min = kappa.minCoeff();
  return out;
}

inline Vector vtrace_expected(const Vector& v, const Mdp& m, const VTraceParams& p) {
  if (v.size() != m.num_states()) throw DimensionError("vtrace_expected: v has wrong length");
  auto mats = vtrace_matrices(m, p);
  return mats.G * v + mats.b;
}

inline double vtrace_beta_formula(double K_min, double gamma, int n, double C_min, double D_min) {
  double gc = gamma * C_min;
  double geo = (gc == 1.0) ? n : (1.0 - std::pow(gc, n)) / (1.0 - gc);
  return 1.0 - K_min * (1.0 - gamma) * geo * D_min;
}

inline double vtrace_beta(const Mdp& m, const VTraceParams& p) {
  validate_vtrace(m, p);
  auto mats = vtrace_matrices(m, p);
  return vtrace_beta_formula(mats.K_min, m.gamma, p.n, mats.C_min, mats.D_min);
}

inline Vector vtrace_fixed_point(const Mdp& m, const VTraceParams& p) {
  validate_vtrace(m, p);
  return solve_value_function(m, vtrace_target_policy(p));
}

namespace detail {

inline double ratio(const VTraceParams& p, int s, int a) {
  double b = p.behavior(s, a);
  if (!(b > 0.0))
    throw AssumptionViolation("v-trace: behavior probability is zero at a visited action (state " + std::to_string(s) +
                              ", action " + std::to_string(a) + ")");
  return p.target(s, a) / b;
}

}  // namespace detail

// Increment at s_0 of the V-trace update. The accumulation order is shared
// with the trajectory implementation so the two agree bit for bit.
inline double vtrace_increment(const Vector& v, const Window& y, const Mdp& m, const VTraceParams& p) {
  double coef = 1.0, sum = 0.0;
  for (int i = 0; i < p.n; ++i) {
    int s = y.states[static_cast<std::size_t>(i)], a = y.actions[static_cast<std::size_t>(i)];
    int s2 = y.states[static_cast<std::size_t>(i) + 1];
    double r = detail::ratio(p, s, a);
    double rho = std::min(p.rho_bar, r);
    double gamma2 = m.rewards(s, a) + m.gamma * v(s2) - v(s);
    sum += coef * rho * gamma2;
    coef *= m.gamma * std::min(p.c_bar, r);
  }
  return sum;
}

inline Vector vtrace_apply(const Vector& v, const Window& y, const Mdp& m, const VTraceParams& p) {
  detail::check_window(y, p.n, false, m);
  if (v.size() != m.num_states()) throw DimensionError("vtrace_apply: v has wrong length");
  Vector out = v;
  out(y.states[0]) = v(y.states[0]) + vtrace_increment(v, y, m, p);
  return out;
}

class VTraceOperator : public AsyncOperator {
 public:
  VTraceOperator(Mdp m, VTraceParams p) : mdp_(std::move(m)), p_(std::move(p)) {
    validate_mdp(mdp_);
    validate_vtrace(mdp_, p_);
    mats_ = vtrace_matrices(mdp_, p_);
    beta_ = vtrace_beta_formula(mats_.K_min, mdp_.gamma, p_.n, mats_.C_min, mats_.D_min);
    fixed_ = solve_value_function(mdp_, vtrace_target_policy(p_));
  }

  Family family() const override { return Family::v_trace; }
  int dimension() const override { return mdp_.num_states(); }
  NormKind contraction_norm() const override { return NormKind::linf; }
  double beta() const override { return beta_; }
  const Vector& fixed_point() const override { return fixed_; }
  Vector expected(const Vector& x) const override { return mats_.G * x + mats_.b; }
  double lipschitz() const override { return (2.0 * p_.rho_bar + 1.0) * vtrace_eta(mdp_.gamma, p_.c_bar, p_.n); }
  double bound_at_zero() const override { return p_.rho_bar * vtrace_eta(mdp_.gamma, p_.c_bar, p_.n); }
  int window_transitions() const override { return p_.n; }
  const Mdp& mdp() const override { return mdp_; }
  const Policy& sampling_policy() const override { return p_.behavior; }
  const VTraceParams& params() const { return p_; }
  const VTraceMatrices& matrices() const { return mats_; }

  void increment(const Vector& x, const Window& y, Vector& out) const override {
    out.setZero();
    out(y.states[0]) = vtrace_increment(x, y, mdp_, p_);
  }

 private:
  Mdp mdp_;
  VTraceParams p_;
  VTraceMatrices mats_;
  double beta_;
  Vector fixed_;
};

// ---------------------------------------------------------------------------
// n-step TD

// G and b with F(V) = G V + b, where G = I - K sum_{i<terms} (rate P)^i (I - gamma P).
struct AffineOperator {
  Matrix G;
  Vector b;
  double K_min;
};

inline AffineOperator discounted_trace_operator(const Mdp& m, const Policy& target, double rate, int terms) {
  check_policy_dims(m, target);
  const int S = m.num_states();
  Matrix P = policy_transition(m, target);
  Vector R = policy_reward(m, target);
  Vector kappa = stationary_distribution(make_chain(P));
  Matrix sum = Matrix::Zero(S, S), pw = Matrix::Identity(S, S);
  for (int i = 0; i < terms; ++i) {
    sum += pw;
    pw = pw * (rate * P);
  }
  Matrix M = kappa.asDiagonal() * sum;
  AffineOperator out;
  out.G = Matrix::Identity(S, S) - M * (Matrix::Identity(S, S) - m.gamma * P);
  out.b = M * R;
  out.K_min = kappa.minCoeff();
  return out;
}

inline Vector nstep_expected(const Vector& v, const Mdp& m, const Policy& target, int n) {
  if (n < 1) throw Error("nstep_expected: n must be positive");
  if (v.size() != m.num_states()) throw DimensionError("nstep_expected: v has wrong length");
  auto op = discounted_trace_operator(m, target, m.gamma, n);
  return op.G * v + op.b;
}

inline double nstep_beta_formula(double K_min, double gamma, int n) { return 1.0 - K_min * (1.0 - std::pow(gamma, n)); }

struct NStepBeta {
  double beta;
  Matrix G;
  double norm_1;
  double norm_inf;
};

inline NStepBeta nstep_beta(const Mdp& m, const Policy& target, int n) {
  if (n < 1) throw Error("nstep_beta: n must be positive");
  auto op = discounted_trace_operator(m, target, m.gamma, n);
  NStepBeta out{nstep_beta_formula(op.K_min, m.gamma, n), op.G, induced_norm_1(op.G), induced_norm_inf(op.G)};
  if (std::abs(out.norm_1 - out.beta) > 1e-12 || std::abs(out.norm_inf - out.beta) > 1e-12)
    throw NumericalError("nstep_beta: induced norms of G differ from beta by more than 1e-12");
  return out;
}

// Gamma_3 = sum_{i<n} gamma^i R(s_i, a_i) + gamma^n V(s_n) - V(s_0).
inline double nstep_increment(const Vector& v, const Window& y, const Mdp& m, int n) {
  double coef = 1.0, ret = 0.0;
  for (int i = 0; i < n; ++i) {
    ret += coef * m.rewards(y.states[static_cast<std::size_t>(i)], y.actions[static_cast<std::size_t>(i)]);
    coef *= m.gamma;
  }
  return ret + coef * v(y.states[static_cast<std::size_t>(n)]) - v(y.states[0]);
}

class NStepOperator : public AsyncOperator {
 public:
  NStepOperator(Mdp m, Policy target, int n) : mdp_(std::move(m)), target_(std::move(target)), n_(n) {
    validate_mdp(mdp_);
    validate_policy(target_);
    if (n_ < 1) throw Error("n-step TD: n must be positive");
    aff_ = discounted_trace_operator(mdp_, target_, mdp_.gamma, n_);
    beta_ = nstep_beta_formula(aff_.K_min, mdp_.gamma, n_);
    fixed_ = solve_value_function(mdp_, target_);
  }

  Family family() const override { return Family::nstep_td; }
  int dimension() const override { return mdp_.num_states(); }
  NormKind contraction_norm() const override { return NormKind::l2; }
  double beta() const override { return beta_; }
  const Vector& fixed_point() const override { return fixed_; }
  Vector expected(const Vector& x) const override { return aff_.G * x + aff_.b; }
  double lipschitz() const override { return 3.0; }
  double bound_at_zero() const override { return 1.0 / (1.0 - mdp_.gamma); }
  int window_transitions() const override { return n_; }
  const Mdp& mdp() const override { return mdp_; }
  const Policy& sampling_policy() const override { return target_; }
  const Matrix& G() const { return aff_.G; }
  int n() const { return n_; }

  void increment(const Vector& x, const Window& y, Vector& out) const override {
    out.setZero();
    out(y.states[0]) = nstep_increment(x, y, mdp_, n_);
  }

 private:
  Mdp mdp_;
  Policy target_;
  int n_;
  AffineOperator aff_;
  double beta_;
  Vector fixed_;
};

// ---------------------------------------------------------------------------
// Norm interpolation for nonnegative matrices: |G|_p <= |G|_1^{1/p} |G|_inf^{1-1/p}.

struct InterpolationCheck {
  double estimate;  // lower estimate of |G|_p
  double norm_1;
  double norm_inf;
  double bound;
  bool holds;
};

inline double vector_p_norm(const Vector& x, double p) {
  if (std::isinf(p)) return x.cwiseAbs().maxCoeff();
  return std::pow(x.cwiseAbs().array().pow(p).sum(), 1.0 / p);
}

inline InterpolationCheck matrix_norm_interpolation_check(Matrix G, double p, std::uint64_t seed = 1,
                                                          int directions = 10000) {
  if (!(p >= 1.0)) throw Error("matrix_norm_interpolation_check: p must be at least 1");
  if (G.minCoeff() < -1e-14) throw Error("matrix_norm_interpolation_check: matrix has negative entries");
  G = G.cwiseMax(0.0);
  Rng rng(seed);
  const Eigen::Index n = G.cols();
  double best = 0.0;
  Vector x(n);
  for (int t = 0; t < directions; ++t) {
    // Half of the directions are nonnegative, where the maximiser of a
    // nonnegative matrix lives.
    for (Eigen::Index i = 0; i < n; ++i) x(i) = (t % 2 == 0) ? std::abs(rng.normal()) : rng.normal();
    double nx = vector_p_norm(x, p);
    if (nx > 0.0) best = std::max(best, vector_p_norm(G * x, p) / nx);
  }
  for (Eigen::Index j = 0; j < n; ++j) best = std::max(best, vector_p_norm(G.col(j), p));
  if (p == 2.0) {
    Vector v = Vector::Ones(n).normalized();
    for (int it = 0; it < 1000; ++it) {
      Vector w = G.transpose() * (G * v);
      double nw = w.norm();
      if (nw == 0.0) break;
      v = w / nw;
    }
    best = std::max(best, (G * v).norm());
  }
  InterpolationCheck out;
  out.estimate = best;
  out.norm_1 = induced_norm_1(G);
  out.norm_inf = induced_norm_inf(G);
  out.bound = std::pow(out.norm_1, 1.0 / p) * std::pow(out.norm_inf, 1.0 - 1.0 / p);
  out.holds = out.estimate <= out.bound * (1.0 + 1e-12);
  return out;
}

// ---------------------------------------------------------------------------
// TD(lambda) with a truncated trace

inline int tdlambda_truncation_level(double gamma, double lambda, double alpha) {
  double gl = gamma * lambda;
  if (!(gl > 0.0 && gl < 1.0)) throw Error("tdlambda_truncation_level: gamma*lambda must lie in (0,1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("tdlambda_truncation_level: alpha must lie in (0,1)");
  int k = 0;
  double pw = gl;  // (gamma lambda)^{k+1}
  while (pw > alpha) {
    pw *= gl;
    ++k;
  }
  return k;
}

struct TdLambdaParams {
  double lambda = 0.5;
  int tau = 0;
  double alpha = 0.1;  // stepsize that induced tau (informational)

  static TdLambdaParams from_stepsize(double gamma, double lambda, double alpha) {
    return TdLambdaParams{lambda, tdlambda_truncation_level(gamma, lambda, alpha), alpha};
  }
};

inline Vector tdlambda_expected(const Vector& v, const Mdp& m, const Policy& target, double lambda, int tau) {
  if (tau < 0) throw Error("tdlambda_expected: tau must be nonnegative");
  if (v.size() != m.num_states()) throw DimensionError("tdlambda_expected: v has wrong length");
  auto op = discounted_trace_operator(m, target, m.gamma * lambda, tau + 1);
  return op.G * v + op.b;
}

inline double tdlambda_beta_formula(double K_min, double gamma, double lambda, int tau) {
  double gl = gamma * lambda;
  return 1.0 - K_min * (1.0 - gamma) * (1.0 - std::pow(gl, tau + 1)) / (1.0 - gl);
}

inline double tdlambda_beta(const Mdp& m, const Policy& target, double lambda, int tau) {
  Vector kappa = detail::stationary_of(m, target);
  return tdlambda_beta_formula(kappa.minCoeff(), m.gamma, lambda, tau);
}

// Adds Gamma_4 (gamma lambda)^{tau-i} at each s_i, i = 0..tau, into out.
// Window: s_0..s_{tau+1} and the action taken at s_tau.
inline void tdlambda_truncated_increment(const Vector& v, const Window& y, const Mdp& m, double lambda, Vector& out) {
  const int tau = static_cast<int>(y.states.size()) - 2;
  const int s = y.states[static_cast<std::size_t>(tau)];
  const int a = y.actions.back();
  const int s2 = y.states[static_cast<std::size_t>(tau) + 1];
  const double g4 = m.rewards(s, a) + m.gamma * v(s2) - v(s);
  const double gl = m.gamma * lambda;
  out.setZero();
  double w = 1.0;
  for (int i = tau; i >= 0; --i) {
    out(y.states[static_cast<std::size_t>(i)]) += w * g4;
    w *= gl;
  }
}

inline Vector tdlambda_truncated_apply(const Vector& v, const Window& y, const Mdp& m, double lambda, int tau) {
  detail::check_window(y, tau + 1, true, m);
  if (v.size() != m.num_states()) throw DimensionError("tdlambda_truncated_apply: v has wrong length");
  Vector d(v.size());
  tdlambda_truncated_increment(v, y, m, lambda, d);
  return v + d;
}

class TdLambdaOperator : public AsyncOperator {
 public:
  TdLambdaOperator(Mdp m, Policy target, TdLambdaParams p) : mdp_(std::move(m)), target_(std::move(target)), p_(p) {
    validate_mdp(mdp_);
    validate_policy(target_);
    if (!(p_.lambda >= 0.0 && p_.lambda < 1.0)) throw Error("td(lambda): lambda must lie in [0,1)");
    if (p_.tau < 0) throw Error("td(lambda): tau must be nonnegative");
    aff_ = discounted_trace_operator(mdp_, target_, mdp_.gamma * p_.lambda, p_.tau + 1);
    beta_ = tdlambda_beta_formula(aff_.K_min, mdp_.gamma, p_.lambda, p_.tau);
    fixed_ = solve_value_function(mdp_, target_);
  }

  Family family() const override { return Family::td_lambda; }
  int dimension() const override { return mdp_.num_states(); }
  NormKind contraction_norm() const override { return NormKind::l2; }
  double beta() const override { return beta_; }
  const Vector& fixed_point() const override { return fixed_; }
  Vector expected(const Vector& x) const override { return aff_.G * x + aff_.b; }
  double lipschitz() const override { return 3.0 / (1.0 - mdp_.gamma * p_.lambda); }
  double bound_at_zero() const override { return 1.0 / (1.0 - mdp_.gamma * p_.lambda); }
  int window_transitions() const override { return p_.tau + 1; }
  bool last_action_only() const override { return true; }
  const Mdp& mdp() const override { return mdp_; }
  const Policy& sampling_policy() const override { return target_; }
  const TdLambdaParams& params() const { return p_; }
  const Matrix& G() const { return aff_.G; }

  void increment(const Vector& x, const Window& y, Vector& out) const override {
    tdlambda_truncated_increment(x, y, mdp_, p_.lambda, out);
  }

 private:
  Mdp mdp_;
  Policy target_;
  TdLambdaParams p_;
  AffineOperator aff_;
  double beta_;
  Vector fixed_;
};

struct TruncationError {
  double actual;
  double bound;
};

// Compares the full-trace update at time k with the truncated one. `history`
// holds s_0..s_{k+1} and (at least) the action a_k as its last action;
// `truncated` must be the last min(tau, k)+2 states of it with the same action.
inline TruncationError tdlambda_truncation_error(const Vector& v, const Window& history, const Window& truncated,
                                                 const Mdp& m, double lambda, int tau) {
  const int k = static_cast<int>(history.states.size()) - 2;
  if (k < 0 || history.actions.empty()) throw DimensionError("tdlambda_truncation_error: history too short");
  const int keep = std::min(tau, k) + 2;
  if (static_cast<int>(truncated.states.size()) != keep || truncated.actions.empty() ||
      truncated.actions.back() != history.actions.back())
    throw Error("tdlambda_truncation_error: truncated window is not a suffix of the history");
  for (int i = 0; i < keep; ++i)
    if (truncated.states[static_cast<std::size_t>(i)] != history.states[static_cast<std::size_t>(k + 2 - keep + i)])
      throw Error("tdlambda_truncation_error: truncated window is not a suffix of the history");
  const double gl = m.gamma * lambda;
  const int s = history.states[static_cast<std::size_t>(k)];
  const int a = history.actions.back();
  const double g4 = m.rewards(s, a) + m.gamma * v(history.states[static_cast<std::size_t>(k) + 1]) - v(s);
  Vector diff = Vector::Zero(v.size());
  for (int i = 0; i < k - tau; ++i) diff(history.states[static_cast<std::size_t>(i)]) += std::pow(gl, k - i) * g4;
  TruncationError out;
  out.actual = diff.norm();
  out.bound = std::pow(gl, tau + 1) / (1.0 - gl) * (1.0 + 2.0 * v.norm());
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle for the expected operator

struct EmpiricalEstimate {
  Vector mean;
  Vector stderr_;
  long samples;
};

inline EmpiricalEstimate empirical_expected(const AsyncOperator& op, const Vector& x, long num_samples,
                                            std::uint64_t seed) {
  if (num_samples <= 0) throw Error("empirical_expected: num_samples must be positive");
  if (x.size() != op.dimension()) throw DimensionError("empirical_expected: x has wrong length");
  WindowLaw law = enumerate_windows(op.mdp(), op.sampling_policy(), op.window_transitions(), op.last_action_only());
  DiscreteSampler draw(law.probs);
  const long chunk = 1 << 16;
  const std::size_t chunks = static_cast<std::size_t>((num_samples + chunk - 1) / chunk);
  const Eigen::Index d = x.size();
  std::vector<Vector> sums(chunks, Vector::Zero(d)), sq(chunks, Vector::Zero(d));
  parallel_for(chunks, [&](std::size_t c) {
    Rng rng(child_seed(seed, "oracle", c));
    long lo = static_cast<long>(c) * chunk, hi = std::min(num_samples, lo + chunk);
    Vector inc(d);
    for (long i = lo; i < hi; ++i) {
      op.increment(x, law.windows[static_cast<std::size_t>(draw(rng))], inc);
      sums[c] += inc;
      sq[c] += inc.cwiseProduct(inc);
    }
  });
  Vector s = Vector::Zero(d), q = Vector::Zero(d);
  for (std::size_t c = 0; c < chunks; ++c) {
    s += sums[c];
    q += sq[c];
  }
  const double N = static_cast<double>(num_samples);
  Vector mean_inc = s / N;
  EmpiricalEstimate out;
  out.mean = x + mean_inc;
  out.samples = num_samples;
  if (num_samples > 1) {
    Vector var = ((q / N) - mean_inc.cwiseProduct(mean_inc)).cwiseMax(0.0) * (N / (N - 1.0));
    out.stderr_ = (var / N).cwiseSqrt();
  } else {
    out.stderr_ = Vector::Zero(d);
  }
  return out;
}

// Largest ||F(x1) - F(x2)|| / ||x1 - x2|| over random pairs, in the given norm.
inline double contraction_ratio(const std::function<Vector(const Vector&)>& F, int dim, NormKind k, int pairs,
                                std::uint64_t seed, double scale = 10.0) {
  Rng rng(seed);
  double worst = 0.0;
  Vector a(dim), b(dim);
  for (int t = 0; t < pairs; ++t) {
    for (int i = 0; i < dim; ++i) {
      a(i) = rng.uniform(-scale, scale);
      b(i) = rng.uniform(-scale, scale);
    }
    double den = norm(a - b, k);
    if (den > 0.0) worst = std::max(worst, norm(F(a) - F(b), k) / den);
  }
  return worst;
}

}  // namespace salab
