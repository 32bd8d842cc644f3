#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "salab/error.hpp"
#include "salab/lyapunov.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"
#include "salab/operators.hpp"
#include "salab/sa_engine.hpp"

namespace salab {

struct BoundValue {
  double bias = 0.0;
  double variance = 0.0;
  double total = 0.0;
};

inline BoundValue make_bound(double bias, double variance) { return BoundValue{bias, variance, bias + variance}; }

// Constants of the generic SA bound. c1 = (|x0 - x*| + |x0| + B/A)^2 and
// c2 = (A |x*| + B)^2, both in the contraction norm.
struct BoundInputs {
  double phi1 = 1.0;
  double phi2 = 0.5;
  double phi3 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double A = 1.0;
  double B = 0.0;
  MixingModel mixing;

  static BoundInputs from(const PhiConstants& phi, double A, double B, double x0_err, double x0_norm, double xstar_norm,
                          const MixingModel& mm) {
    BoundInputs in;
    in.phi1 = phi.phi1;
    in.phi2 = phi.phi2;
    in.phi3 = phi.phi3;
    in.A = A;
    in.B = B;
    in.c1 = std::pow(x0_err + x0_norm + B / A, 2);
    in.c2 = std::pow(A * xstar_norm + B, 2);
    in.mixing = mm;
    return in;
  }

  void validate() const {
    if (!(phi1 > 0.0 && phi3 > 0.0 && c1 > 0.0 && c2 > 0.0 && A > 0.0 && B >= 0.0))
      throw Error("bound inputs: constants must be positive");
    if (!(phi2 > 0.0 && phi2 < 1.0)) throw Error("bound inputs: phi2 must lie in (0,1)");
    if (!(mixing.sigma > 0.0 && mixing.sigma < 1.0 && mixing.C > 0.0)) throw Error("bound inputs: invalid mixing model");
  }

  long t(double delta) const { return mixing.t(delta); }
  double threshold() const { return stepsize_threshold(A, phi2, phi3); }
};

// K = min{k >= 0 : k >= t_k}.
inline long first_valid_iteration(const StepsizeSchedule& s, const MixingModel& mm, long cap = 100000000) {
  for (long k = 0; k <= cap; ++k)
    if (k >= mm.t(stepsize_at(s, k))) return k;
  throw NumericalError("first_valid_iteration: no k <= cap satisfies k >= t_k");
}

// ---------------------------------------------------------------------------
// Generic SA bounds: raw formulas with t given explicitly, then checked forms.

inline BoundValue sa_constant_formula(double phi1, double c1, double phi2, double phi3, double c2, double alpha,
                                      long t_alpha, long k) {
  if (k < t_alpha) throw Error("sa_constant_formula: k must be at least t_alpha");
  double bias = phi1 * c1 * std::pow(1.0 - phi2 * alpha, static_cast<double>(k - t_alpha));
  double var = phi3 * c2 / phi2 * alpha * static_cast<double>(t_alpha);
  return make_bound(bias, var);
}

inline BoundValue sa_linear_formula(double phi1, double c1, double phi2, double phi3, double c2, double alpha, double h,
                                    long K, long t_k, long k) {
  if (k < K) throw Error("sa_linear_formula: k must be at least K");
  const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(K) + h;
  const double pa = phi2 * alpha;
  const double tk = static_cast<double>(t_k);
  if (std::abs(pa - 1.0) <= 1e-12) {
    return make_bound(phi1 * c1 * Kh / kh, 8.0 * alpha * alpha * phi3 * c2 * tk * std::log(kh) / kh);
  }
  double bias = phi1 * c1 * std::pow(Kh / kh, pa);
  if (pa < 1.0) return make_bound(bias, 8.0 * alpha * alpha * phi3 * c2 / (1.0 - pa) * tk / std::pow(kh, pa));
  return make_bound(bias, 8.0 * M_E * alpha * alpha * phi3 * c2 / (pa - 1.0) * tk / kh);
}

inline BoundValue sa_polynomial_formula(double phi1, double c1, double phi2, double phi3, double c2, double alpha,
                                        double h, double xi, long K, long t_k, long k) {
  if (k < K) throw Error("sa_polynomial_formula: k must be at least K");
  const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(K) + h;
  double expo = -phi2 * alpha / (1.0 - xi) * (std::pow(kh, 1.0 - xi) - std::pow(Kh, 1.0 - xi));
  return make_bound(phi1 * c1 * std::exp(expo), 4.0 * phi3 * c2 * alpha / phi2 * static_cast<double>(t_k) / std::pow(kh, xi));
}

inline BoundValue bound_sa_constant(const BoundInputs& in, double alpha, long k) {
  in.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) throw StepsizeError("bound_sa_constant: alpha must lie in (0,1)");
  const long t = in.t(alpha);
  if (alpha * static_cast<double>(t) > in.threshold())
    throw StepsizeError("bound_sa_constant: alpha t_alpha = " + format_double(alpha * static_cast<double>(t)) +
                        " exceeds the admissible threshold " + format_double(in.threshold()));
  if (k < t) throw Error("bound_sa_constant: k = " + std::to_string(k) + " is below t_alpha = " + std::to_string(t));
  return sa_constant_formula(in.phi1, in.c1, in.phi2, in.phi3, in.c2, alpha, t, k);
}

namespace detail {

inline void require_condition(const BoundInputs& in, const StepsizeSchedule& s, long horizon, const char* who) {
  auto chk = check_stepsize_condition(s, in.A, in.phi2, in.phi3, [&](double d) { return in.t(d); }, horizon);
  if (!chk.ok)
    throw StepsizeError(std::string(who) + ": the stepsize condition fails at k = " + std::to_string(chk.first_violation) +
                        "; increase h");
}

}  // namespace detail

inline BoundValue bound_sa_linear(const BoundInputs& in, double alpha, double h, long k) {
  in.validate();
  auto s = StepsizeSchedule::linear(alpha, h);
  s.validate();
  const long K = first_valid_iteration(s, in.mixing);
  if (k < K) throw Error("bound_sa_linear: k = " + std::to_string(k) + " is below K = " + std::to_string(K));
  detail::require_condition(in, s, k, "bound_sa_linear");
  return sa_linear_formula(in.phi1, in.c1, in.phi2, in.phi3, in.c2, alpha, h, K, in.t(stepsize_at(s, k)), k);
}

inline double polynomial_min_h(double phi2, double alpha, double xi) {
  return std::pow(2.0 * xi / (phi2 * alpha), 1.0 / (1.0 - xi));
}

inline BoundValue bound_sa_polynomial(const BoundInputs& in, double alpha, double h, double xi, long k) {
  in.validate();
  auto s = StepsizeSchedule::polynomial(alpha, h, xi);
  s.validate();
  const double hmin = polynomial_min_h(in.phi2, alpha, xi);
  if (h < hmin) throw StepsizeError("bound_sa_polynomial: h must be at least " + format_double(hmin));
  const long K = first_valid_iteration(s, in.mixing);
  if (k < K) throw Error("bound_sa_polynomial: k = " + std::to_string(k) + " is below K = " + std::to_string(K));
  detail::require_condition(in, s, k, "bound_sa_polynomial");
  return sa_polynomial_formula(in.phi1, in.c1, in.phi2, in.phi3, in.c2, alpha, h, xi, K, in.t(stepsize_at(s, k)), k);
}

// ---------------------------------------------------------------------------
// Curves

struct BoundCurve {
  std::vector<long> k;
  std::vector<BoundValue> values;
};

inline void write_bound_csv(std::ostream& os, const BoundCurve& c) {
  os << "k,bias,variance,total\n";
  for (std::size_t i = 0; i < c.k.size(); ++i)
    os << c.k[i] << ',' << format_double(c.values[i].bias) << ',' << format_double(c.values[i].variance) << ','
       << format_double(c.values[i].total) << '\n';
}

// ---------------------------------------------------------------------------
// Per-family constant-stepsize bounds

struct BoundOptions {
  // Replace |Q*|, |V| by their horizon bounds (1/(1-gamma), sqrt(S)/(1-gamma) in l2).
  bool horizon_norms = false;
  // Numerical constant of the TD(lambda) stepsize condition.
  double td_c0 = 1.0 / 3648.0;
};

// Everything a constant-stepsize family bound needs once alpha is fixed.
struct FamilyTerms {
  double beta = 0.0;
  double rate = 0.0;         // bias factor is (1 - rate * alpha)
  long bias_start = 0;       // first valid k; bias exponent is k - bias_start
  double var_factor = 0.0;   // variance = var_factor * alpha * var_mixing
  long var_mixing = 0;
  double threshold = 0.0;    // alpha * thr_mixing must not exceed this
  long thr_mixing = 0;
  // Generic constants the family threshold is derived from.
  double A = 0.0, phi2 = 0.0, phi3 = 0.0;
  int shift = 0;             // window shift added to t_alpha in the threshold
};

class FamilyBound {
 public:
  FamilyBound(Family f, NormKind nk, double c1, double c2, MixingModel mm, std::function<FamilyTerms(double)> terms)
      : family_(f), norm_(nk), c1_(c1), c2_(c2), mixing_(mm), terms_(std::move(terms)) {}

  Family family() const { return family_; }
  NormKind norm() const { return norm_; }
  double c1() const { return c1_; }
  double c2() const { return c2_; }
  const MixingModel& mixing() const { return mixing_; }
  FamilyTerms terms(double alpha) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw StepsizeError("bound: alpha must lie in (0,1)");
    return terms_(alpha);
  }

  bool admissible(double alpha) const {
    auto t = terms(alpha);
    return alpha * static_cast<double>(t.thr_mixing) <= t.threshold;
  }
  long start(double alpha) const { return terms(alpha).bias_start; }

  BoundValue at(double alpha, long k) const {
    auto t = terms(alpha);
    if (alpha * static_cast<double>(t.thr_mixing) > t.threshold)
      throw StepsizeError(std::string(family_name(family_)) + " bound: alpha = " + format_double(alpha) +
                          " violates the stepsize condition (alpha * " + std::to_string(t.thr_mixing) + " > " +
                          format_double(t.threshold) + ")");
    if (k < t.bias_start)
      throw Error(std::string(family_name(family_)) + " bound: k = " + std::to_string(k) +
                  " is below the first valid iteration " + std::to_string(t.bias_start));
    return unchecked(alpha, k, t);
  }

  // Formula value without the stepsize check.
  BoundValue unchecked(double alpha, long k, const FamilyTerms& t) const {
    double bias = c1_ * std::pow(1.0 - t.rate * alpha, static_cast<double>(k - t.bias_start));
    double var = t.var_factor * alpha * static_cast<double>(t.var_mixing);
    return make_bound(bias, var);
  }

  BoundCurve curve(double alpha, const std::vector<long>& ks) const {
    BoundCurve c;
    const long k0 = start(alpha);
    for (long k : ks) {
      if (k < k0) continue;
      c.k.push_back(k);
      c.values.push_back(at(alpha, k));
    }
    return c;
  }

  // Largest admissible constant stepsize.
  double max_stepsize() const {
    if (family_ != Family::td_lambda) {
      auto t = terms(0.5);
      // threshold = phi2' / (phi3' A'^2) with A' = 1, phi3' = 1.
      return max_constant_stepsize(1.0, t.threshold, 1.0, mixing_.shifted(t.shift).C, mixing_.sigma);
    }
    // The truncation level is tau exactly on [gl^{tau+1}, gl^tau). Levels are
    // tried from the top; within one level the condition is the generic one
    // with a fixed threshold and a shifted mixing time.
    double hi = 1.0, lo = gl_;
    for (int tau = 0; tau < 100000 && lo > 0.0; ++tau, hi = lo, lo *= gl_) {
      auto probe = tau_terms_(tau);
      double a = max_constant_stepsize(1.0, probe.threshold, 1.0, mixing_.shifted(probe.shift).C, mixing_.sigma);
      a = std::min(a, std::nextafter(hi, 0.0));
      for (int shrink = 0; shrink < 64 && a >= lo && !admissible(a); ++shrink) a *= 1.0 - 1e-12;
      if (a >= lo && admissible(a)) return a;
    }
    throw NumericalError("max_stepsize: no admissible stepsize found");
  }

  std::function<FamilyTerms(int)> tau_terms_;  // TD(lambda) only: terms at a fixed truncation level
  double gl_ = 0.0;                            // TD(lambda) only: gamma * lambda

 private:
  Family family_;
  NormKind norm_;
  double c1_, c2_;
  MixingModel mixing_;
  std::function<FamilyTerms(double)> terms_;
};

namespace detail {

inline void require_positive_log(int d, const char* who) {
  if (d < 2) throw DimensionError(std::string(who) + ": needs at least two coordinates");
}

inline double linf_phi3(double beta, int d) { return 456.0 * M_E * std::log(static_cast<double>(d)) / (1.0 - beta); }

}  // namespace detail

// Q-learning in |.|_inf; mixing is that of the state-action chain.
inline FamilyBound q_constant_bound(const Mdp& m, const Policy& behavior, const Vector& q0, const MixingModel& mm,
                                    const BoundOptions& opt = {}) {
  validate_mdp(m);
  check_policy_dims(m, behavior);
  if (q0.size() != m.q_size()) throw DimensionError("q_constant_bound: Q0 has wrong length");
  const int d = m.q_size();
  detail::require_positive_log(d, "q_constant_bound");
  const double beta = q_beta(m, behavior);
  const Vector qs = solve_optimal_q(m).q;
  const double qn = opt.horizon_norms ? 1.0 / (1.0 - m.gamma) : qs.lpNorm<Eigen::Infinity>();
  const double c1 = 3.0 * std::pow((q0 - qs).lpNorm<Eigen::Infinity>() + q0.lpNorm<Eigen::Infinity>() + 1.0, 2);
  const double c2 = 912.0 * M_E * std::pow(3.0 * qn + 1.0, 2);
  const double logd = std::log(static_cast<double>(d));
  auto terms = [=](double alpha) {
    FamilyTerms t;
    long ta = mm.t(alpha);
    t.beta = beta;
    t.rate = (1.0 - beta) / 2.0;
    t.bias_start = ta;
    t.var_factor = c2 * logd / ((1.0 - beta) * (1.0 - beta));
    t.var_mixing = ta;
    t.threshold = (1.0 - beta) * (1.0 - beta) / (8208.0 * M_E * logd);
    t.thr_mixing = ta;
    t.A = 3.0;
    t.phi2 = (1.0 - beta) / 2.0;
    t.phi3 = detail::linf_phi3(beta, d);
    t.shift = 0;
    return t;
  };
  return FamilyBound(Family::q_learning, NormKind::linf, c1, c2, mm, terms);
}

// V-trace in |.|_inf; mixing is that of the behavior state chain.
inline FamilyBound vtrace_constant_bound(const Mdp& m, const VTraceParams& p, const Vector& v0, const MixingModel& mm,
                                         const BoundOptions& opt = {}) {
  validate_mdp(m);
  validate_vtrace(m, p);
  if (v0.size() != m.num_states()) throw DimensionError("vtrace_constant_bound: V0 has wrong length");
  const int S = m.num_states();
  detail::require_positive_log(S, "vtrace_constant_bound");
  const double beta = vtrace_beta(m, p);
  const Vector vs = vtrace_fixed_point(m, p);
  const double vn = opt.horizon_norms ? 1.0 / (1.0 - m.gamma) : vs.lpNorm<Eigen::Infinity>();
  const double eta = vtrace_eta(m.gamma, p.c_bar, p.n);
  const double rho = p.rho_bar;
  const int n = p.n;
  const double c1 = 3.0 * std::pow((v0 - vs).lpNorm<Eigen::Infinity>() + v0.lpNorm<Eigen::Infinity>() + 1.0, 2);
  const double c2 = 3648.0 * M_E * std::pow(vn + 1.0, 2);
  const double logS = std::log(static_cast<double>(S));
  const double weight = (rho + 1.0) * (rho + 1.0) * eta * eta;
  auto terms = [=](double alpha) {
    FamilyTerms t;
    long ta = mm.t(alpha);
    t.beta = beta;
    t.rate = (1.0 - beta) / 2.0;
    t.bias_start = ta + n;
    t.var_factor = c2 * logS * weight / ((1.0 - beta) * (1.0 - beta));
    t.var_mixing = ta + n;
    t.threshold = (1.0 - beta) * (1.0 - beta) / (7296.0 * M_E * weight * logS);
    t.thr_mixing = ta + n;
    t.A = 2.0 * (rho + 1.0) * eta;
    t.phi2 = (1.0 - beta) / 2.0;
    t.phi3 = detail::linf_phi3(beta, S);
    t.shift = n;
    return t;
  };
  return FamilyBound(Family::v_trace, NormKind::linf, c1, c2, mm, terms);
}

// On-policy n-step TD in |.|_2; mixing is that of the state chain.
inline FamilyBound nstep_constant_bound(const Mdp& m, const Policy& target, int n, const Vector& v0,
                                        const MixingModel& mm, const BoundOptions& opt = {}) {
  validate_mdp(m);
  check_policy_dims(m, target);
  if (n < 1) throw Error("nstep_constant_bound: n must be positive");
  if (v0.size() != m.num_states()) throw DimensionError("nstep_constant_bound: V0 has wrong length");
  const double beta = nstep_beta(m, target, n).beta;
  const Vector vs = solve_value_function(m, target);
  const double g = m.gamma;
  const double vn = opt.horizon_norms ? std::sqrt(static_cast<double>(m.num_states())) / (1.0 - g) : vs.norm();
  const double c1 = std::pow((v0 - vs).norm() + v0.norm() + 4.0, 2);
  const double c2 = 228.0 * std::pow(4.0 * (1.0 - g) * vn + 1.0, 2);
  auto terms = [=](double alpha) {
    FamilyTerms t;
    long ta = mm.t(alpha);
    t.beta = beta;
    t.rate = 1.0 - beta;
    t.bias_start = ta + n;
    t.var_factor = c2 / ((1.0 - g) * (1.0 - g) * (1.0 - beta));
    t.var_mixing = ta + n;
    t.threshold = (1.0 - beta) / 3648.0;
    t.thr_mixing = ta + n;
    t.A = 4.0;
    t.phi2 = 1.0 - beta;
    t.phi3 = 228.0;
    t.shift = n;
    return t;
  };
  return FamilyBound(Family::nstep_td, NormKind::l2, c1, c2, mm, terms);
}

// TD(lambda) in |.|_2. tau and beta_4 follow alpha through the truncation level.
inline FamilyBound tdlambda_constant_bound(const Mdp& m, const Policy& target, double lambda, const Vector& v0,
                                           const MixingModel& mm, const BoundOptions& opt = {}) {
  validate_mdp(m);
  check_policy_dims(m, target);
  if (!(lambda > 0.0 && lambda < 1.0)) throw Error("tdlambda_constant_bound: lambda must lie in (0,1)");
  if (v0.size() != m.num_states()) throw DimensionError("tdlambda_constant_bound: V0 has wrong length");
  const Vector kappa = stationary_distribution(make_chain(policy_transition(m, target)));
  const double K_min = kappa.minCoeff();
  const Vector vs = solve_value_function(m, target);
  const double g = m.gamma, gl = g * lambda;
  const double vn = opt.horizon_norms ? std::sqrt(static_cast<double>(m.num_states())) / (1.0 - g) : vs.norm();
  const double c1 = std::pow((v0 - vs).norm() + v0.norm() + 1.0, 2);
  const double c2 = 114.0 * std::pow(4.0 * vn + 1.0, 2);
  const double c0 = opt.td_c0;
  auto at_tau = [=](int tau, long ta) {
    FamilyTerms t;
    double beta = tdlambda_beta_formula(K_min, g, lambda, tau);
    t.beta = beta;
    t.rate = 1.0 - beta;
    t.bias_start = ta + 2L * tau + 1;
    t.var_factor = c2 / ((1.0 - gl) * (1.0 - gl) * (1.0 - beta));
    t.var_mixing = ta + tau + 1;
    t.threshold = c0 * (1.0 - beta) * (1.0 - gl) * (1.0 - gl);
    t.thr_mixing = ta + 2L * tau + 1;
    t.A = 4.0 / (1.0 - gl);
    t.phi2 = 1.0 - beta;
    t.phi3 = 228.0;
    t.shift = 2 * tau + 1;
    return t;
  };
  auto terms = [=](double alpha) { return at_tau(tdlambda_truncation_level(g, lambda, alpha), mm.t(alpha)); };
  FamilyBound fb(Family::td_lambda, NormKind::l2, c1, c2, mm, terms);
  fb.tau_terms_ = [=](int tau) { return at_tau(tau, 0); };
  fb.gl_ = gl;
  return fb;
}

// ---------------------------------------------------------------------------
// Diminishing stepsizes

namespace detail {

inline bool same_alpha(double a, double b) { return std::abs(a - b) <= 1e-9 * std::abs(b); }

}  // namespace detail

struct DiminishingBound {
  Family family;
  StepsizeSchedule schedule;
  long K_prime = 0;
  int mixing_shift = 0;
  MixingModel mixing;
  std::function<BoundValue(long, long, long)> eval;  // (k, t_k, K')

  BoundValue at(long k) const {
    if (k < K_prime) throw Error("diminishing bound: k = " + std::to_string(k) + " is below K' = " + std::to_string(K_prime));
    return eval(k, mixing.t(stepsize_at(schedule, k)), K_prime);
  }
  BoundCurve curve(const std::vector<long>& ks) const {
    BoundCurve c;
    for (long k : ks)
      if (k >= K_prime) {
        c.k.push_back(k);
        c.values.push_back(at(k));
      }
    return c;
  }
};

// Smallest power-of-two h (then refined by bisection) for which the stepsize
// condition holds up to the horizon.
inline double min_offset_h(StepsizeSchedule s, double A, double phi2, double phi3, const MixingModel& mm, long horizon) {
  auto ok = [&](double h) {
    s.h = h;
    return check_stepsize_condition(s, A, phi2, phi3, [&](double d) { return mm.t(d); }, horizon).ok;
  };
  double hi = 1.0;
  while (!ok(hi)) {
    hi *= 2.0;
    if (hi > 1e15) throw NumericalError("min_offset_h: no offset makes the stepsize condition hold");
  }
  double lo = hi / 2.0;
  if (hi == 1.0) return 1.0;
  for (int it = 0; it < 60 && hi - lo > 1e-6 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    if (ok(mid)) hi = mid;
    else lo = mid;
  }
  return hi;
}

// Family bound for a diminishing schedule. The schedule's h must make the
// stepsize condition hold up to `horizon`; K' is then the first k with
// k >= t_k plus the window shift.
inline DiminishingBound rl_diminishing_bound(Family f, const Mdp& m, const Policy& behavior, const Policy& target,
                                             const VTraceParams* vp, int n, const Vector& x0,
                                             const StepsizeSchedule& s, const MixingModel& mm, long horizon,
                                             const BoundOptions& opt = {}) {
  s.validate();
  if (s.kind == StepsizeKind::constant) throw Error("rl_diminishing_bound: schedule must be diminishing");
  if (f == Family::td_lambda)
    throw Error("rl_diminishing_bound: TD(lambda) bounds are available for constant stepsizes only");
  DiminishingBound out;
  out.family = f;
  out.schedule = s;
  out.mixing = mm;
  const double h = s.h;
  double A = 0.0, phi2 = 0.0, phi3 = 0.0;
  if (f == Family::q_learning) {
    auto fb = q_constant_bound(m, behavior, x0, mm, opt);
    const double beta = fb.terms(0.5).beta;
    const int d = m.q_size();
    const double logd = std::log(static_cast<double>(d));
    const Vector qs = solve_optimal_q(m).q;
    const double qn = opt.horizon_norms ? 1.0 / (1.0 - m.gamma) : qs.lpNorm<Eigen::Infinity>();
    const double c1 = fb.c1();
    const double c2 = 3648.0 * M_E * std::pow(3.0 * qn + 1.0, 2);
    const double ob = 1.0 - beta;
    A = 3.0;
    phi2 = ob / 2.0;
    phi3 = detail::linf_phi3(beta, d);
    if (s.kind == StepsizeKind::linear) {
      const double scaled = s.alpha * ob;
      int which = detail::same_alpha(scaled, 1.0) ? 1 : detail::same_alpha(scaled, 2.0) ? 2 : detail::same_alpha(scaled, 4.0) ? 4 : 0;
      if (!which)
        throw Error("rl_diminishing_bound: Q-learning with a linear stepsize needs alpha (1 - beta_1) in {1, 2, 4}");
      out.eval = [=](long k, long tk, long Kp) {
        const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(Kp) + h;
        const double base = c2 * logd / (ob * ob * ob) * static_cast<double>(tk) / kh;
        if (which == 1) return make_bound(c1 * std::sqrt(Kh / kh), 2.0 * base);
        if (which == 2) return make_bound(c1 * Kh / kh, 4.0 * base * std::log(kh));
        return make_bound(c1 * (Kh / kh) * (Kh / kh), 16.0 * base);
      };
    } else {
      const double a = s.alpha, xi = s.xi;
      // Variance denominator is k + h for this family.
      out.eval = [=](long k, long tk, long Kp) {
        const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(Kp) + h;
        double e = -ob * a / (2.0 * (1.0 - xi)) * (std::pow(kh, 1.0 - xi) - std::pow(Kh, 1.0 - xi));
        return make_bound(c1 * std::exp(e), c2 * logd / (ob * ob) * static_cast<double>(tk) / kh);
      };
    }
  } else if (f == Family::v_trace) {
    if (!vp) throw Error("rl_diminishing_bound: V-trace needs its parameters");
    if (s.kind != StepsizeKind::linear) throw Error("rl_diminishing_bound: V-trace supports the linear stepsize only");
    auto fb = vtrace_constant_bound(m, *vp, x0, mm, opt);
    auto t0 = fb.terms(0.5);
    const double ob = 1.0 - t0.beta;
    if (!detail::same_alpha(s.alpha, 4.0 / ob)) throw Error("rl_diminishing_bound: V-trace needs alpha = 4/(1 - beta_2)");
    const Vector vs = vtrace_fixed_point(m, *vp);
    const double vn = opt.horizon_norms ? 1.0 / (1.0 - m.gamma) : vs.lpNorm<Eigen::Infinity>();
    const double eta = vtrace_eta(m.gamma, vp->c_bar, vp->n);
    const double weight = (vp->rho_bar + 1.0) * (vp->rho_bar + 1.0) * eta * eta;
    const double logS = std::log(static_cast<double>(m.num_states()));
    const double c1 = fb.c1();
    const double c2 = 233472.0 * M_E * M_E * std::pow(vn + 1.0, 2);
    const int nn = vp->n;
    out.mixing_shift = nn;
    A = t0.A;
    phi2 = t0.phi2;
    phi3 = t0.phi3;
    out.eval = [=](long k, long tk, long Kp) {
      const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(Kp) + h;
      return make_bound(c1 * Kh / kh, c2 * logS / (ob * ob * ob) * weight * static_cast<double>(tk + nn) / kh);
    };
  } else {
    if (s.kind != StepsizeKind::linear) throw Error("rl_diminishing_bound: n-step TD supports the linear stepsize only");
    auto fb = nstep_constant_bound(m, target, n, x0, mm, opt);
    auto t0 = fb.terms(0.5);
    const double ob = 1.0 - t0.beta;
    if (!detail::same_alpha(s.alpha, 2.0 / ob)) throw Error("rl_diminishing_bound: n-step TD needs alpha = 2/(1 - beta_3)");
    const Vector vs = solve_value_function(m, target);
    const double g = m.gamma;
    const double vn = opt.horizon_norms ? std::sqrt(static_cast<double>(m.num_states())) / (1.0 - g) : vs.norm();
    const double c1 = fb.c1();
    const double c2 = 7296.0 * M_E * std::pow(4.0 * (1.0 - g) * vn + 1.0, 2);
    out.mixing_shift = n;
    A = t0.A;
    phi2 = t0.phi2;
    phi3 = t0.phi3;
    out.eval = [=](long k, long tk, long Kp) {
      const double kh = static_cast<double>(k) + h, Kh = static_cast<double>(Kp) + h;
      return make_bound(c1 * Kh / kh, c2 * static_cast<double>(tk + n) / (ob * ob * (1.0 - g) * (1.0 - g) * kh));
    };
  }
  const MixingModel shifted = mm.shifted(out.mixing_shift);
  auto chk = check_stepsize_condition(s, A, phi2, phi3, [&](double dl) { return shifted.t(dl); }, horizon);
  if (!chk.ok)
    throw StepsizeError("rl_diminishing_bound: the stepsize condition fails at k = " + std::to_string(chk.first_violation) +
                        "; h = " + format_double(min_offset_h(s, A, phi2, phi3, shifted, horizon)) + " or larger is needed");
  out.K_prime = first_valid_iteration(s, shifted);
  return out;
}

// ---------------------------------------------------------------------------
// Sample-complexity scaling laws (unit leading constants, not sample counts)

inline double sample_complexity_q(double eps, double gamma, double N_min) {
  if (!(eps > 0.0)) throw Error("sample_complexity_q: epsilon must be positive");
  double l = std::log(1.0 / eps);
  return l * l / (eps * eps * std::pow(1.0 - gamma, 5) * std::pow(N_min, 3));
}

inline double sample_complexity_vtrace(double eps, double gamma, int n, double c_bar, double rho_bar, double C_min,
                                       double K_min) {
  if (!(eps > 0.0)) throw Error("sample_complexity_vtrace: epsilon must be positive");
  double l = std::log(1.0 / eps);
  double eta = vtrace_eta(gamma, c_bar, n);
  double gc = gamma * C_min;
  double off = n * rho_bar * rho_bar * eta * eta * std::pow(1.0 - gc, 3) / std::pow(1.0 - std::pow(gc, n), 3);
  return l * l / (eps * eps) / std::pow(1.0 - gamma, 5) * off / std::pow(K_min, 3);
}

inline double sample_complexity_nstep(double eps, double gamma, int n, double K_min, int S) {
  if (!(eps > 0.0)) throw Error("sample_complexity_nstep: epsilon must be positive");
  double l = std::log(1.0 / eps);
  return l * l / (eps * eps) / ((1.0 - gamma) * (1.0 - gamma)) * n / std::pow(1.0 - std::pow(gamma, n), 2) /
         (K_min * K_min) * std::sqrt(static_cast<double>(S));
}

// The n-dependent factor n / (1 - gamma^n)^2.
inline double nstep_factor(double gamma, int n) { return n / std::pow(1.0 - std::pow(gamma, n), 2); }

struct OptimalN {
  int argmin = 1;
  double value = 0.0;
  long estimate = 1;  // max(1, round(1 / log(1/gamma)))
};

inline OptimalN optimal_n(double gamma, int max_n = 500) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("optimal_n: gamma must lie in (0,1)");
  OptimalN out;
  out.value = nstep_factor(gamma, 1);
  for (int n = 2; n <= max_n; ++n) {
    double f = nstep_factor(gamma, n);
    if (f < out.value) {
      out.value = f;
      out.argmin = n;
    }
  }
  out.estimate = std::max(1L, std::lround(1.0 / std::log(1.0 / gamma)));
  return out;
}

}  // namespace salab
