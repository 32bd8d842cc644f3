#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "salab/error.hpp"
#include "salab/mdp.hpp"

namespace salab {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct FiniteChain {
  SparseMatrix transition;
  std::vector<std::string> labels;  // optional, same length as the state set when present

  int size() const { return static_cast<int>(transition.rows()); }
};

inline FiniteChain make_chain(const Matrix& P, std::vector<std::string> labels = {}) {
  if (P.rows() != P.cols()) throw DimensionError("chain: transition matrix must be square");
  check_stochastic_rows(P, "chain");
  FiniteChain c;
  c.transition = P.sparseView();
  c.labels = std::move(labels);
  return c;
}

inline std::vector<std::vector<int>> adjacency(const SparseMatrix& P, bool reverse) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(P.rows()));
  for (int i = 0; i < P.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(P, i); it; ++it)
      if (it.value() > 0.0) {
        int u = i, v = static_cast<int>(it.col());
        if (reverse) std::swap(u, v);
        adj[static_cast<std::size_t>(u)].push_back(v);
      }
  return adj;
}

inline std::vector<int> bfs_levels(const std::vector<std::vector<int>>& adj, int root) {
  std::vector<int> level(adj.size(), -1);
  std::queue<int> q;
  level[static_cast<std::size_t>(root)] = 0;
  q.push(root);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[static_cast<std::size_t>(u)])
      if (level[static_cast<std::size_t>(v)] < 0) {
        level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
  }
  return level;
}

// Period of an irreducible chain: gcd over edges u->v of level(u)+1-level(v).
inline int chain_period(const FiniteChain& c) {
  auto adj = adjacency(c.transition, false);
  auto level = bfs_levels(adj, 0);
  int g = 0;
  for (std::size_t u = 0; u < adj.size(); ++u)
    for (int v : adj[u]) g = std::gcd(g, std::abs(level[u] + 1 - level[static_cast<std::size_t>(v)]));
  return g == 0 ? 1 : g;
}

inline bool chain_irreducible(const FiniteChain& c) {
  if (c.size() == 0) return false;
  auto fwd = bfs_levels(adjacency(c.transition, false), 0);
  auto bwd = bfs_levels(adjacency(c.transition, true), 0);
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (fwd[i] < 0 || bwd[i] < 0) return false;
  return true;
}

inline void check_ergodic(const FiniteChain& c) {
  if (!chain_irreducible(c))
    throw AssumptionViolation("chain is reducible: the ergodicity assumption (irreducible, aperiodic) fails");
  int p = chain_period(c);
  if (p != 1)
    throw AssumptionViolation("chain is periodic with period " + std::to_string(p) +
                              ": the ergodicity assumption (irreducible, aperiodic) fails");
}

inline Vector stationary_distribution(const FiniteChain& c) {
  check_ergodic(c);
  const int n = c.size();
  Vector mu;
  if (n <= 1500) {
    Matrix sys = Matrix(c.transition).transpose() - Matrix::Identity(n, n);
    sys.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::PartialPivLU<Matrix> lu(sys);
    mu = lu.solve(rhs);
    mu += lu.solve(rhs - sys * mu);
  } else {
    Eigen::SparseMatrix<double> sys = Eigen::SparseMatrix<double>(c.transition.transpose());
    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < sys.outerSize(); ++j)
      for (Eigen::SparseMatrix<double>::InnerIterator it(sys, j); it; ++it)
        if (it.row() != n - 1) trips.emplace_back(static_cast<int>(it.row()), j, it.value());
    for (int i = 0; i < n; ++i) {
      if (i != n - 1) trips.emplace_back(i, i, -1.0);
      trips.emplace_back(n - 1, i, 1.0);
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw NumericalError("stationary_distribution: sparse factorization failed");
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;
    mu = lu.solve(rhs);
    mu += lu.solve(rhs - A * mu);
  }
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();
  Vector resid = c.transition.transpose() * mu - mu;
  if (resid.cwiseAbs().maxCoeff() > 1e-12)
    throw NumericalError("stationary_distribution: residual above 1e-12");
  return mu;
}

inline double total_variation(const Vector& d1, const Vector& d2) {
  if (d1.size() != d2.size()) throw DimensionError("total_variation: length mismatch");
  return 0.5 * (d1 - d2).cwiseAbs().sum();
}

// d(k) = max_y TV(P^k(y,.), mu) for k = 0, 1, ... Stops after max_k or once
// d(k) <= stop_below (d is nonincreasing in k).
inline std::vector<double> tv_decay(const FiniteChain& c, const Vector& mu, long max_k, double stop_below = 0.0) {
  const int n = c.size();
  Matrix D = Matrix::Identity(n, n);
  std::vector<double> d;
  for (long k = 0;; ++k) {
    double worst = 0.0;
    for (int y = 0; y < n; ++y) worst = std::max(worst, 0.5 * (D.row(y).transpose() - mu).cwiseAbs().sum());
    d.push_back(worst);
    if (k >= max_k || worst <= stop_below) break;
    D = D * c.transition;
  }
  return d;
}

inline long mixing_time(const FiniteChain& c, double delta, long cap = 1000000) {
  if (delta >= 1.0) return 0;
  if (!(delta > 0.0)) throw Error("mixing_time: delta must be positive");
  Vector mu = stationary_distribution(c);
  const int n = c.size();
  Matrix D = Matrix::Identity(n, n);
  for (long k = 0; k <= cap; ++k) {
    double worst = 0.0;
    for (int y = 0; y < n; ++y) worst = std::max(worst, 0.5 * (D.row(y).transpose() - mu).cwiseAbs().sum());
    if (worst <= delta) return k;
    D = D * c.transition;
  }
  throw NumericalError("mixing_time: not reached within " + std::to_string(cap) + " steps");
}

inline void write_decay_csv(std::ostream& os, const std::vector<double>& d) {
  os << "k,tv_max\n";
  for (std::size_t k = 0; k < d.size(); ++k) os << k << ',' << format_double(d[k]) << '\n';
}

// Envelope constants with d(k) <= C sigma^k.
struct MixingModel {
  double C = 1.0;
  double sigma = 0.5;

  // Upper bound on t_delta from the envelope, rounded up.
  long t(double delta) const {
    double v = (std::log(1.0 / delta) + std::log(C / sigma)) / std::log(1.0 / sigma);
    return std::max(0L, static_cast<long>(std::ceil(v)));
  }
  // Model whose t() is this one's plus m (used for windowed chains).
  MixingModel shifted(int m) const { return MixingModel{C * std::pow(sigma, -m), sigma}; }
};

struct ErgodicityFit {
  double C = 1.0;
  double sigma = 0.5;
  long max_k_used = 0;
  bool exact_mixing = false;
  double slem = std::nan("");  // second largest eigenvalue modulus, diagnostic only
  std::vector<double> decay;

  MixingModel model() const { return MixingModel{C, sigma}; }
};

inline constexpr double kTvFloor = 1e-13;

inline ErgodicityFit ergodicity_fit(const FiniteChain& c, long horizon) {
  Vector mu = stationary_distribution(c);
  ErgodicityFit fit;
  fit.decay = tv_decay(c, mu, horizon, kTvFloor);
  const auto& d = fit.decay;
  fit.max_k_used = horizon;

  long last = -1;  // last k with d(k) above the floor
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d[k] > kTvFloor) last = static_cast<long>(k);

  std::vector<double> ratios;
  for (long k = 0; k + 1 <= last; ++k) ratios.push_back(d[static_cast<std::size_t>(k + 1)] / d[static_cast<std::size_t>(k)]);
  // Ratios of 1 (flat stretches) cannot be a decay rate; only the stretch after
  // the last flat step is used.
  std::size_t from = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i)
    if (ratios[i] >= 1.0 - 1e-12) from = i + 1;
  double sigma = 0.0;
  for (std::size_t i = from; i < ratios.size(); ++i) sigma = std::max(sigma, ratios[i]);

  bool dropped = last >= 0 && static_cast<std::size_t>(last + 1) < d.size();
  bool abrupt = dropped && d[static_cast<std::size_t>(last + 1)] < 1e-6 * d[static_cast<std::size_t>(last)];
  if (sigma <= 0.0 || ratios.size() == from) {
    sigma = 0.5;
    fit.exact_mixing = true;
  } else if (abrupt) {
    fit.exact_mixing = true;
  }
  fit.sigma = sigma;
  double C = 0.0;
  for (long k = 0; k <= last; ++k) C = std::max(C, d[static_cast<std::size_t>(k)] / std::pow(sigma, static_cast<double>(k)));
  fit.C = std::max(C, kTvFloor);

  if (c.size() <= 500) {
    Eigen::EigenSolver<Matrix> es(Matrix(c.transition), false);
    std::vector<double> mods;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) mods.push_back(std::abs(es.eigenvalues()(i)));
    std::sort(mods.rbegin(), mods.rend());
    fit.slem = mods.size() > 1 ? mods[1] : 0.0;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Windows of a trajectory and the lifted chains they form.

// A stretch of trajectory: states s_0..s_m and the actions taken. Q-learning,
// V-trace and n-step TD record every action; the TD(lambda) chain records only
// the action taken at s_{m-1}.
struct Window {
  std::vector<int> states;
  std::vector<int> actions;

  bool operator==(const Window&) const = default;
};

struct LiftedChain {
  FiniteChain chain;
  std::vector<Window> windows;
  Vector product_law;  // stationary law from the path-measure product formula
};

inline void require_full_support(const Policy& behavior) {
  for (int s = 0; s < behavior.num_states(); ++s)
    for (int a = 0; a < behavior.num_actions(); ++a)
      if (!(behavior(s, a) > 0.0))
        throw AssumptionViolation("behavior policy gives action " + std::to_string(a) + " zero probability in state " +
                                  std::to_string(s) + ": the full-support exploration assumption fails");
}

inline constexpr std::uint64_t kDefaultWindowCap = 2000000;

namespace detail {

inline std::uint64_t window_key(const Window& w, int S, int A) {
  std::uint64_t k = 0;
  for (int s : w.states) k = k * static_cast<std::uint64_t>(S) + static_cast<std::uint64_t>(s);
  for (int a : w.actions) k = k * static_cast<std::uint64_t>(A) + static_cast<std::uint64_t>(a);
  return k;
}

inline double ipow(double b, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

}  // namespace detail

struct WindowLaw {
  std::vector<Window> windows;
  Vector probs;
};

// Enumerates windows of `m` transitions with positive stationary mass under
// kappa(s_0) prod pi(a_i|s_i) P_{a_i}(s_i, s_{i+1}). With last_action_only the
// intermediate actions are summed out.
inline WindowLaw enumerate_windows(const Mdp& mdp, const Policy& pol, int m, bool last_action_only,
                                   std::uint64_t cap = kDefaultWindowCap) {
  check_policy_dims(mdp, pol);
  if (m < 1) throw Error("enumerate_windows: need at least one transition");
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  double count = last_action_only ? detail::ipow(S, m + 1) * A : detail::ipow(static_cast<double>(S) * A, m) * S;
  if (count > static_cast<double>(cap))
    throw Error("lifted chain would have up to " + std::to_string(static_cast<long long>(count)) +
                " states, above the cap of " + std::to_string(cap) + "; use the Monte-Carlo mode instead");
  Matrix Ppi = policy_transition(mdp, pol);
  Vector kappa = stationary_distribution(make_chain(Ppi));

  WindowLaw out;
  std::vector<double> probs;
  Window cur;
  std::function<void(int, double)> rec = [&](int depth, double w) {
    int s = cur.states.back();
    if (depth == m) {
      out.windows.push_back(cur);
      probs.push_back(w);
      return;
    }
    bool record = !last_action_only || depth == m - 1;
    if (record) {
      for (int a = 0; a < A; ++a) {
        double pa = pol(s, a);
        if (pa <= 0.0) continue;
        for (int s2 = 0; s2 < S; ++s2) {
          double p = mdp.P(a)(s, s2);
          if (p <= 0.0) continue;
          cur.actions.push_back(a);
          cur.states.push_back(s2);
          rec(depth + 1, w * pa * p);
          cur.states.pop_back();
          cur.actions.pop_back();
        }
      }
    } else {
      for (int s2 = 0; s2 < S; ++s2) {
        double p = Ppi(s, s2);
        if (p <= 0.0) continue;
        cur.states.push_back(s2);
        rec(depth + 1, w * p);
        cur.states.pop_back();
      }
    }
  };
  for (int s0 = 0; s0 < S; ++s0) {
    if (kappa(s0) <= 0.0) continue;
    cur.states.assign(1, s0);
    cur.actions.clear();
    rec(0, kappa(s0));
  }
  out.probs = Eigen::Map<Vector>(probs.data(), static_cast<Eigen::Index>(probs.size()));
  return out;
}

inline std::string window_label(const Window& w) {
  std::string s = "(";
  for (std::size_t i = 0; i < w.states.size(); ++i) {
    if (i) s += ",";
    s += "s" + std::to_string(w.states[i]);
  }
  for (int a : w.actions) s += ",a" + std::to_string(a);
  return s + ")";
}

inline LiftedChain lift_windows(const Mdp& mdp, const Policy& pol, int m, bool last_action_only, std::uint64_t cap) {
  WindowLaw law = enumerate_windows(mdp, pol, m, last_action_only, cap);
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  std::unordered_map<std::uint64_t, int> index;
  index.reserve(law.windows.size() * 2);
  for (std::size_t i = 0; i < law.windows.size(); ++i) index[detail::window_key(law.windows[i], S, A)] = static_cast<int>(i);

  std::vector<Eigen::Triplet<double>> trips;
  Window next;
  for (std::size_t i = 0; i < law.windows.size(); ++i) {
    const Window& w = law.windows[i];
    int last = w.states.back();
    for (int a = 0; a < A; ++a) {
      double pa = pol(last, a);
      if (pa <= 0.0) continue;
      for (int s2 = 0; s2 < S; ++s2) {
        double p = mdp.P(a)(last, s2);
        if (p <= 0.0) continue;
        next.states.assign(w.states.begin() + 1, w.states.end());
        next.states.push_back(s2);
        if (last_action_only) {
          next.actions.assign(1, a);
        } else {
          next.actions.assign(w.actions.begin() + 1, w.actions.end());
          next.actions.push_back(a);
        }
        auto it = index.find(detail::window_key(next, S, A));
        if (it == index.end()) throw NumericalError("lifted chain: successor window missing from enumeration");
        trips.emplace_back(static_cast<int>(i), it->second, pa * p);
      }
    }
  }
  LiftedChain out;
  const int n = static_cast<int>(law.windows.size());
  out.chain.transition.resize(n, n);
  out.chain.transition.setFromTriplets(trips.begin(), trips.end());
  out.chain.transition.makeCompressed();
  out.chain.labels.reserve(law.windows.size());
  for (const auto& w : law.windows) out.chain.labels.push_back(window_label(w));
  out.windows = std::move(law.windows);
  out.product_law = std::move(law.probs);
  return out;
}

// Chain of triples (s, a, s').
inline LiftedChain lift_q_chain(const Mdp& mdp, const Policy& behavior) {
  require_full_support(behavior);
  return lift_windows(mdp, behavior, 1, false, kDefaultWindowCap);
}

// Chain of n-step windows (s_0, a_0, ..., s_{n-1}, a_{n-1}, s_n).
inline LiftedChain lift_nstep_chain(const Mdp& mdp, const Policy& behavior, int n, bool full_support = true,
                                    std::uint64_t cap = kDefaultWindowCap) {
  if (n < 1) throw Error("lift_nstep_chain: n must be positive");
  if (full_support) require_full_support(behavior);
  return lift_windows(mdp, behavior, n, false, cap);
}

// Chain of (s_0, ..., s_{tau+1}, a_tau): what the truncated TD(lambda) operator reads.
inline LiftedChain lift_tdlambda_chain(const Mdp& mdp, const Policy& pol, int tau,
                                       std::uint64_t cap = kDefaultWindowCap) {
  if (tau < 0) throw Error("lift_tdlambda_chain: tau must be nonnegative");
  return lift_windows(mdp, pol, tau + 1, true, cap);
}

}  // namespace salab
