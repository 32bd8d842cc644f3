#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "salab/error.hpp"
#include "salab/rng.hpp"

namespace salab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Tabular MDP. Q-functions are stored state-major: index s * |A| + a.
struct Mdp {
  std::vector<Matrix> transitions;  // one |S| x |S| matrix per action
  Matrix rewards;                   // |S| x |A|
  double gamma = 0.9;

  int num_states() const { return static_cast<int>(rewards.rows()); }
  int num_actions() const { return static_cast<int>(rewards.cols()); }
  int q_size() const { return num_states() * num_actions(); }
  double reward(int s, int a) const { return rewards(s, a); }
  const Matrix& P(int a) const { return transitions[static_cast<std::size_t>(a)]; }
};

inline int q_index(const Mdp& m, int s, int a) { return s * m.num_actions() + a; }

inline constexpr double kStochasticTol = 1e-12;

inline void check_stochastic_rows(const Matrix& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!(m(i, j) >= 0.0)) throw Error(what + ": negative entry in row " + std::to_string(i));
      sum += m(i, j);
    }
    if (std::abs(sum - 1.0) > kStochasticTol)
      throw Error(what + ": row not stochastic (row " + std::to_string(i) + " sums to " +
                  std::to_string(sum) + ")");
  }
}

inline void validate_mdp(const Mdp& m) {
  const int S = m.num_states();
  const int A = m.num_actions();
  if (S <= 0 || A <= 0) throw DimensionError("mdp: need at least one state and one action");
  if (static_cast<int>(m.transitions.size()) != A)
    throw DimensionError("mdp: expected " + std::to_string(A) + " transition matrices");
  for (int a = 0; a < A; ++a) {
    const Matrix& P = m.P(a);
    if (P.rows() != S || P.cols() != S) throw DimensionError("mdp: transition matrix has wrong shape");
    check_stochastic_rows(P, "mdp action " + std::to_string(a));
  }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double r = m.rewards(s, a);
      if (!(r >= 0.0 && r <= 1.0))
        throw Error("mdp: reward out of range at (" + std::to_string(s) + "," + std::to_string(a) + ")");
    }
  if (!(m.gamma > 0.0 && m.gamma < 1.0)) throw Error("mdp: gamma out of range (0,1)");
}

// pi(a|s) as an |S| x |A| matrix.
struct Policy {
  Matrix probs;

  int num_states() const { return static_cast<int>(probs.rows()); }
  int num_actions() const { return static_cast<int>(probs.cols()); }
  double operator()(int s, int a) const { return probs(s, a); }
};

inline void validate_policy(const Policy& p) {
  if (p.probs.size() == 0) throw DimensionError("policy: empty");
  check_stochastic_rows(p.probs, "policy");
}

inline void check_policy_dims(const Mdp& m, const Policy& p) {
  if (p.num_states() != m.num_states() || p.num_actions() != m.num_actions())
    throw DimensionError("policy shape does not match mdp");
}

inline Policy uniform_policy(int S, int A) { return Policy{Matrix::Constant(S, A, 1.0 / A)}; }

inline Policy deterministic_policy(const std::vector<int>& actions, int A) {
  Policy p{Matrix::Zero(static_cast<Eigen::Index>(actions.size()), A)};
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= A) throw DimensionError("deterministic_policy: action out of range");
    p.probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return p;
}

// Rows drawn from Dirichlet(1,...,1); floor > 0 keeps every action supported.
inline Policy random_policy(std::uint64_t seed, int S, int A, double floor = 0.0) {
  Rng rng(seed);
  Policy p{Matrix(S, A)};
  for (int s = 0; s < S; ++s) {
    double total = 0.0;
    for (int a = 0; a < A; ++a) total += (p.probs(s, a) = rng.standard_exponential());
    for (int a = 0; a < A; ++a) p.probs(s, a) = floor / A + (1.0 - floor) * p.probs(s, a) / total;
  }
  return p;
}

inline Vector bellman_optimality(const Vector& q, const Mdp& m) {
  const int S = m.num_states();
  const int A = m.num_actions();
  if (q.size() != S * A) throw DimensionError("bellman_optimality: q has wrong length");
  Vector vmax(S);
  for (int s = 0; s < S; ++s) vmax(s) = q.segment(s * A, A).maxCoeff();
  Vector out(S * A);
  for (int a = 0; a < A; ++a) {
    Vector next = m.P(a) * vmax;
    for (int s = 0; s < S; ++s) out(s * A + a) = m.rewards(s, a) + m.gamma * next(s);
  }
  return out;
}

inline Matrix policy_transition(const Mdp& m, const Policy& p) {
  check_policy_dims(m, p);
  const int S = m.num_states();
  Matrix out = Matrix::Zero(S, S);
  for (int a = 0; a < m.num_actions(); ++a) out += p.probs.col(a).asDiagonal() * m.P(a);
  return out;
}

inline Vector policy_reward(const Mdp& m, const Policy& p) {
  check_policy_dims(m, p);
  return m.rewards.cwiseProduct(p.probs).rowwise().sum();
}

// Solves (I - gamma P) V = r with one round of iterative refinement.
inline Vector solve_discounted(const Matrix& P, const Vector& r, double gamma) {
  const Eigen::Index n = P.rows();
  Matrix sys = Matrix::Identity(n, n) - gamma * P;
  Eigen::PartialPivLU<Matrix> lu(sys);
  Vector v = lu.solve(r);
  Vector res = r - sys * v;
  v += lu.solve(res);
  if (!v.allFinite()) throw NumericalError("linear solve produced non-finite values");
  double resid = (r + gamma * P * v - v).cwiseAbs().maxCoeff();
  if (resid > 1e-10) throw NumericalError("linear solve residual " + std::to_string(resid) + " above 1e-10");
  return v;
}

inline Vector solve_value_function(const Mdp& m, const Policy& p) {
  return solve_discounted(policy_transition(m, p), policy_reward(m, p), m.gamma);
}

// Q_pi(s,a) = R(s,a) + gamma sum_s' P_a(s,s') V_pi(s').
inline Vector q_from_v(const Mdp& m, const Vector& v) {
  const int S = m.num_states();
  const int A = m.num_actions();
  Vector q(S * A);
  for (int a = 0; a < A; ++a) {
    Vector next = m.P(a) * v;
    for (int s = 0; s < S; ++s) q(s * A + a) = m.rewards(s, a) + m.gamma * next(s);
  }
  return q;
}

inline std::vector<int> greedy_actions(const Mdp& m, const Vector& q) {
  const int S = m.num_states();
  const int A = m.num_actions();
  std::vector<int> out(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    int best = 0;
    for (int a = 1; a < A; ++a)
      if (q(s * A + a) > q(s * A + best)) best = a;
    out[static_cast<std::size_t>(s)] = best;
  }
  return out;
}

struct OptimalQ {
  Vector q;
  std::vector<int> greedy;
  Policy policy;
  long iterations = 0;
};

inline OptimalQ solve_optimal_q(const Mdp& m) {
  validate_mdp(m);
  Vector q = Vector::Zero(m.q_size());
  long it = 0;
  for (; it < 1000000; ++it) {
    Vector next = bellman_optimality(q, m);
    double delta = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (delta <= 1e-12) break;
  }
  OptimalQ out;
  out.greedy = greedy_actions(m, q);
  out.policy = deterministic_policy(out.greedy, m.num_actions());
  out.q = std::move(q);
  out.iterations = it + 1;
  return out;
}

// Garnet-style generator: each (s,a) moves to `branching` distinct successors
// with Dirichlet(1) weights; rewards uniform on [0,1].
inline Mdp random_mdp(std::uint64_t seed, int S, int A, int branching, double gamma = 0.9) {
  if (S <= 0 || A <= 0) throw DimensionError("random_mdp: need positive sizes");
  if (branching < 1 || branching > S) throw Error("random_mdp: branching out of range [1, |S|]");
  Rng rng(child_seed(seed, "random_mdp"));
  Mdp m;
  m.gamma = gamma;
  m.transitions.assign(static_cast<std::size_t>(A), Matrix::Zero(S, S));
  std::vector<int> perm(static_cast<std::size_t>(S));
  for (int a = 0; a < A; ++a) {
    for (int s = 0; s < S; ++s) {
      for (int i = 0; i < S; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < branching; ++i) {
        int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(S - i)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      std::vector<double> w(static_cast<std::size_t>(branching));
      double total = 0.0;
      for (auto& x : w) total += (x = rng.standard_exponential());
      for (int i = 0; i < branching; ++i)
        m.transitions[static_cast<std::size_t>(a)](s, perm[static_cast<std::size_t>(i)]) =
            w[static_cast<std::size_t>(i)] / total;
    }
  }
  m.rewards.resize(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) m.rewards(s, a) = rng.uniform();
  validate_mdp(m);
  return m;
}

struct Step {
  int state;
  int action;
  double reward;
  int next_state;
};

struct Trajectory {
  std::vector<Step> steps;
  std::uint64_t seed = 0;
};

using StartSpec = std::variant<int, Vector>;

// Streaming sampler. One uniform for the action, one for the next state, in
// that order; the start distribution (if any) consumes the first draw.
class TrajectoryStream {
 public:
  TrajectoryStream(const Mdp& m, const Policy& p, const StartSpec& start, std::uint64_t seed)
      : mdp_(&m), pol_(&p), rng_(seed) {
    check_policy_dims(m, p);
    if (std::holds_alternative<int>(start)) {
      state_ = std::get<int>(start);
      if (state_ < 0 || state_ >= m.num_states()) throw DimensionError("trajectory: start state out of range");
    } else {
      const Vector& d = std::get<Vector>(start);
      if (d.size() != m.num_states()) throw DimensionError("trajectory: start distribution has wrong length");
      state_ = sample_discrete(rng_, d);
    }
  }

  int state() const { return state_; }

  Step next() {
    Step st;
    st.state = state_;
    st.action = sample_row(rng_, pol_->probs, state_);
    st.reward = mdp_->rewards(state_, st.action);
    st.next_state = sample_row(rng_, mdp_->P(st.action), state_);
    state_ = st.next_state;
    return st;
  }

 private:
  const Mdp* mdp_;
  const Policy* pol_;
  Rng rng_;
  int state_ = 0;
};

inline Trajectory sample_trajectory(const Mdp& m, const Policy& p, const StartSpec& start, long length,
                                    std::uint64_t seed) {
  Trajectory t;
  t.seed = seed;
  TrajectoryStream stream(m, p, start, seed);
  t.steps.reserve(static_cast<std::size_t>(std::max(0L, length)));
  for (long k = 0; k < length; ++k) t.steps.push_back(stream.next());
  return t;
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_mdp(std::ostream& os, const Mdp& m) {
  const int S = m.num_states();
  const int A = m.num_actions();
  os << "mdp " << S << ' ' << A << ' ' << format_double(m.gamma) << '\n';
  for (int a = 0; a < A; ++a)
    for (int s = 0; s < S; ++s) {
      for (int j = 0; j < S; ++j) os << (j ? " " : "") << format_double(m.P(a)(s, j));
      os << '\n';
    }
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) os << (a ? " " : "") << format_double(m.rewards(s, a));
    os << '\n';
  }
}

inline Mdp read_mdp(std::istream& is) {
  std::string tag;
  int S = 0, A = 0;
  double gamma = 0.0;
  if (!(is >> tag >> S >> A >> gamma) || tag != "mdp") throw IoError("mdp file: bad header");
  if (S <= 0 || A <= 0) throw IoError("mdp file: bad sizes");
  Mdp m;
  m.gamma = gamma;
  m.transitions.assign(static_cast<std::size_t>(A), Matrix(S, S));
  for (int a = 0; a < A; ++a)
    for (int s = 0; s < S; ++s)
      for (int j = 0; j < S; ++j)
        if (!(is >> m.transitions[static_cast<std::size_t>(a)](s, j)))
          throw IoError("mdp file: truncated transition block");
  m.rewards.resize(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      if (!(is >> m.rewards(s, a))) throw IoError("mdp file: truncated rewards");
  validate_mdp(m);
  return m;
}

inline void save_mdp(const std::string& path, const Mdp& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_mdp(os, m);
}

inline Mdp load_mdp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_mdp(is);
}

}  // namespace salab
