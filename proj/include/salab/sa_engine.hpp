#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "salab/error.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"
#include "salab/operators.hpp"
#include "salab/parallel.hpp"
#include "salab/rng.hpp"

namespace salab {

enum class StepsizeKind { constant, linear, polynomial };

// alpha_k = alpha / (k + h)^xi with xi = 0, 1 or in (0,1).
struct StepsizeSchedule {
  StepsizeKind kind = StepsizeKind::constant;
  double alpha = 0.1;
  double h = 0.0;
  double xi = 0.0;

  static StepsizeSchedule constant(double a) { return {StepsizeKind::constant, a, 0.0, 0.0}; }
  static StepsizeSchedule linear(double a, double h) { return {StepsizeKind::linear, a, h, 1.0}; }
  static StepsizeSchedule polynomial(double a, double h, double xi) { return {StepsizeKind::polynomial, a, h, xi}; }

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw StepsizeError("stepsize: alpha must be nonnegative");
    if (kind != StepsizeKind::constant && !(h > 0.0)) throw StepsizeError("stepsize: h must be positive");
    if (kind == StepsizeKind::polynomial && !(xi > 0.0 && xi < 1.0)) throw StepsizeError("stepsize: xi must lie in (0,1)");
  }
};

inline double stepsize_at(const StepsizeSchedule& s, long k) {
  switch (s.kind) {
    case StepsizeKind::constant: return s.alpha;
    case StepsizeKind::linear: return s.alpha / (static_cast<double>(k) + s.h);
    case StepsizeKind::polynomial: return s.alpha / std::pow(static_cast<double>(k) + s.h, s.xi);
  }
  return s.alpha;
}

inline const char* stepsize_kind_name(StepsizeKind k) {
  switch (k) {
    case StepsizeKind::constant: return "constant";
    case StepsizeKind::linear: return "linear";
    case StepsizeKind::polynomial: return "polynomial";
  }
  return "?";
}

// sum_{j=k1}^{k2} alpha_j (empty when k2 < k1).
inline double stepsize_sum(const StepsizeSchedule& s, long k1, long k2) {
  if (k2 < k1) return 0.0;
  if (s.kind == StepsizeKind::constant) return s.alpha * static_cast<double>(k2 - k1 + 1);
  long double acc = 0.0L;
  for (long j = k1; j <= k2; ++j) acc += stepsize_at(s, j);
  return static_cast<double>(acc);
}

inline double stepsize_threshold(double A, double phi2, double phi3) {
  return std::min(phi2 / (phi3 * A * A), 1.0 / (4.0 * A));
}

struct StepsizeCheck {
  bool ok = true;
  long first_violation = -1;
};

// Checks alpha_{k - t_k, k-1} <= min(phi2/(phi3 A^2), 1/(4A)) for every
// k <= horizon with k >= t_k, where t_k = mixing(alpha_k).
inline StepsizeCheck check_stepsize_condition(const StepsizeSchedule& s, double A, double phi2, double phi3,
                                              const std::function<long(double)>& mixing, long horizon) {
  const double thr = stepsize_threshold(A, phi2, phi3);
  StepsizeCheck out;
  if (s.kind == StepsizeKind::constant) {
    long t = mixing(s.alpha);
    if (t <= horizon && s.alpha * static_cast<double>(t) > thr) {
      out.ok = false;
      out.first_violation = t;
    }
    return out;
  }
  std::vector<long double> prefix(static_cast<std::size_t>(horizon) + 1, 0.0L);
  for (long j = 0; j < horizon; ++j) prefix[static_cast<std::size_t>(j) + 1] = prefix[static_cast<std::size_t>(j)] + stepsize_at(s, j);
  for (long k = 0; k <= horizon; ++k) {
    long t = mixing(stepsize_at(s, k));
    if (k < t) continue;
    double sum = static_cast<double>(prefix[static_cast<std::size_t>(k)] - prefix[static_cast<std::size_t>(k - t)]);
    if (sum > thr) {
      out.ok = false;
      out.first_violation = k;
      return out;
    }
  }
  return out;
}

// Largest alpha < 1 with alpha * t_alpha <= min(phi2/(phi3 A^2), 1/(4A)),
// t_alpha = ceil((log(1/alpha) + log(C/sigma)) / log(1/sigma)). t_alpha is a
// step function of alpha, so the search walks its pieces from the top; on
// each piece the feasible set is an interval with a closed-form end.
inline double max_constant_stepsize(double A, double phi2, double phi3, double C, double sigma) {
  if (!(A > 0.0 && phi2 > 0.0 && phi3 > 0.0 && C > 0.0)) throw Error("max_constant_stepsize: constants must be positive");
  if (!(sigma > 0.0 && sigma < 1.0)) throw Error("max_constant_stepsize: sigma must lie in (0,1)");
  const double thr = stepsize_threshold(A, phi2, phi3);
  const MixingModel mm{C, sigma};
  const double L = std::log(1.0 / sigma);
  const double c = std::log(C / sigma);
  const double below_one = std::nextafter(1.0, 0.0);
  auto feasible = [&](double a) { return a * static_cast<double>(mm.t(a)) <= thr; };
  for (long t = 0; t < 100000000; ++t) {
    double hi = (t == 0) ? std::numeric_limits<double>::infinity() : std::exp(c - L * static_cast<double>(t - 1));
    double lo = std::exp(c - L * static_cast<double>(t));
    double cand = std::min({below_one, std::nextafter(hi, 0.0), t == 0 ? below_one : thr / static_cast<double>(t)});
    if (cand < lo) continue;
    // Floating-point rounding at the piece edges: step down until it holds.
    while (!feasible(cand)) cand = std::nextafter(cand, 0.0) * (1.0 - 1e-15);
    return cand;
  }
  throw NumericalError("max_constant_stepsize: no admissible stepsize found");
}

// ---------------------------------------------------------------------------
// Martingale noise

enum class NoiseShape { none, bounded_symmetric };

// bounded_symmetric: w_i = zeta_i (A2 |x|_c + B2) / |1|_c with independent
// signs zeta_i, so |w|_c = A2 |x|_c + B2 exactly and E[w | past] = 0.
struct MartingaleNoise {
  NoiseShape shape = NoiseShape::none;
  double A2 = 0.0;
  double B2 = 0.0;

  bool active() const { return shape != NoiseShape::none; }

  void draw(const Vector& x, NormKind k, Rng& rng, Vector& w) const {
    if (shape == NoiseShape::none) {
      w.setZero();
      return;
    }
    double ones = norm(Vector::Ones(x.size()), k);
    double scale = (A2 * norm(x, k) + B2) / ones;
    for (Eigen::Index i = 0; i < x.size(); ++i) w(i) = rng.sign() * scale;
  }
};

// ---------------------------------------------------------------------------
// Noise-state samplers

class WindowSampler {
 public:
  virtual ~WindowSampler() = default;
  virtual const Window& next() = 0;
};

// Slides a window of `m` transitions along one simulated trajectory. Y_0 is
// the first m transitions; each call afterwards shifts by one step.
class TrajectoryWindowSampler : public WindowSampler {
 public:
  TrajectoryWindowSampler(const Mdp& mdp, const Policy& pol, int m, bool last_action_only, const StartSpec& start,
                          std::uint64_t seed)
      : stream_(mdp, pol, start, seed), m_(m), last_only_(last_action_only) {
    if (m < 1) throw Error("window sampler: need at least one transition");
  }

  // Starts from the stationary law of the state chain under `pol`.
  TrajectoryWindowSampler(const Mdp& mdp, const Policy& pol, int m, bool last_action_only, std::uint64_t seed)
      : TrajectoryWindowSampler(mdp, pol, m, last_action_only,
                                StartSpec{stationary_distribution(make_chain(policy_transition(mdp, pol)))}, seed) {}

  const Window& next() override {
    if (!primed_) {
      cur_.states.assign(1, stream_.state());
      for (int i = 0; i < m_; ++i) push(stream_.next());
      primed_ = true;
    } else {
      cur_.states.erase(cur_.states.begin());
      if (!last_only_) cur_.actions.erase(cur_.actions.begin());
      push(stream_.next());
    }
    return cur_;
  }

 private:
  void push(const Step& st) {
    cur_.states.push_back(st.next_state);
    if (last_only_)
      cur_.actions.assign(1, st.action);
    else
      cur_.actions.push_back(st.action);
  }

  TrajectoryStream stream_;
  int m_;
  bool last_only_;
  bool primed_ = false;
  Window cur_;
};

inline std::unique_ptr<WindowSampler> make_window_sampler(const AsyncOperator& op, std::uint64_t seed,
                                                          std::optional<int> start_from = std::nullopt) {
  if (start_from)
    return std::make_unique<TrajectoryWindowSampler>(op.mdp(), op.sampling_policy(), op.window_transitions(),
                                                     op.last_action_only(), StartSpec{*start_from}, seed);
  return std::make_unique<TrajectoryWindowSampler>(op.mdp(), op.sampling_policy(), op.window_transitions(),
                                                   op.last_action_only(), seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

// {0, 1, 2, 4, 8, ...} plus the horizon.
inline std::vector<long> geometric_checkpoints(long horizon) {
  std::vector<long> out{0};
  for (long k = 1; k < horizon; k *= 2) out.push_back(k);
  if (horizon > 0) out.push_back(horizon);
  return out;
}

// `count` evenly spaced points from 0 to horizon inclusive.
inline std::vector<long> linear_checkpoints(long horizon, long count) {
  if (count < 2) return {0, horizon};
  std::vector<long> out;
  for (long i = 0; i < count; ++i) {
    long k = static_cast<long>(std::llround(static_cast<double>(horizon) * static_cast<double>(i) / static_cast<double>(count - 1)));
    if (out.empty() || k > out.back()) out.push_back(k);
  }
  return out;
}

inline std::vector<long> every_checkpoint(long horizon) {
  std::vector<long> out(static_cast<std::size_t>(horizon) + 1);
  for (long k = 0; k <= horizon; ++k) out[static_cast<std::size_t>(k)] = k;
  return out;
}

inline void validate_checkpoints(const std::vector<long>& cps, long horizon) {
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i] < 0 || cps[i] > horizon) throw Error("checkpoint outside [0, horizon]");
    if (i && cps[i] <= cps[i - 1]) throw Error("checkpoints must be strictly increasing");
  }
}

inline constexpr double kOverflowLimit = 1e12;

// ---------------------------------------------------------------------------
// The SA recursion

struct SaRunLog {
  std::vector<long> checkpoints;
  std::vector<Vector> iterates;
  std::vector<Window> windows;  // only when requested
  StepsizeSchedule schedule;
  std::uint64_t seed = 0;
};

struct SaOptions {
  bool record_windows = false;
};

// x_{k+1} = x_k + alpha_k (F(x_k, Y_k) - x_k + w_k).
inline SaRunLog run_sa(const AsyncOperator& op, WindowSampler& sampler, const StepsizeSchedule& schedule,
                       const MartingaleNoise& noise, const Vector& x0, long horizon, const std::vector<long>& checkpoints,
                       std::uint64_t seed, SaOptions opts = {}) {
  if (x0.size() != op.dimension()) throw DimensionError("run_sa: x0 has wrong length");
  schedule.validate();
  validate_checkpoints(checkpoints, horizon);
  SaRunLog log;
  log.checkpoints = checkpoints;
  log.schedule = schedule;
  log.seed = seed;
  Rng noise_rng(child_seed(seed, "noise"));
  Vector x = x0, d(x0.size()), w = Vector::Zero(x0.size());
  const NormKind nk = op.contraction_norm();
  std::size_t next_cp = 0;
  for (long k = 0;; ++k) {
    if (next_cp < checkpoints.size() && checkpoints[next_cp] == k) {
      log.iterates.push_back(x);
      ++next_cp;
    }
    if (k == horizon) break;
    const Window& y = sampler.next();
    if (opts.record_windows) log.windows.push_back(y);
    op.increment(x, y, d);
    const double a = stepsize_at(schedule, k);
    if (noise.active()) {
      noise.draw(x, nk, noise_rng, w);
      x += a * (d + w);
    } else {
      x += a * d;
    }
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kOverflowLimit)
      throw NumericalError("run_sa: iterate overflow at iteration " + std::to_string(k + 1));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Monte-Carlo statistics

// Pairwise summation in fixed index order.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

struct McStat {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline McStat summarize(const std::vector<double>& samples) {
  McStat out;
  const std::size_t n = samples.size();
  if (n == 0) return out;
  out.mean = pairwise_sum(samples.data(), n) / static_cast<double>(n);
  if (n > 1) {
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = (samples[i] - out.mean) * (samples[i] - out.mean);
    double var = pairwise_sum(dev.data(), n) / static_cast<double>(n - 1);
    out.stderr_ = std::sqrt(var / static_cast<double>(n));
  }
  return out;
}

struct McCurve {
  std::vector<long> checkpoints;
  std::vector<double> mean;
  std::vector<double> stderr_;
  long n_runs = 0;
};

// per_run[r][c] -> per-checkpoint mean and standard error.
inline McCurve aggregate_runs(const std::vector<long>& checkpoints, const std::vector<std::vector<double>>& per_run) {
  McCurve out;
  out.checkpoints = checkpoints;
  out.n_runs = static_cast<long>(per_run.size());
  std::vector<double> col(per_run.size());
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    for (std::size_t r = 0; r < per_run.size(); ++r) col[r] = per_run[r][c];
    McStat st = summarize(col);
    out.mean.push_back(st.mean);
    out.stderr_.push_back(st.stderr_);
  }
  return out;
}

inline void write_mse_csv(std::ostream& os, const McCurve& c) {
  os << "k,mse,stderr,n_runs\n";
  for (std::size_t i = 0; i < c.checkpoints.size(); ++i)
    os << c.checkpoints[i] << ',' << format_double(c.mean[i]) << ',' << format_double(c.stderr_[i]) << ',' << c.n_runs
       << '\n';
}

using SamplerFactory = std::function<std::unique_ptr<WindowSampler>(std::uint64_t)>;

inline std::uint64_t run_seed(std::uint64_t base, long r) { return child_seed(base, "run", static_cast<std::uint64_t>(r)); }

// Mean of |x_k - x*|_c^2 over independent runs. Run r uses seed
// run_seed(base_seed, r) for both its trajectory and its noise.
inline McCurve mse_curve(const AsyncOperator& op, const StepsizeSchedule& schedule, const MartingaleNoise& noise,
                         const Vector& x0, long horizon, const std::vector<long>& checkpoints, long num_runs,
                         std::uint64_t base_seed, SamplerFactory factory = nullptr) {
  if (num_runs < 2) throw Error("mse_curve: need at least two runs");
  if (!factory) factory = [&op](std::uint64_t s) { return make_window_sampler(op, s); };
  const Vector& xs = op.fixed_point();
  const NormKind nk = op.contraction_norm();
  std::vector<std::vector<double>> per_run(static_cast<std::size_t>(num_runs));
  parallel_for(static_cast<std::size_t>(num_runs), [&](std::size_t r) {
    std::uint64_t s = run_seed(base_seed, static_cast<long>(r));
    auto sampler = factory(s);
    SaRunLog log = run_sa(op, *sampler, schedule, noise, x0, horizon, checkpoints, s);
    auto& row = per_run[r];
    for (const auto& x : log.iterates) {
      double e = norm(x - xs, nk);
      row.push_back(e * e);
    }
  });
  return aggregate_runs(checkpoints, per_run);
}

// ---------------------------------------------------------------------------
// Iterate drift

enum class DriftResult { holds, violated, inapplicable };

// For k1 <= k <= k2 with alpha_{k1,k2-1} <= 1/(4A):
//   |x_k - x_k1| <= 2 alpha_{k1,k2-1} (A |x_k1| + B)
//   |x_k - x_k1| <= 4 alpha_{k1,k2-1} (A |x_k2| + B)
inline DriftResult iterate_drift_check(const SaRunLog& log, double A, double B, long k1, long k2, NormKind nk,
                                       double tol = 1e-12) {
  if (k2 < k1) throw Error("iterate_drift_check: k2 < k1");
  double asum = stepsize_sum(log.schedule, k1, k2 - 1);
  if (asum > 1.0 / (4.0 * A)) return DriftResult::inapplicable;
  auto find = [&](long k) -> const Vector& {
    auto it = std::lower_bound(log.checkpoints.begin(), log.checkpoints.end(), k);
    if (it == log.checkpoints.end() || *it != k) throw Error("iterate_drift_check: iterate " + std::to_string(k) + " not logged");
    return log.iterates[static_cast<std::size_t>(it - log.checkpoints.begin())];
  };
  const Vector& x1 = find(k1);
  const Vector& x2 = find(k2);
  double b1 = 2.0 * asum * (A * norm(x1, nk) + B);
  double b2 = 4.0 * asum * (A * norm(x2, nk) + B);
  for (std::size_t i = 0; i < log.checkpoints.size(); ++i) {
    long k = log.checkpoints[i];
    if (k < k1 || k > k2) continue;
    double dist = norm(log.iterates[i] - x1, nk);
    if (dist > b1 + tol || dist > b2 + tol) return DriftResult::violated;
  }
  return DriftResult::holds;
}

}  // namespace salab
