#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "salab/error.hpp"
#include "salab/mdp.hpp"
#include "salab/operators.hpp"
#include "salab/rng.hpp"

// Smoothed Lyapunov function for a contraction in |.|_c:
//   M(x) = min_u  1/2 |u|_c^2 + 1/(2 theta) |x - u|_p^2,
// with g(z) = 1/2 |z|_p^2 as the smooth surrogate.

namespace salab {

struct EnvelopeSpec {
  NormKind norm = NormKind::l2;  // contraction norm: l2 or linf
  double theta = 1.0;
  double p = 2.0;
  int d = 1;
  double l_cs = 1.0;  // l_cs |x|_p <= |x|_c <= u_cs |x|_p
  double u_cs = 1.0;
  double L = 1.0;  // smoothness of g with respect to |.|_p

  double l_cm() const { return std::sqrt(1.0 + theta * l_cs * l_cs); }
  double u_cm() const { return std::sqrt(1.0 + theta * u_cs * u_cs); }

  // beta^2 < (1 + theta l_cs^2) / (1 + theta u_cs^2)
  bool admissible(double beta) const { return beta * beta < (1.0 + theta * l_cs * l_cs) / (1.0 + theta * u_cs * u_cs); }
};

inline double smooth_exponent(int d) { return std::max(2.0, 2.0 * std::log(static_cast<double>(d))); }

inline EnvelopeSpec envelope_preset(NormKind norm, double beta, int d) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error("envelope_preset: beta must lie in (0,1)");
  if (d < 1) throw DimensionError("envelope_preset: dimension must be positive");
  EnvelopeSpec s;
  s.norm = norm;
  s.d = d;
  if (norm == NormKind::l2) return s;
  if (norm != NormKind::linf) throw Error("envelope_preset: only l2 and linf contraction norms are supported");
  double r = (1.0 + beta) / (2.0 * beta);
  s.theta = r * r - 1.0;
  s.p = smooth_exponent(d);
  s.u_cs = 1.0;
  s.l_cs = std::pow(static_cast<double>(d), -1.0 / s.p);
  s.L = s.p - 1.0;
  return s;
}

inline void validate_envelope(const EnvelopeSpec& s) {
  if (!(s.theta > 0.0)) throw Error("envelope: theta must be positive");
  if (!(s.p >= 2.0)) throw Error("envelope: p must be at least 2");
  if (s.norm == NormKind::l2 && s.p != 2.0) throw Error("envelope: the l2 envelope needs p = 2");
  if (s.norm != NormKind::l2 && s.norm != NormKind::linf) throw Error("envelope: unsupported contraction norm");
}

namespace detail {

// (sum_i max(|x_i| - t, 0)^p)^{1/p}, scaled to avoid overflow for large p.
inline double shrunk_pnorm(const Vector& x, double t, double p) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x(i)) - t);
  if (m <= 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double r = std::abs(x(i)) - t;
    if (r > 0.0) s += std::pow(r / m, p);
  }
  return m * std::pow(s, 1.0 / p);
}

// d/dt of shrunk_pnorm(x, t, p)^2 / 2.
inline double shrunk_half_sq_derivative(const Vector& x, double t, double p) {
  double h = shrunk_pnorm(x, t, p);
  if (h == 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double r = std::abs(x(i)) - t;
    if (r > 0.0) s += std::pow(r / h, p - 1.0);
  }
  return -h * s;
}

struct LinfMinimizer {
  double t;      // |u*|_inf
  Vector u;      // minimiser
  double value;  // M(x)
};

// With |u|_inf = t fixed, the best u is x clipped to [-t, t]; the remaining
// problem in t is one-dimensional and convex, solved by bisection on its
// derivative t + (1/theta) d/dt[h(t)^2/2].
inline LinfMinimizer minimize_linf(const EnvelopeSpec& s, const Vector& x) {
  const double top = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
  LinfMinimizer out{0.0, Vector::Zero(x.size()), 0.0};
  if (top == 0.0) return out;
  auto deriv = [&](double t) { return t + shrunk_half_sq_derivative(x, t, s.p) / s.theta; };
  double lo = 0.0, hi = top;
  for (int it = 0; it < 200 && hi - lo > 1e-16 * top; ++it) {
    double mid = 0.5 * (lo + hi);
    if (deriv(mid) > 0.0) hi = mid;
    else lo = mid;
  }
  double t = 0.5 * (lo + hi);
  out.t = t;
  out.u = x.cwiseMax(-t).cwiseMin(t);
  double h = shrunk_pnorm(x, t, s.p);
  out.value = 0.5 * t * t + 0.5 * h * h / s.theta;
  return out;
}

// Gradient of g(z) = 1/2 |z|_p^2: |z|_p^{2-p} |z_i|^{p-1} sign(z_i).
inline Vector half_sq_pnorm_gradient(const Vector& z, double p) {
  double nz = vector_p_norm(z, p);
  Vector g = Vector::Zero(z.size());
  if (nz == 0.0) return g;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double r = std::abs(z(i)) / nz;
    g(i) = (z(i) < 0 ? -1.0 : 1.0) * nz * std::pow(r, p - 1.0);
  }
  return g;
}

}  // namespace detail

inline double envelope_value(const EnvelopeSpec& s, const Vector& x) {
  validate_envelope(s);
  if (s.norm == NormKind::l2) return x.squaredNorm() / (2.0 * (1.0 + s.theta));
  return detail::minimize_linf(s, x).value;
}

inline Vector envelope_gradient(const EnvelopeSpec& s, const Vector& x) {
  validate_envelope(s);
  if (s.norm == NormKind::l2) return x / (1.0 + s.theta);
  auto mn = detail::minimize_linf(s, x);
  return detail::half_sq_pnorm_gradient(x - mn.u, s.p) / s.theta;
}

// Central differences, step h.
inline Vector envelope_gradient_fd(const EnvelopeSpec& s, const Vector& x, double h = 1e-6) {
  Vector g(x.size()), xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (envelope_value(s, xp) - envelope_value(s, xm)) / (2.0 * h);
    xp(i) = xm(i) = x(i);
  }
  return g;
}

struct PhiConstants {
  double phi1;
  double phi2;
  double phi3;
  EnvelopeSpec spec;
};

inline PhiConstants phi_constants_for(const EnvelopeSpec& s, double beta) {
  const double lu = 1.0 + s.theta * s.u_cs * s.u_cs;
  const double ll = 1.0 + s.theta * s.l_cs * s.l_cs;
  PhiConstants c;
  c.phi1 = lu / ll;
  c.phi2 = 1.0 - beta * std::sqrt(c.phi1);
  c.phi3 = 114.0 * s.L * lu / (s.theta * s.l_cs * s.l_cs);
  c.spec = s;
  return c;
}

// Constants under the preset envelope, checked against the closed-form
// envelopes: l2 -> phi1 <= 1, phi2 >= 1-beta, phi3 <= 228;
// linf (d >= 2) -> phi1 <= 3, phi2 >= (1-beta)/2, phi3 <= 456 e log(d)/(1-beta).
inline PhiConstants phi_constants(NormKind norm, double beta, int d) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error("phi_constants: beta must lie in (0,1)");
  PhiConstants c = phi_constants_for(envelope_preset(norm, beta, d), beta);
  const double tol = 1e-12;
  bool ok = true;
  if (norm == NormKind::l2) {
    ok = c.phi1 <= 1.0 + tol && c.phi2 >= 1.0 - beta - tol && c.phi3 <= 228.0 + tol;
  } else if (d >= 2) {
    ok = c.phi1 <= 3.0 + tol && c.phi2 >= (1.0 - beta) / 2.0 - tol &&
         c.phi3 <= 456.0 * M_E * std::log(static_cast<double>(d)) / (1.0 - beta) * (1.0 + tol);
  }
  if (!ok) throw NumericalError("phi_constants: constants fall outside their closed-form envelopes");
  return c;
}

// Smallest value of M(x) + <grad M(x), y - x> + L/(2 theta) |y - x|_p^2 - M(y)
// over random pairs; nonnegative when M is (L/theta)-smooth in |.|_p.
inline double smoothness_certificate(const EnvelopeSpec& s, int num_pairs, std::uint64_t seed) {
  validate_envelope(s);
  Rng rng(seed);
  double worst = std::numeric_limits<double>::infinity();
  Vector x(s.d), y(s.d);
  for (int t = 0; t < num_pairs; ++t) {
    double scale = std::pow(10.0, rng.uniform(-2.0, 1.0));
    for (int i = 0; i < s.d; ++i) {
      x(i) = scale * rng.uniform(-1.0, 1.0);
      y(i) = scale * rng.uniform(-1.0, 1.0);
    }
    double mx = envelope_value(s, x), my = envelope_value(s, y);
    double dn = vector_p_norm(y - x, s.p);
    double slack = mx + envelope_gradient(s, x).dot(y - x) + s.L / (2.0 * s.theta) * dn * dn - my;
    worst = std::min(worst, slack);
  }
  return worst;
}

}  // namespace salab
