#include <gtest/gtest.h>

#include <cmath>

#include "salab/lyapunov.hpp"
#include "salab/rng.hpp"

using namespace salab;

TEST(Envelope, L2ClosedForm) {
  auto s = envelope_preset(NormKind::l2, 0.5, 2);
  Vector x(2);
  x << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(envelope_value(s, x), 6.25);
  Vector g = envelope_gradient(s, x);
  EXPECT_DOUBLE_EQ(g(0), 1.5);
  EXPECT_DOUBLE_EQ(g(1), 2.0);
  EXPECT_EQ(envelope_value(s, Vector::Zero(2)), 0.0);
}

TEST(Envelope, LinfSandwich) {
  const double beta = 0.8;
  auto s = envelope_preset(NormKind::linf, beta, 4);
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    Vector x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-5.0, 5.0);
    double m = envelope_value(s, x);
    double c = x.lpNorm<Eigen::Infinity>();
    double lo = 0.5 * c * c / (s.u_cm() * s.u_cm());
    double hi = 0.5 * c * c / (s.l_cm() * s.l_cm());
    EXPECT_GE(m, lo * (1.0 - 1e-9));
    EXPECT_LE(m, hi * (1.0 + 1e-9));
  }
}

TEST(Envelope, LinfGradientMatchesDifferences) {
  auto s = envelope_preset(NormKind::linf, 0.7, 4);
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    Vector x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-2.0, 2.0);
    Vector g = envelope_gradient(s, x), fd = envelope_gradient_fd(s, x);
    EXPECT_LT((g - fd).lpNorm<Eigen::Infinity>(), 1e-4);
  }
}

TEST(Envelope, RejectsBadBeta) {
  EXPECT_THROW(envelope_preset(NormKind::linf, 1.0, 3), Error);
  EXPECT_THROW(envelope_preset(NormKind::l2, 0.0, 3), Error);
}

TEST(Phi, L2Constants) {
  auto c = phi_constants(NormKind::l2, 0.5, 5);
  EXPECT_DOUBLE_EQ(c.phi1, 1.0);
  EXPECT_DOUBLE_EQ(c.phi2, 0.5);
  EXPECT_LE(c.phi3, 228.0);
}

TEST(Phi, LinfEnvelopesAcrossBeta) {
  for (int d : {2, 5, 15, 100})
    for (double beta = 0.05; beta < 1.0; beta += 0.05) {
      auto c = phi_constants(NormKind::linf, beta, d);
      EXPECT_LE(c.phi1, 3.0 + 1e-12);
      EXPECT_GE(c.phi2, (1.0 - beta) / 2.0 - 1e-12);
      EXPECT_GT(c.phi2, 0.0);
      EXPECT_LT(c.phi2, 1.0);
      EXPECT_LE(c.phi3, 456.0 * M_E * std::log(d) / (1.0 - beta) * (1.0 + 1e-12));
      EXPECT_TRUE(c.spec.admissible(beta));
    }
}

TEST(Smoothness, CertificateNonnegative) {
  auto s = envelope_preset(NormKind::linf, 0.9, 8);
  EXPECT_GE(smoothness_certificate(s, 10000, 5), -1e-8);
  auto s2 = envelope_preset(NormKind::l2, 0.9, 8);
  s2.L = 1.0;
  EXPECT_GE(smoothness_certificate(s2, 2000, 6), -1e-10);
}

TEST(Smoothness, SlackVanishesAtCoincidentPoints) {
  auto s = envelope_preset(NormKind::linf, 0.9, 8);
  Vector x = Vector::LinSpaced(8, -1.0, 2.0);
  double slack = envelope_value(s, x) + envelope_gradient(s, x).dot(x - x) - envelope_value(s, x);
  EXPECT_EQ(slack, 0.0);
}
