#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "salab/bounds.hpp"

using namespace salab;
using salab::testing::make_mdp;
using salab::testing::mat2;

TEST(SaConstant, WorkedPoint) {
  auto v = sa_constant_formula(1.0, 4.0, 0.5, 228.0, 1.0, 0.1, 3, 13);
  EXPECT_NEAR(v.total, 139.19494775695351562, 1e-10);
  EXPECT_DOUBLE_EQ(v.total, v.bias + v.variance);
  EXPECT_THROW(sa_constant_formula(1.0, 4.0, 0.5, 228.0, 1.0, 0.1, 3, 2), Error);
}

TEST(SaConstant, LimitIsVarianceTerm) {
  auto v = sa_constant_formula(1.0, 4.0, 0.5, 228.0, 1.0, 0.1, 3, 100000);
  EXPECT_NEAR(v.total, 228.0 / 0.5 * 0.1 * 3, 1e-9);
}

TEST(SaConstant, CheckedFormRejectsLargeAlpha) {
  BoundInputs in;
  in.phi2 = 0.5;
  in.phi3 = 228.0;
  in.A = 1.0;
  in.mixing = MixingModel{0.5, 0.5};
  EXPECT_THROW(bound_sa_constant(in, 0.1, 100), StepsizeError);
  double a = max_constant_stepsize(1.0, 0.5, 228.0, 0.5, 0.5);
  auto v = bound_sa_constant(in, a, 1000);
  EXPECT_GT(v.total, 0.0);
}

TEST(SaLinear, RegimesAndBranches) {
  // phi2 alpha below, at and above one.
  for (double alpha : {1.0, 2.0, 4.0}) {
    auto v = sa_linear_formula(1.0, 1.0, 0.5, 1.0, 1.0, alpha, 10.0, 5, 4, 1000);
    EXPECT_GT(v.bias, 0.0);
    EXPECT_GT(v.variance, 0.0);
  }
  auto at_one = sa_linear_formula(1.0, 1.0, 0.5, 1.0, 1.0, 2.0, 10.0, 5, 4, 1000);
  EXPECT_NEAR(at_one.bias, 15.0 / 1010.0, 1e-15);
  EXPECT_NEAR(at_one.variance, 8.0 * 4.0 * 4.0 * std::log(1010.0) / 1010.0, 1e-12);
}

TEST(SaPolynomial, BiasIsOneAtFirstIteration) {
  auto v = sa_polynomial_formula(2.0, 3.0, 0.5, 1.0, 1.0, 1.0, 100.0, 0.5, 7, 4, 7);
  EXPECT_DOUBLE_EQ(v.bias, 6.0);
  EXPECT_DOUBLE_EQ(v.variance, 4.0 * 1.0 * 1.0 / 0.5 * 4.0 / std::sqrt(107.0));
}

namespace {

Mdp zero_mdp() {
  return make_mdp({mat2(0.5, 0.5, 0.5, 0.5), mat2(0.5, 0.5, 0.5, 0.5)}, Matrix::Zero(2, 2), 0.9);
}

}  // namespace

TEST(QBound, ZeroMdpConstants) {
  Mdp m = zero_mdp();
  auto fb = q_constant_bound(m, uniform_policy(2, 2), Vector::Zero(4), MixingModel{1.0, 0.5});
  EXPECT_DOUBLE_EQ(fb.c1(), 3.0);
  EXPECT_DOUBLE_EQ(fb.c2(), 912.0 * M_E);
  auto t = fb.terms(1e-6);
  EXPECT_DOUBLE_EQ(t.beta, 1.0 - 0.25 * 0.1);
}

TEST(QBound, AdmissibleStepsizeAndCurve) {
  Mdp m = zero_mdp();
  auto fb = q_constant_bound(m, uniform_policy(2, 2), Vector::Ones(4), MixingModel{1.0, 0.5});
  double a = fb.max_stepsize();
  EXPECT_TRUE(fb.admissible(a));
  EXPECT_FALSE(fb.admissible(std::min(0.999, a * 4.0)));
  long k0 = fb.start(a);
  auto c = fb.curve(a, {0, k0, k0 + 10, k0 + 100000});
  ASSERT_EQ(c.k.size(), 3u);
  EXPECT_GT(c.values[0].total, c.values[2].total);
  EXPECT_THROW(fb.at(0.5, k0), StepsizeError);
}

TEST(QBound, RejectsSingleCoordinate) {
  Mdp m = salab::testing::scalar_mdp(0.5, 0.5);
  EXPECT_THROW(q_constant_bound(m, uniform_policy(1, 1), Vector::Zero(1), MixingModel{}), DimensionError);
}

TEST(VTraceBound, ThresholdIsHalfTheGenericOne) {
  Mdp m = random_mdp(4, 4, 2, 2, 0.8);
  VTraceParams p{2, 1.0, 1.0, uniform_policy(4, 2), uniform_policy(4, 2)};
  auto fb = vtrace_constant_bound(m, p, Vector::Zero(4), MixingModel{1.0, 0.5});
  auto t = fb.terms(1e-4);
  double generic = t.phi2 / (t.phi3 * t.A * t.A);
  EXPECT_NEAR(t.threshold, generic / 2.0, 1e-15 * generic);
  EXPECT_EQ(t.bias_start, (MixingModel{1.0, 0.5}.t(1e-4) + 2));
}

TEST(NStepBound, ThresholdMatchesGenericConstants) {
  Mdp m = random_mdp(5, 4, 2, 2, 0.8);
  auto fb = nstep_constant_bound(m, uniform_policy(4, 2), 3, Vector::Zero(4), MixingModel{1.0, 0.5});
  auto t = fb.terms(1e-4);
  EXPECT_NEAR(t.threshold, t.phi2 / (t.phi3 * t.A * t.A), 1e-15);
  double a = fb.max_stepsize();
  EXPECT_TRUE(fb.admissible(a));
}

TEST(TdLambdaBound, MaxStepsizeIsAdmissible) {
  Mdp m = random_mdp(6, 4, 2, 2, 0.8);
  auto fb = tdlambda_constant_bound(m, uniform_policy(4, 2), 0.5, Vector::Zero(4), MixingModel{1.0, 0.5});
  double a = fb.max_stepsize();
  EXPECT_TRUE(fb.admissible(a));
  auto t = fb.terms(a);
  EXPECT_EQ(t.bias_start, (MixingModel{1.0, 0.5}.t(a) + 2L * tdlambda_truncation_level(0.8, 0.5, a) + 1));
  EXPECT_THROW(tdlambda_constant_bound(m, uniform_policy(4, 2), 1.0, Vector::Zero(4), MixingModel{}), Error);
}

TEST(Diminishing, QLinearExponentTwo) {
  Mdp m = zero_mdp();
  Policy b = uniform_policy(2, 2);
  const double beta = q_beta(m, b);
  auto s = StepsizeSchedule::linear(4.0 / (1.0 - beta), 1.0);
  MixingModel mm{1.0, 0.5};
  auto fb = q_constant_bound(m, b, Vector::Zero(4), mm);
  auto t = fb.terms(0.5);
  s.h = min_offset_h(s, t.A, t.phi2, t.phi3, mm, 2000);
  auto db = rl_diminishing_bound(Family::q_learning, m, b, b, nullptr, 1, Vector::Zero(4), s, mm, 2000);
  long K = db.K_prime;
  auto v1 = db.at(K + 100), v2 = db.at(K + 200);
  double r = (K + 100 + s.h) / (K + 200 + s.h);
  EXPECT_NEAR(v2.bias / v1.bias, r * r, 1e-12);
  EXPECT_THROW(db.at(K - 1), Error);
}

TEST(Diminishing, ConditionFailureNamesOffset) {
  Mdp m = zero_mdp();
  Policy b = uniform_policy(2, 2);
  auto s = StepsizeSchedule::linear(4.0 / (1.0 - q_beta(m, b)), 1.0);
  try {
    rl_diminishing_bound(Family::q_learning, m, b, b, nullptr, 1, Vector::Zero(4), s, MixingModel{1.0, 0.5}, 2000);
    FAIL() << "expected a stepsize error";
  } catch (const StepsizeError& e) {
    EXPECT_NE(std::string(e.what()).find("h = "), std::string::npos);
  }
}

TEST(SampleComplexity, Scalings) {
  double base = sample_complexity_q(0.1, 0.9, 0.2);
  double half_eps = sample_complexity_q(0.05, 0.9, 0.2);
  double l1 = std::log(10.0), l2 = std::log(20.0);
  EXPECT_NEAR(half_eps / base, 4.0 * l2 * l2 / (l1 * l1), 1e-9);
  EXPECT_NEAR(sample_complexity_q(0.1, 0.9, 0.1) / base, 8.0, 1e-9);
  EXPECT_NEAR(sample_complexity_q(0.1, 0.99, 0.2) / base, 1e5, 1e-4);
  EXPECT_THROW(sample_complexity_q(0.0, 0.9, 0.2), Error);
  double n1 = sample_complexity_nstep(0.1, 0.9, 1, 0.2, 5), n4 = sample_complexity_nstep(0.1, 0.9, 4, 0.2, 5);
  EXPECT_NEAR(n4 / n1, nstep_factor(0.9, 4) / nstep_factor(0.9, 1), 1e-12);
  EXPECT_GT(sample_complexity_vtrace(0.1, 0.9, 2, 1.0, 1.0, 0.5, 0.2), 0.0);
}

TEST(OptimalN, FrozenValues) {
  EXPECT_EQ(optimal_n(0.9).argmin, 12);
  EXPECT_EQ(optimal_n(0.9).estimate, 9);
  EXPECT_EQ(optimal_n(0.3).argmin, 1);
  EXPECT_EQ(optimal_n(0.3).estimate, 1);
  EXPECT_EQ(optimal_n(0.5).argmin, 2);
  EXPECT_EQ(optimal_n(0.7).argmin, 4);
  EXPECT_EQ(optimal_n(0.7).estimate, 3);
  EXPECT_EQ(optimal_n(0.95).argmin, 24);
  EXPECT_EQ(optimal_n(0.95).estimate, 19);
  EXPECT_NEAR(nstep_factor(0.3, 1), 2.0408163265306122449, 1e-14);
  EXPECT_NEAR(nstep_factor(0.3, 2), 2.4151672503320854969, 1e-14);
  for (double g : {0.5, 0.7, 0.9, 0.95}) {
    auto o = optimal_n(g);
    double ratio = static_cast<double>(o.estimate) / o.argmin;
    EXPECT_GE(ratio, 0.5);
    EXPECT_LE(ratio, 2.0);
  }
  EXPECT_THROW(optimal_n(1.0), Error);
}

TEST(BoundCsv, Layout) {
  BoundCurve c{{3}, {make_bound(1.0, 0.5)}};
  std::ostringstream os;
  write_bound_csv(os, c);
  EXPECT_EQ(os.str(), "k,bias,variance,total\n3,1,0.5,1.5\n");
}
