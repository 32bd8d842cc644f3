#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "salab/algorithms.hpp"

using namespace salab;
using namespace salab::testing;

TEST(QLearning, ScalarRecursion) {
  auto log = run_q_learning(scalar_mdp(1.0, 0.5), uniform_policy(1, 1), StepsizeSchedule::constant(1.0), Vector::Zero(1),
                            4, every_checkpoint(4), 1);
  EXPECT_DOUBLE_EQ(log.iterates[1](0), 1.0);
  EXPECT_DOUBLE_EQ(log.iterates[2](0), 1.5);
  EXPECT_DOUBLE_EQ(log.iterates[4](0), 1.875);
}

TEST(QLearning, ZeroStepsizeFreezes) {
  Mdp m = random_mdp(3, 3, 2, 3, 0.9);
  Vector q0 = Vector::LinSpaced(6, 0, 1);
  auto log = run_q_learning(m, uniform_policy(3, 2), StepsizeSchedule::constant(0.0), q0, 100, geometric_checkpoints(100), 2);
  for (const auto& q : log.iterates) EXPECT_TRUE(q == q0);
}

TEST(QLearning, ConvergesWithDiminishingStepsize) {
  Mdp m = random_mdp(8, 3, 2, 3, 0.7);
  auto log = run_q_learning(m, uniform_policy(3, 2), StepsizeSchedule::linear(20.0, 100.0), Vector::Zero(6), 300000,
                            {0, 300000}, 4);
  EXPECT_LE((log.iterates.back() - solve_optimal_q(m).q).cwiseAbs().maxCoeff(), 0.1);
}

TEST(VTrace, ReducesToNStepOnSameTrajectory) {
  Mdp m = random_mdp(12, 4, 2, 3, 0.9);
  Policy pi = random_policy(4, 4, 2, 0.1);
  auto cps = geometric_checkpoints(20000);
  auto s = StepsizeSchedule::constant(0.05);
  auto a = run_vtrace(m, VTraceParams{3, 1.0, 1.0, pi, pi}, s, Vector::Zero(4), 20000, cps, 9);
  auto b = run_nstep_td(m, pi, 3, s, Vector::Zero(4), 20000, cps, 9);
  for (std::size_t i = 0; i < cps.size(); ++i) EXPECT_LE((a.iterates[i] - b.iterates[i]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VTrace, ZeroStepsizeFreezes) {
  Mdp m = random_mdp(12, 4, 2, 3, 0.9);
  Policy pi = random_policy(4, 4, 2, 0.1);
  Vector v0 = Vector::Constant(4, 0.3);
  auto log = run_vtrace(m, VTraceParams{2, 1.0, 1.0, pi, uniform_policy(4, 2)}, StepsizeSchedule::constant(0.0), v0, 50,
                        geometric_checkpoints(50), 1);
  for (const auto& v : log.iterates) EXPECT_TRUE(v == v0);
}

TEST(VTrace, TailAverageNearTargetValue) {
  Mdp m = random_mdp(19, 4, 2, 3, 0.8);
  Policy pi = random_policy(5, 4, 2, 0.1), b = uniform_policy(4, 2);
  double rho = 1.0 / b.probs.minCoeff();
  VTraceParams p{2, 1.0, rho, pi, b};
  const long H = 400000;
  Vector avg = Vector::Zero(4);
  long count = 0;
  run_vtrace(m, p, StepsizeSchedule::constant(0.005), Vector::Zero(4), H, linear_checkpoints(H, 2001), 6,
             [&](long k, const Vector& v) {
               if (k >= H / 2) {
                 avg += v;
                 ++count;
               }
             });
  avg /= static_cast<double>(count);
  EXPECT_LE((avg - solve_value_function(m, pi)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(NStep, Td0AndScalarTwoStep) {
  Mdp m = random_mdp(2, 3, 2, 3, 0.9);
  Policy pi = uniform_policy(3, 2);
  auto traj = sample_trajectory(m, pi, StartSpec{1}, 1, 5);
  const auto& st = traj.steps[0];
  Vector v0 = Vector::LinSpaced(3, 0.2, 0.8);
  RunOptions o{1};
  auto log = run_nstep_td(m, pi, 1, StepsizeSchedule::constant(0.3), v0, 1, {0, 1}, 5, o);
  Vector expect = v0;
  expect(st.state) += 0.3 * (st.reward + m.gamma * v0(st.next_state) - v0(st.state));
  EXPECT_TRUE(log.iterates[1] == expect);

  auto s = run_nstep_td(scalar_mdp(1.0, 0.5), uniform_policy(1, 1), 2, StepsizeSchedule::constant(1.0), Vector::Zero(1), 1,
                        {0, 1}, 1);
  EXPECT_DOUBLE_EQ(s.iterates[1](0), 1.5);
}

TEST(NStep, MatchesSaEngineBitwise) {
  Mdp m = random_mdp(7, 5, 3, 3, 0.9);
  Policy pi = random_policy(1, 5, 3);
  NStepOperator op(m, pi, 4);
  auto cps = geometric_checkpoints(5000);
  auto s = StepsizeSchedule::polynomial(0.5, 2.0, 0.7);
  auto sampler = make_window_sampler(op, 3);
  auto a = run_sa(op, *sampler, s, {}, Vector::Zero(5), 5000, cps, 3);
  auto b = run_nstep_td(m, pi, 4, s, Vector::Zero(5), 5000, cps, 3);
  for (std::size_t i = 0; i < cps.size(); ++i) EXPECT_TRUE(a.iterates[i] == b.iterates[i]) << cps[i];
}

TEST(TdLambda, LambdaZeroIsTd0) {
  Mdp m = random_mdp(4, 4, 2, 3, 0.9);
  Policy pi = random_policy(2, 4, 2);
  auto cps = geometric_checkpoints(3000);
  auto a = run_td_lambda(m, pi, 0.0, 0.1, Vector::Zero(4), 3000, cps, 8);
  auto b = run_nstep_td(m, pi, 1, StepsizeSchedule::constant(0.1), Vector::Zero(4), 3000, cps, 8);
  for (std::size_t i = 0; i < cps.size(); ++i) EXPECT_TRUE(a.iterates[i] == b.iterates[i]) << cps[i];
}

TEST(TdLambda, TraceOnRepeatedState) {
  TdLambdaOptions o;
  o.record_traces = true;
  const double gl = 0.8 * 0.6;
  auto log = run_td_lambda(scalar_mdp(0.5, 0.8), uniform_policy(1, 1), 0.6, 0.1, Vector::Zero(1), 30, every_checkpoint(30), 1,
                           nullptr, o);
  for (int k = 1; k <= 30; ++k) {
    double expect = 0;
    for (int i = 0; i < k; ++i) expect += std::pow(gl, i);
    EXPECT_NEAR(log.traces[static_cast<std::size_t>(k)](0), expect, 1e-14);
    EXPECT_NEAR(trace_closed_form(std::vector<int>(static_cast<std::size_t>(k), 0), 1, gl)(0), expect, 1e-14);
  }
}

TEST(TdLambda, ResidualWithinTruncationBound) {
  Mdp m = random_mdp(14, 5, 2, 3, 0.9);
  Policy pi = random_policy(3, 5, 2);
  for (double lambda : {0.3, 0.7, 0.9}) {
    TdLambdaOptions o;
    o.residual_tau = tdlambda_truncation_level(0.9, lambda, 0.05);
    auto log = run_td_lambda(m, pi, lambda, 0.05, Vector::Zero(5), 20000, {0, 20000}, 2, nullptr, o);
    EXPECT_GT(log.max_residual_ratio, 0.0);
    EXPECT_LE(log.max_residual_ratio, 1.0 + 1e-12) << lambda;
  }
}

TEST(TdLambda, TruncatedRunnerMatchesSaEngine) {
  Mdp m = random_mdp(15, 4, 2, 3, 0.9);
  Policy pi = random_policy(3, 4, 2);
  auto params = TdLambdaParams::from_stepsize(0.9, 0.6, 0.05);
  TdLambdaOperator op(m, pi, params);
  auto cps = geometric_checkpoints(4000);
  auto s = StepsizeSchedule::constant(0.05);
  auto sampler = make_window_sampler(op, 12);
  auto a = run_sa(op, *sampler, s, {}, Vector::Zero(4), 4000, cps, 12);
  auto b = run_td_lambda_truncated(m, pi, 0.6, params.tau, s, Vector::Zero(4), 4000, cps, 12);
  for (std::size_t i = 0; i < cps.size(); ++i) EXPECT_TRUE(a.iterates[i] == b.iterates[i]) << cps[i];
}

TEST(Algorithms, CsvLayout) {
  auto log = run_q_learning(scalar_mdp(1.0, 0.5), uniform_policy(1, 1), StepsizeSchedule::constant(1.0), Vector::Zero(1),
                            1, {0, 1}, 1);
  std::ostringstream os;
  write_algo_csv(os, log);
  EXPECT_EQ(os.str(), "k,coord_index,value\n0,0,0\n1,0,1\n");
}
