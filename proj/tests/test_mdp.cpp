#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"
#include "salab/markov_chain.hpp"
#include "salab/mdp.hpp"

using namespace salab;
using namespace salab::testing;

TEST(Mdp, ValidatesDegenerateCase) {
  Mdp m = scalar_mdp(0.5, 0.9);
  EXPECT_NO_THROW(validate_mdp(m));
}

TEST(Mdp, RejectsSubStochasticRow) {
  Mdp m = scalar_mdp(0.5, 0.9);
  m.transitions[0](0, 0) = 0.9;
  try {
    validate_mdp(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row not stochastic"), std::string::npos);
  }
}

TEST(Mdp, RejectsRewardOutOfRange) {
  Mdp m = scalar_mdp(1.5, 0.9);
  try {
    validate_mdp(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("reward out of range"), std::string::npos);
  }
}

TEST(Mdp, RejectsBadGamma) {
  Mdp m = scalar_mdp(0.5, 1.0);
  EXPECT_THROW(validate_mdp(m), Error);
}

TEST(Bellman, ZeroDiscountGivesRewards) {
  // gamma = 0 is outside the validated range, so build the struct directly.
  Mdp m = random_mdp(3, 3, 2, 2, 0.5);
  m.gamma = 0.0;
  Vector q = Vector::LinSpaced(m.q_size(), -3, 7);
  Vector h = bellman_optimality(q, m);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) EXPECT_DOUBLE_EQ(h(q_index(m, s, a)), m.rewards(s, a));
}

TEST(Bellman, ScalarCell) {
  Mdp m = scalar_mdp(1.0, 0.5);
  EXPECT_DOUBLE_EQ(bellman_optimality(Vector::Zero(1), m)(0), 1.0);
}

TEST(Bellman, OptimalQIsFixedPoint) {
  Mdp m = random_mdp(11, 3, 2, 2, 0.9);
  Vector q = solve_optimal_q(m).q;
  EXPECT_LE((bellman_optimality(q, m) - q).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PolicyTransition, DeterministicAndUniform) {
  Mdp m = random_mdp(5, 4, 2, 3, 0.9);
  Matrix P0 = policy_transition(m, deterministic_policy({0, 0, 0, 0}, 2));
  EXPECT_LE((P0 - m.P(0)).cwiseAbs().maxCoeff(), 0.0);
  Matrix Pu = policy_transition(m, uniform_policy(4, 2));
  EXPECT_LE((Pu - 0.5 * (m.P(0) + m.P(1))).cwiseAbs().maxCoeff(), 1e-15);
  Matrix Pr = policy_transition(m, random_policy(9, 4, 2));
  for (int s = 0; s < 4; ++s) EXPECT_NEAR(Pr.row(s).sum(), 1.0, 1e-12);
}

TEST(PolicyReward, Cases) {
  Matrix R(2, 2);
  R << 0, 1, 0, 1;
  Mdp m = make_mdp({Matrix::Identity(2, 2), Matrix::Identity(2, 2)}, R, 0.9);
  Vector ru = policy_reward(m, uniform_policy(2, 2));
  EXPECT_DOUBLE_EQ(ru(0), 0.5);
  EXPECT_DOUBLE_EQ(ru(1), 0.5);
  Vector rd = policy_reward(m, deterministic_policy({1, 0}, 2));
  EXPECT_DOUBLE_EQ(rd(0), 1.0);
  EXPECT_DOUBLE_EQ(rd(1), 0.0);
  Mdp r = random_mdp(2, 5, 3, 3, 0.9);
  Vector rr = policy_reward(r, random_policy(4, 5, 3));
  for (int s = 0; s < 5; ++s) {
    EXPECT_GE(rr(s), r.rewards.row(s).minCoeff() - 1e-15);
    EXPECT_LE(rr(s), r.rewards.row(s).maxCoeff() + 1e-15);
  }
}

TEST(ValueFunction, ClosedForms) {
  EXPECT_NEAR(solve_value_function(scalar_mdp(1.0, 0.5), uniform_policy(1, 1))(0), 2.0, 1e-14);
  EXPECT_NEAR(solve_value_function(scalar_mdp(0.0, 0.5), uniform_policy(1, 1))(0), 0.0, 1e-14);
  Matrix R(2, 1);
  R << 1, 0;
  Mdp cyc = make_mdp({mat2(0, 1, 1, 0)}, R, 0.5);
  Vector v = solve_value_function(cyc, uniform_policy(2, 1));
  EXPECT_NEAR(v(0), 1.3333333333333333, 1e-14);
  EXPECT_NEAR(v(1), 0.6666666666666666, 1e-14);
}

TEST(OptimalQ, ClosedFormsAndGreedyEvaluation) {
  EXPECT_NEAR(solve_optimal_q(scalar_mdp(1.0, 0.5)).q(0), 2.0, 1e-10);
  EXPECT_NEAR(solve_optimal_q(scalar_mdp(0.0, 0.5)).q(0), 0.0, 1e-14);
  Mdp m = random_mdp(21, 4, 2, 3, 0.9);
  OptimalQ o = solve_optimal_q(m);
  Vector qpi = q_from_v(m, solve_value_function(m, o.policy));
  EXPECT_LE((qpi - o.q).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RandomMdp, DeterministicDenseValid) {
  Mdp a = random_mdp(7, 5, 3, 5, 0.9), b = random_mdp(7, 5, 3, 5, 0.9);
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(a.P(k) == b.P(k));
    EXPECT_EQ((a.P(k).array() > 0.0).count(), 25);
  }
  EXPECT_TRUE(a.rewards == b.rewards);
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_NO_THROW(validate_mdp(random_mdp(s, 6, 2, 2, 0.8)));
}

TEST(Trajectory, DeterministicAndEmpty) {
  Matrix R(2, 1);
  R << 1, 0;
  Mdp cyc = make_mdp({mat2(0, 1, 1, 0)}, R, 0.5);
  auto t = sample_trajectory(cyc, uniform_policy(2, 1), StartSpec{0}, 5, 3);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(t.steps[static_cast<std::size_t>(k)].state, k % 2);
  EXPECT_TRUE(sample_trajectory(cyc, uniform_policy(2, 1), StartSpec{0}, 0, 3).steps.empty());
}

TEST(Trajectory, FrequenciesMatchStationaryLaw) {
  Mdp m = make_mdp({mat2(0.9, 0.1, 0.5, 0.5)}, Matrix::Constant(2, 1, 0.5), 0.9);
  const long n = 400000;
  auto t = sample_trajectory(m, uniform_policy(2, 1), StartSpec{0}, n, 17);
  double f0 = 0;
  for (const auto& st : t.steps) f0 += st.state == 0;
  f0 /= n;
  // Autocorrelated draws: inflate the iid stderr by (1+r)/(1-r), r = 0.4.
  double se = std::sqrt(5.0 / 6.0 / 6.0 / n * (1.4 / 0.6));
  EXPECT_NEAR(f0, 5.0 / 6.0, 3 * se);
}

TEST(MdpIo, RoundTripIsExact) {
  Mdp m = random_mdp(4, 3, 2, 2, 0.77);
  std::stringstream ss;
  write_mdp(ss, m);
  Mdp r = read_mdp(ss);
  EXPECT_EQ(r.gamma, m.gamma);
  EXPECT_TRUE(r.rewards == m.rewards);
  for (int a = 0; a < 2; ++a) EXPECT_TRUE(r.P(a) == m.P(a));
}
