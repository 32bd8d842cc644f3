#pragma once

#include <vector>

#include "salab/mdp.hpp"

namespace salab::testing {

// One state, one action.
inline Mdp scalar_mdp(double reward, double gamma) {
  Mdp m;
  m.transitions = {Matrix::Ones(1, 1)};
  m.rewards = Matrix::Constant(1, 1, reward);
  m.gamma = gamma;
  return m;
}

// One action per matrix, rewards given row-wise.
inline Mdp make_mdp(std::vector<Matrix> P, Matrix R, double gamma) {
  Mdp m;
  m.transitions = std::move(P);
  m.rewards = std::move(R);
  m.gamma = gamma;
  validate_mdp(m);
  return m;
}

inline Matrix mat2(double a, double b, double c, double d) {
  Matrix M(2, 2);
  M << a, b, c, d;
  return M;
}

}  // namespace salab::testing

#include "salab/operators.hpp"
#include "salab/sa_engine.hpp"

namespace salab::testing {

// F(x, y) = a x + b on R^1, independent of y. a = 1, b = 0 is the identity.
class ScalarAffineOp : public AsyncOperator {
 public:
  ScalarAffineOp(double a, double b) : a_(a), b_(b), m_(scalar_mdp(0.5, 0.5)), pol_(uniform_policy(1, 1)) {
    fixed_ = Vector::Constant(1, a == 1.0 ? 0.0 : b / (1.0 - a));
  }
  Family family() const override { return Family::nstep_td; }
  int dimension() const override { return 1; }
  NormKind contraction_norm() const override { return NormKind::linf; }
  double beta() const override { return std::abs(a_); }
  const Vector& fixed_point() const override { return fixed_; }
  Vector expected(const Vector& x) const override { return a_ * x + Vector::Constant(1, b_); }
  double lipschitz() const override { return std::abs(a_); }
  double bound_at_zero() const override { return std::abs(b_); }
  void increment(const Vector& x, const Window&, Vector& out) const override { out = (a_ - 1.0) * x + Vector::Constant(1, b_); }
  int window_transitions() const override { return 1; }
  const Mdp& mdp() const override { return m_; }
  const Policy& sampling_policy() const override { return pol_; }

 private:
  double a_, b_;
  Mdp m_;
  Policy pol_;
  Vector fixed_;
};

class FixedSampler : public WindowSampler {
 public:
  FixedSampler() { w_.states = {0, 0}; w_.actions = {0}; }
  const Window& next() override { return w_; }

 private:
  Window w_;
};

}  // namespace salab::testing
