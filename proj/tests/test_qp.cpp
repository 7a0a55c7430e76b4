/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include <gtest/gtest.h>

#include <random>

#include "dsmpc/error.hpp"
#include "dsmpc/qp.hpp"
#include "oracles.hpp"

using namespace dsmpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QPProblem box_problem(Matrix h, Vector g, Vector lo, Vector hi) {
  QPProblem p;
  p.hessian = std::move(h);
  p.gradient = std::move(g);
  p.eq_matrix = Matrix(0, p.gradient.size());
  p.eq_rhs = Vector(0);
  p.lower = std::move(lo);
  p.upper = std::move(hi);
  return p;
}

// Primal feasibility, dual sign, complementarity, stationarity.
void expect_kkt(const QPProblem& p, const QPSolution& s, double tol) {
  const int n = p.num_variables();
  const double scale = 1.0 + p.gradient.cwiseAbs().maxCoeff();
  EXPECT_LE(qp_stationarity(p, s), tol * scale);
  if (p.num_equalities() > 0) {
    EXPECT_LE((p.eq_matrix * s.x - p.eq_rhs).cwiseAbs().maxCoeff(), 1e-8);
  }
  for (int i = 0; i < n; ++i) {
    EXPECT_GE(s.x(i), p.lower(i) - 1e-10);
    EXPECT_LE(s.x(i), p.upper(i) + 1e-10);
    EXPECT_GE(s.lower_multipliers(i), 0.0);
    EXPECT_GE(s.upper_multipliers(i), 0.0);
    if (std::isfinite(p.lower(i)))
      EXPECT_LE(std::abs(s.lower_multipliers(i) * (s.x(i) - p.lower(i))), tol * scale);
    if (std::isfinite(p.upper(i)))
      EXPECT_LE(std::abs(s.upper_multipliers(i) * (p.upper(i) - s.x(i))), tol * scale);
  }
}

}  // namespace

TEST(SolveEqQp, UnconstrainedMinimum) {
  const EqQPSolution s =
      solve_eq_qp(Matrix::Identity(2, 2), (Vector(2) << 1, -1).finished(), Matrix(0, 2), Vector(0));
  EXPECT_NEAR(s.x(0), -1.0, 1e-14);
  EXPECT_NEAR(s.x(1), 1.0, 1e-14);
}

TEST(SolveEqQp, SumConstraint) {
  Matrix a(1, 2);
  a << 1, 1;
  const EqQPSolution s =
      solve_eq_qp(Matrix::Identity(2, 2), Vector::Zero(2), a, Vector::Constant(1, 1.0));
  EXPECT_NEAR(s.x(0), 0.5, 1e-14);
  EXPECT_NEAR(s.x(1), 0.5, 1e-14);
}

TEST(SolveEqQp, RankDeficient) {
  Matrix a(2, 2);
  a << 1, 1, 2, 2;
  try {
    solve_eq_qp(Matrix::Identity(2, 2), Vector::Zero(2), a, (Vector(2) << 1, 2).finished());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficientConstraints);
  }
}

TEST(SolveEqQp, KktResidualOnRandomProblems) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const QPProblem p = oracle::random_box_qp(rng, 8, trial % 5);
    const EqQPSolution s = solve_eq_qp(p.hessian, p.gradient, p.eq_matrix, p.eq_rhs);
    const Vector stat = p.hessian * s.x + p.gradient + p.eq_matrix.transpose() * s.multipliers;
    EXPECT_LE(stat.cwiseAbs().maxCoeff(), 1e-9 * (1.0 + p.gradient.cwiseAbs().maxCoeff()));
    if (p.num_equalities() > 0)
      EXPECT_LE((p.eq_matrix * s.x - p.eq_rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SolveBoxQp, InactiveBounds) {
  const QPProblem p = box_problem(Matrix::Identity(1, 1), Vector::Constant(1, -1.0),
                                  Vector::Constant(1, -10.0), Vector::Constant(1, 10.0));
  const QPSolution s = solve_box_qp(p);
  ASSERT_EQ(s.status, QPStatus::Solved);
  EXPECT_NEAR(s.x(0), 1.0, 1e-12);
  EXPECT_NEAR(s.lower_multipliers(0), 0.0, 1e-12);
  EXPECT_NEAR(s.upper_multipliers(0), 0.0, 1e-12);
}

TEST(SolveBoxQp, UpperBoundActive) {
  const QPProblem p = box_problem(Matrix::Identity(1, 1), Vector::Constant(1, -5.0),
                                  Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  const QPSolution s = solve_box_qp(p);
  ASSERT_EQ(s.status, QPStatus::Solved);
  EXPECT_NEAR(s.x(0), 1.0, 1e-12);
  EXPECT_NEAR(s.upper_multipliers(0), 4.0, 1e-10);
  EXPECT_NEAR(s.lower_multipliers(0), 0.0, 1e-12);
}

TEST(SolveBoxQp, EqualityWithOneBoundActive) {
  QPProblem p = box_problem(Matrix::Identity(2, 2), (Vector(2) << -3, 0).finished(),
                            Vector::Constant(2, -kInf), (Vector(2) << 1, kInf).finished());
  p.eq_matrix = Matrix(1, 2);
  p.eq_matrix << 1, 1;
  p.eq_rhs = Vector::Constant(1, 1.0);
  const QPSolution s = solve_box_qp(p);
  ASSERT_EQ(s.status, QPStatus::Solved);
  // Without the bound the optimum is (2, -1); the bound pins x0 = 1, so x1 = 0.
  EXPECT_NEAR(s.x(0), 1.0, 1e-12);
  EXPECT_NEAR(s.x(1), 0.0, 1e-12);
  expect_kkt(p, s, 1e-10);
}

TEST(SolveBoxQp, MatchesEnumerationOnRandomProblems) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 7;
    const int m = trial % 3 == 0 ? 0 : std::min(n - 1, 1 + trial % 3);
    const QPProblem p = oracle::random_box_qp(rng, n, m);
    const oracle::EnumeratedQP ref = oracle::enumerate_box_qp(p);
    ASSERT_TRUE(ref.feasible);
    const QPSolution s = solve_box_qp(p);
    ASSERT_EQ(s.status, QPStatus::Solved) << "trial " << trial;
    EXPECT_LE((s.x - ref.x).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial;
    expect_kkt(p, s, 1e-8);
  }
}

TEST(SolveBoxQp, RandomFeasibleSamplesNeverBeatOptimum) {
  std::mt19937_64 rng(77);
  const QPProblem p = oracle::random_box_qp(rng, 6, 2);
  const QPSolution s = solve_box_qp(p);
  ASSERT_EQ(s.status, QPStatus::Solved);
  const double best = p.objective(s.x);
  // Feasible samples: random box point projected onto the affine set, kept if
  // it still satisfies the bounds.
  const Matrix a = p.eq_matrix;
  const Matrix proj = Matrix::Identity(6, 6) - a.transpose() * (a * a.transpose()).inverse() * a;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int accepted = 0;
  while (accepted < 1000) {
    Vector d(6);
    for (int i = 0; i < 6; ++i) d(i) = (u(rng) - 0.5) * 0.5;
    const Vector x = s.x + proj * d;
    if (((x - p.lower).array() < 0.0).any() || ((p.upper - x).array() < 0.0).any()) continue;
    ++accepted;
    EXPECT_GE(p.objective(x), best - 1e-10);
  }
}

TEST(SolveBoxQp, IsDeterministic) {
  std::mt19937_64 rng(5);
  const QPProblem p = oracle::random_box_qp(rng, 8, 3);
  const QPSolution a = solve_box_qp(p);
  const QPSolution b = solve_box_qp(p);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.eq_multipliers, b.eq_multipliers);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(SolveBoxQp, ReportsInfeasible) {
  QPProblem p = box_problem(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2),
                            Vector::Ones(2));
  p.eq_matrix = Matrix(1, 2);
  p.eq_matrix << 1, 1;
  p.eq_rhs = Vector::Constant(1, 3.0);
  EXPECT_EQ(solve_box_qp(p).status, QPStatus::Infeasible);
}

TEST(SolveBoxQp, WarmStartReachesSameOptimum) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const QPProblem p = oracle::random_box_qp(rng, 7, 2);
    const QPSolution cold = solve_box_qp(p);
    ASSERT_EQ(cold.status, QPStatus::Solved);
    QPWarmStart warm;
    warm.x = cold.x;
    for (int i = 0; i < 7; ++i)
      if (cold.x(i) == p.lower(i) || cold.x(i) == p.upper(i)) warm.fixed.push_back(i);
    const QPSolution hot = solve_box_qp(p, 500, &warm);
    ASSERT_EQ(hot.status, QPStatus::Solved);
    EXPECT_LE((hot.x - cold.x).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(hot.iterations, cold.iterations);
  }
}

TEST(SolveBoxQp, ValidateRejectsInvertedBounds) {
  const QPProblem p = box_problem(Matrix::Identity(1, 1), Vector::Zero(1), Vector::Constant(1, 1.0),
                                  Vector::Constant(1, 0.0));
  EXPECT_THROW(solve_box_qp(p), Error);
}
