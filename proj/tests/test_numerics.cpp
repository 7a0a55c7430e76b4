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
#include "dsmpc/numerics.hpp"

using namespace dsmpc;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

double residual_bound(const Vector& b) { return 1e-9 * (1.0 + b.cwiseAbs().maxCoeff()); }

}  // namespace

TEST(LuSolve, IdentityReturnsRhs) {
  const Vector b = (Vector(3) << 1, 2, 3).finished();
  const Vector x = lu_solve(Matrix::Identity(3, 3), b);
  EXPECT_EQ(x, b);
}

TEST(LuSolve, DiagonalInversion) {
  Matrix a(2, 2);
  a << 2, 0, 0, 4;
  const Vector x = lu_solve(a, (Vector(2) << 2, 8).finished());
  EXPECT_DOUBLE_EQ(x(0), 1.0);
  EXPECT_DOUBLE_EQ(x(1), 2.0);
}

TEST(LuSolve, ResidualContractOnRandomSystems) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 20;
    Matrix a = random_matrix(rng, n, n) + 3.0 * Matrix::Identity(n, n);
    const Vector b = random_matrix(rng, n, 1).col(0);
    const Vector x = lu_solve(a, b);
    EXPECT_LE((a * x - b).cwiseAbs().maxCoeff(), residual_bound(b)) << "n=" << n;
  }
}

TEST(LuSolve, NeedsPivotingForZeroLeadingEntry) {
  Matrix a(2, 2);
  a << 0, 1, 1, 0;
  const Vector x = lu_solve(a, (Vector(2) << 3, 5).finished());
  EXPECT_DOUBLE_EQ(x(0), 5.0);
  EXPECT_DOUBLE_EQ(x(1), 3.0);
}

TEST(LuSolve, SingularMatrixIsReported) {
  Matrix a(2, 2);
  a << 1, 2, 2, 4;
  try {
    lu_solve(a, Vector::Ones(2));
    FAIL() << "expected SingularMatrix";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularMatrix);
  }
}

TEST(CholeskySolve, IdentityAndDiagonal) {
  const Vector b = (Vector(2) << 5, -3).finished();
  EXPECT_EQ(cholesky_solve(Matrix::Identity(2, 2), b), b);
  Matrix a(2, 2);
  a << 4, 0, 0, 9;
  const Vector x = cholesky_solve(a, (Vector(2) << 8, 27).finished());
  EXPECT_DOUBLE_EQ(x(0), 2.0);
  EXPECT_DOUBLE_EQ(x(1), 3.0);
}

TEST(CholeskySolve, AgreesWithLuOnRandomSpdUpTo20) {
  std::mt19937_64 rng(5);
  for (int n = 1; n <= 20; ++n) {
    const Matrix m = random_matrix(rng, n, n);
    const Matrix a = m.transpose() * m + Matrix::Identity(n, n);
    const Vector b = random_matrix(rng, n, 1).col(0);
    const Vector xc = cholesky_solve(a, b);
    const Vector xl = lu_solve(a, b);
    EXPECT_LE((xc - xl).cwiseAbs().maxCoeff(), 1e-9) << "n=" << n;
    EXPECT_LE((a * xc - b).cwiseAbs().maxCoeff(), residual_bound(b));
  }
}

TEST(CholeskySolve, RejectsIndefinite) {
  Matrix a(2, 2);
  a << 1, 2, 2, 1;
  try {
    cholesky_solve(a, Vector::Ones(2));
    FAIL() << "expected NotPositiveDefinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
  }
}

TEST(FiniteDiffJacobian, IdentityMap) {
  const Vector x = (Vector(3) << 0.3, -2.0, 7.0).finished();
  const Matrix j = finite_diff_jacobian([](const Vector& v) { return v; }, x);
  EXPECT_LE((j - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FiniteDiffJacobian, Square) {
  const Matrix j = finite_diff_jacobian(
      [](const Vector& v) { return Vector::Constant(1, v(0) * v(0)); }, Vector::Constant(1, 3.0));
  EXPECT_NEAR(j(0, 0), 6.0, 1e-6);
}

TEST(FiniteDiffJacobian, LinearMapRecoversMatrix) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_matrix(rng, 4, 6);
    const Vector x = 10.0 * random_matrix(rng, 6, 1).col(0);
    const Matrix j = finite_diff_jacobian([&](const Vector& v) { return Vector(a * v); }, x);
    EXPECT_LE((j - a).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FiniteDiffJacobian, NonFiniteOutputIsReported) {
  auto f = [](const Vector& v) { return Vector::Constant(1, std::log(v(0))); };
  try {
    finite_diff_jacobian(f, Vector::Constant(1, 0.0));
    FAIL() << "expected NonFiniteOutput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteOutput);
  }
}
