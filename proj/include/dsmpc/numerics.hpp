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

#ifndef DSMPC_NUMERICS_HPP_
#define DSMPC_NUMERICS_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace dsmpc {

// Dense storage shared by every module. Matrices are row-major so a row is a
// contiguous sample / constraint.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Pivots at or below this magnitude are treated as zero.
inline constexpr double kPivotThreshold = 1e-12;

bool all_finite(const Vector& v) noexcept;
bool all_finite(const Matrix& m) noexcept;

/// LU factorization with partial pivoting. Factor once, solve many.
class LuFactorization {
 public:
  /// Throws Error(SingularMatrix) when a pivot magnitude is <= kPivotThreshold.
  explicit LuFactorization(Matrix a);

  Vector solve(const Vector& b) const;
  int size() const noexcept { return static_cast<int>(lu_.rows()); }

 private:
  Matrix lu_;
  std::vector<int> perm_;
};

/// Solves a x = b for square nonsingular a.
Vector lu_solve(const Matrix& a, const Vector& b);

/// Solves a x = b for symmetric positive-definite a (Cholesky, LLt).
/// Throws Error(NotPositiveDefinite) on a non-positive diagonal pivot or when
/// a is not symmetric within 1e-10.
Vector cholesky_solve(const Matrix& a, const Vector& b);

/// Splitmix64-style mixing used to derive independent, reproducible RNG
/// streams (per iteration, per environment instance, ...).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

using VectorMap = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian, J(i, j) = d f_i / d x_j.
Matrix finite_diff_jacobian(const VectorMap& f, const Vector& x, double h = 1e-5);

}  // namespace dsmpc

#endif  // DSMPC_NUMERICS_HPP_
