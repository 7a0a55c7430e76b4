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

#ifndef DSMPC_QP_HPP_
#define DSMPC_QP_HPP_

#include <vector>

#include "dsmpc/numerics.hpp"

namespace dsmpc {

/// minimize 0.5 x'Hx + g'x  s.t.  A x = b,  lower <= x <= upper.
/// Bounds may be +-infinity.
struct QPProblem {
  Matrix hessian;
  Vector gradient;
  Matrix eq_matrix;  // m x n, m may be 0
  Vector eq_rhs;
  Vector lower;
  Vector upper;

  int num_variables() const { return static_cast<int>(gradient.size()); }
  int num_equalities() const { return static_cast<int>(eq_rhs.size()); }
  double objective(const Vector& x) const;
  /// Throws Error(ShapeMismatch) on inconsistent shapes, m > n, lower > upper
  /// or an asymmetric Hessian.
  void validate() const;
};

enum class QPStatus { Solved, MaxIter, Infeasible };

const char* to_string(QPStatus status) noexcept;

/// Multiplier convention (matches the Lagrangian of the filter's NLP):
///   H x + g + A' lambda - lower_multipliers + upper_multipliers = 0,
/// with both bound multiplier vectors >= 0 and complementary to their bound.
struct QPSolution {
  Vector x;
  Vector eq_multipliers;
  Vector lower_multipliers;
  Vector upper_multipliers;
  int iterations = 0;
  QPStatus status = QPStatus::Solved;
};

struct EqQPSolution {
  Vector x;
  Vector multipliers;
};

/// Solves the KKT system [[H, A'], [A, 0]] (x, lambda) = (-g, b).
/// Throws Error(RankDeficientConstraints) or Error(SingularKKT).
EqQPSolution solve_eq_qp(const Matrix& hessian, const Vector& gradient, const Matrix& eq_matrix,
                         const Vector& eq_rhs);

/// Optional starting point for solve_box_qp. `x` must satisfy A x = b and the
/// bounds; `fixed` lists variables to start in the working set (at the bound
/// they sit on). An infeasible warm start is ignored.
struct QPWarmStart {
  Vector x;
  std::vector<int> fixed;
};

/// Primal active-set method over the bound constraints; the equality rows stay
/// in every KKT solve. A feasible start comes from `warm` or from an exact
/// l1-penalty phase 1. Release ties break toward the lowest variable index.
QPSolution solve_box_qp(const QPProblem& problem, int max_iter = 500,
                        const QPWarmStart* warm = nullptr);

/// Infinity norm of H x + g + A' lambda - mu + nu.
double qp_stationarity(const QPProblem& problem, const QPSolution& solution);

}  // namespace dsmpc

#endif  // DSMPC_QP_HPP_
