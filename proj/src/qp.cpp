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

#include "dsmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "dsmpc/error.hpp"

namespace dsmpc {

const char* to_string(QPStatus status) noexcept {
  switch (status) {
    case QPStatus::Solved: return "solved";
    case QPStatus::MaxIter: return "max_iter";
    case QPStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

double QPProblem::objective(const Vector& x) const {
  return 0.5 * x.dot(hessian * x) + gradient.dot(x);
}

void QPProblem::validate() const {
  const int n = num_variables();
  const int m = num_equalities();
  if (hessian.rows() != n || hessian.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "Hessian must be n x n");
  }
  if (eq_matrix.rows() != m || (m > 0 && eq_matrix.cols() != n)) {
    throw Error(ErrorCode::ShapeMismatch, "equality matrix must be m x n");
  }
  if (m > n) throw Error(ErrorCode::ShapeMismatch, "more equality rows than variables");
  if (lower.size() != n || upper.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "bounds must have length n");
  }
  for (int i = 0; i < n; ++i) {
    if (std::isnan(lower(i)) || std::isnan(upper(i)) || lower(i) > upper(i)) {
      throw Error(ErrorCode::ShapeMismatch, "lower > upper at " + std::to_string(i));
    }
  }
  const double scale = std::max(1.0, hessian.cwiseAbs().maxCoeff());
  if (n > 0 && (hessian - hessian.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::ShapeMismatch, "Hessian is not symmetric");
  }
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Gaussian elimination with complete pivoting; true when A has full row rank.
bool full_row_rank(const Matrix& a) {
  Matrix w = a;
  const int m = static_cast<int>(w.rows());
  const int n = static_cast<int>(w.cols());
  if (m == 0) return true;
  if (m > n) return false;
  const double threshold = kPivotThreshold * std::max(1.0, w.cwiseAbs().maxCoeff());
  for (int k = 0; k < m; ++k) {
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    const double best = w.bottomRightCorner(m - k, n - k).cwiseAbs().maxCoeff(&r, &c);
    if (!(best > threshold)) return false;
    w.row(k).swap(w.row(k + r));
    w.col(k).swap(w.col(k + c));
    for (int i = k + 1; i < m; ++i) {
      const double f = w(i, k) / w(k, k);
      w.row(i).tail(n - k) -= f * w.row(k).tail(n - k);
    }
  }
  return true;
}

// Solves the KKT system restricted to the `free` variables:
//   [H_FF A_F'; A_F 0] (p_F, lambda) = (rhs_F, rhs_eq).
void solve_reduced_kkt(const Matrix& h, const Matrix& a, const std::vector<int>& free,
                       const Vector& rhs_free, const Vector& rhs_eq, Vector& p_free,
                       Vector& lambda) {
  const int nf = static_cast<int>(free.size());
  const int m = static_cast<int>(a.rows());
  Matrix kkt = Matrix::Zero(nf + m, nf + m);
  for (int i = 0; i < nf; ++i) {
    for (int j = 0; j < nf; ++j) kkt(i, j) = h(free[i], free[j]);
    for (int r = 0; r < m; ++r) {
      kkt(nf + r, i) = a(r, free[i]);
      kkt(i, nf + r) = a(r, free[i]);
    }
  }
  Vector rhs(nf + m);
  rhs << rhs_free, rhs_eq;
  Vector sol;
  try {
    sol = LuFactorization(std::move(kkt)).solve(rhs);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SingularMatrix) {
      throw Error(ErrorCode::SingularKKT, e.what());
    }
    throw;
  }
  p_free = sol.head(nf);
  lambda = sol.tail(m);
}

enum : std::int8_t { kFree = 0, kAtLower = -1, kAtUpper = 1 };

struct ActiveSetOutcome {
  Vector x;
  Vector lambda;
  Vector mu;
  Vector nu;
  std::vector<std::int8_t> state;
  int iterations = 0;
  QPStatus status = QPStatus::MaxIter;
};

// Primal active-set iterations from a feasible x whose fixed variables
// (state != kFree) sit exactly on their bound.
ActiveSetOutcome primal_active_set(const Matrix& h, const Vector& g, const Matrix& a,
                                   const Vector& lo, const Vector& hi, Vector x,
                                   std::vector<std::int8_t> state, int max_iter) {
  const int n = static_cast<int>(g.size());
  const int m = static_cast<int>(a.rows());
  ActiveSetOutcome out;
  out.lambda = Vector::Zero(m);
  const double dual_tol =
      1e-11 * (1.0 + g.cwiseAbs().maxCoeff() + (n > 0 ? h.cwiseAbs().maxCoeff() : 0.0));
  bool at_face_minimum = false;
  std::vector<int> free;
  free.reserve(n);

  for (int iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter + 1;
    free.clear();
    for (int i = 0; i < n; ++i)
      if (state[i] == kFree) free.push_back(i);

    Vector p_free = Vector::Zero(static_cast<Eigen::Index>(free.size()));
    if (!at_face_minimum) {
      const Vector grad = h * x + g;
      Vector rhs_free(static_cast<Eigen::Index>(free.size()));
      for (std::size_t k = 0; k < free.size(); ++k) rhs_free(k) = -grad(free[k]);
      solve_reduced_kkt(h, a, free, rhs_free, Vector::Zero(m), p_free, out.lambda);
    }
    const double step_tol = 1e-12 * (1.0 + (n > 0 ? x.cwiseAbs().maxCoeff() : 0.0));
    const bool null_step = at_face_minimum || p_free.size() == 0 ||
                           p_free.cwiseAbs().maxCoeff() <= step_tol;
    at_face_minimum = false;

    if (null_step) {
      const Vector r = h * x + g + (m > 0 ? Vector(a.transpose() * out.lambda) : Vector::Zero(n));
      int release = -1;
      double most_negative = -dual_tol;
      for (int i = 0; i < n; ++i) {
        if (state[i] == kFree) continue;
        const double mult = (state[i] == kAtLower) ? r(i) : -r(i);
        if (mult < most_negative) {
          most_negative = mult;
          release = i;
        }
      }
      if (release < 0) {
        out.mu = Vector::Zero(n);
        out.nu = Vector::Zero(n);
        for (int i = 0; i < n; ++i) {
          if (state[i] == kAtLower) out.mu(i) = r(i);
          if (state[i] == kAtUpper) out.nu(i) = -r(i);
        }
        out.status = QPStatus::Solved;
        out.x = std::move(x);
        out.state = std::move(state);
        return out;
      }
      state[release] = kFree;
      continue;
    }

    double alpha = 1.0;
    int blocking = -1;
    std::size_t blocking_k = 0;
    for (std::size_t k = 0; k < free.size(); ++k) {
      const int i = free[k];
      const double pi = p_free(k);
      double limit = kInf;
      if (pi < 0.0 && std::isfinite(lo(i))) limit = (lo(i) - x(i)) / pi;
      if (pi > 0.0 && std::isfinite(hi(i))) limit = (hi(i) - x(i)) / pi;
      limit = std::max(0.0, limit);
      if (limit < alpha) {
        alpha = limit;
        blocking = i;
        blocking_k = k;
      }
    }
    for (std::size_t k = 0; k < free.size(); ++k) {
      const int i = free[k];
      x(i) = std::clamp(x(i) + alpha * p_free(k), lo(i), hi(i));
    }
    if (blocking >= 0) {
      const bool lower_side = p_free(static_cast<Eigen::Index>(blocking_k)) < 0.0;
      x(blocking) = lower_side ? lo(blocking) : hi(blocking);
      state[blocking] = lower_side ? kAtLower : kAtUpper;
    } else {
      at_face_minimum = true;
    }
  }
  out.mu = Vector::Zero(n);
  out.nu = Vector::Zero(n);
  out.x = std::move(x);
  out.state = std::move(state);
  out.status = QPStatus::MaxIter;
  return out;
}

bool is_feasible(const QPProblem& p, const Vector& x, double eq_tol) {
  if (x.size() != p.num_variables()) return false;
  for (int i = 0; i < x.size(); ++i) {
    if (!(x(i) >= p.lower(i) && x(i) <= p.upper(i))) return false;
  }
  if (p.num_equalities() == 0) return true;
  return (p.eq_matrix * x - p.eq_rhs).cwiseAbs().maxCoeff() <= eq_tol;
}

struct FeasibleStart {
  bool found = false;
  Vector x;
  std::vector<std::int8_t> state;
  int iterations = 0;
};

// Phase 1: minimise 1't + (delta/2)(|x - x_ref|^2 + |t|^2) over A x + D t = b,
// bounds on x, t >= 0. The l1 term is an exact penalty, so t = 0 whenever the
// constraints are consistent and delta is small enough.
FeasibleStart phase_one(const QPProblem& p, int max_iter, double eq_tol) {
  const int n = p.num_variables();
  const int m = p.num_equalities();
  FeasibleStart start;
  Vector x_ref = Vector::Zero(n);
  if (m == 0) {
    start.x = x_ref.cwiseMax(p.lower).cwiseMin(p.upper);
    start.state.assign(n, kFree);
    start.found = true;
    return start;
  }
  const EqQPSolution eq = solve_eq_qp(p.hessian, p.gradient, p.eq_matrix, p.eq_rhs);
  x_ref = eq.x.cwiseMax(p.lower).cwiseMin(p.upper);
  if (is_feasible(p, eq.x, eq_tol)) {
    start.x = eq.x;
    start.state.assign(n, kFree);
    start.found = true;
    return start;
  }

  const Vector residual = p.eq_rhs - p.eq_matrix * x_ref;
  Matrix a_aux(m, n + m);
  a_aux.leftCols(n) = p.eq_matrix;
  a_aux.rightCols(m).setZero();
  for (int j = 0; j < m; ++j) a_aux(j, n + j) = residual(j) >= 0.0 ? 1.0 : -1.0;
  Vector lo_aux(n + m);
  Vector hi_aux(n + m);
  lo_aux << p.lower, Vector::Zero(m);
  hi_aux << p.upper, Vector::Constant(m, kInf);
  Vector y0(n + m);
  y0 << x_ref, residual.cwiseAbs();

  double delta = 1e-6;
  for (int attempt = 0; attempt < 3; ++attempt, delta *= 1e-3) {
    const Matrix h_aux = delta * Matrix::Identity(n + m, n + m);
    Vector g_aux(n + m);
    g_aux << -delta * x_ref, Vector::Ones(m);
    ActiveSetOutcome aux = primal_active_set(h_aux, g_aux, a_aux, lo_aux, hi_aux, y0,
                                             std::vector<std::int8_t>(n + m, kFree),
                                             max_iter + 2 * (n + m));
    start.iterations += aux.iterations;
    if (aux.status != QPStatus::Solved) continue;
    const Vector x = aux.x.head(n);
    if (aux.x.tail(m).maxCoeff() <= eq_tol && is_feasible(p, x, eq_tol)) {
      start.x = x;
      start.state.assign(aux.state.begin(), aux.state.begin() + n);
      start.found = true;
      return start;
    }
  }
  return start;
}

}  // namespace

EqQPSolution solve_eq_qp(const Matrix& hessian, const Vector& gradient, const Matrix& eq_matrix,
                         const Vector& eq_rhs) {
  const int n = static_cast<int>(gradient.size());
  const int m = static_cast<int>(eq_rhs.size());
  if (hessian.rows() != n || hessian.cols() != n || eq_matrix.rows() != m ||
      (m > 0 && eq_matrix.cols() != n)) {
    throw Error(ErrorCode::ShapeMismatch, "solve_eq_qp: inconsistent dimensions");
  }
  if (m > 0 && !full_row_rank(eq_matrix)) {
    throw Error(ErrorCode::RankDeficientConstraints, "equality matrix lacks full row rank");
  }
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  Matrix a = m > 0 ? eq_matrix : Matrix(0, n);
  EqQPSolution out;
  solve_reduced_kkt(hessian, a, all, -gradient, eq_rhs, out.x, out.multipliers);
  return out;
}

QPSolution solve_box_qp(const QPProblem& problem, int max_iter, const QPWarmStart* warm) {
  problem.validate();
  const int n = problem.num_variables();
  const int m = problem.num_equalities();
  const double eq_tol = 1e-9 * (1.0 + (m > 0 ? problem.eq_rhs.cwiseAbs().maxCoeff() : 0.0));
  const Matrix a = m > 0 ? problem.eq_matrix : Matrix(0, n);

  QPSolution sol;
  Vector x;
  std::vector<std::int8_t> state;
  bool have_start = false;
  if (warm != nullptr && is_feasible(problem, warm->x, eq_tol)) {
    x = warm->x;
    state.assign(n, kFree);
    have_start = true;
    for (int i : warm->fixed) {
      if (i < 0 || i >= n) continue;
      if (x(i) == problem.lower(i)) {
        state[i] = kAtLower;
      } else if (x(i) == problem.upper(i)) {
        state[i] = kAtUpper;
      }
    }
  }
  if (!have_start) {
    if (m > 0 && !full_row_rank(problem.eq_matrix)) {
      throw Error(ErrorCode::RankDeficientConstraints, "equality matrix lacks full row rank");
    }
    FeasibleStart start = phase_one(problem, max_iter, eq_tol);
    sol.iterations += start.iterations;
    if (!start.found) {
      sol.x = Vector::Zero(n);
      sol.eq_multipliers = Vector::Zero(m);
      sol.lower_multipliers = Vector::Zero(n);
      sol.upper_multipliers = Vector::Zero(n);
      sol.status = QPStatus::Infeasible;
      return sol;
    }
    x = std::move(start.x);
    state = std::move(start.state);
  }

  ActiveSetOutcome res = primal_active_set(problem.hessian, problem.gradient, a, problem.lower,
                                           problem.upper, std::move(x), std::move(state), max_iter);
  sol.x = std::move(res.x);
  sol.eq_multipliers = std::move(res.lambda);
  sol.lower_multipliers = std::move(res.mu);
  sol.upper_multipliers = std::move(res.nu);
  sol.iterations += res.iterations;
  sol.status = res.status;
  return sol;
}

double qp_stationarity(const QPProblem& problem, const QPSolution& solution) {
  Vector r = problem.hessian * solution.x + problem.gradient - solution.lower_multipliers +
             solution.upper_multipliers;
  if (problem.num_equalities() > 0) r += problem.eq_matrix.transpose() * solution.eq_multipliers;
  return r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace dsmpc
