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

#include "dsmpc/numerics.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "dsmpc/error.hpp"

namespace dsmpc {

namespace {

std::uint64_t splitmix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix(splitmix(splitmix(base) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

bool all_finite(const Vector& v) noexcept { return v.allFinite(); }
bool all_finite(const Matrix& m) noexcept { return m.allFinite(); }

LuFactorization::LuFactorization(Matrix a) : lu_(std::move(a)) {
  const int n = static_cast<int>(lu_.rows());
  if (lu_.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "LU requires a square matrix");
  }
  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), 0);
  for (int k = 0; k < n; ++k) {
    int pivot = k;
    double best = std::abs(lu_(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double v = std::abs(lu_(i, k));
      if (v > best) {
        best = v;
        pivot = i;
      }
    }
    if (!(best > kPivotThreshold)) {
      throw Error(ErrorCode::SingularMatrix,
                  "pivot " + std::to_string(best) + " at column " + std::to_string(k));
    }
    if (pivot != k) {
      lu_.row(k).swap(lu_.row(pivot));
      std::swap(perm_[k], perm_[pivot]);
    }
    const double inv = 1.0 / lu_(k, k);
    const int rest = n - k - 1;
    if (rest == 0) continue;
    lu_.col(k).tail(rest) *= inv;
    lu_.bottomRightCorner(rest, rest).noalias() -=
        lu_.col(k).tail(rest) * lu_.row(k).tail(rest);
  }
}

Vector LuFactorization::solve(const Vector& b) const {
  const int n = size();
  if (b.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "rhs length does not match LU size");
  }
  Vector y(n);
  for (int i = 0; i < n; ++i) y(i) = b(perm_[i]);
  // Forward substitution with unit lower factor, then back substitution.
  for (int i = 0; i < n; ++i) {
    y(i) -= lu_.row(i).head(i).dot(y.head(i));
  }
  for (int i = n - 1; i >= 0; --i) {
    const int rest = n - i - 1;
    y(i) = (y(i) - lu_.row(i).tail(rest).dot(y.tail(rest))) / lu_(i, i);
  }
  return y;
}

Vector lu_solve(const Matrix& a, const Vector& b) {
  if (a.rows() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "lu_solve: rhs length mismatch");
  }
  return LuFactorization(a).solve(b);
}

Vector cholesky_solve(const Matrix& a, const Vector& b) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n || b.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "cholesky_solve: dimension mismatch");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::NotPositiveDefinite, "matrix is not symmetric");
  }
  Matrix l = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "non-positive pivot at column " + std::to_string(j));
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    y(i) = (b(i) - l.row(i).head(i).dot(y.head(i))) / l(i, i);
  }
  Vector x(n);
  for (int i = n - 1; i >= 0; --i) {
    const int rest = n - i - 1;
    x(i) = (y(i) - l.col(i).tail(rest).dot(x.tail(rest))) / l(i, i);
  }
  return x;
}

Matrix finite_diff_jacobian(const VectorMap& f, const Vector& x, double h) {
  if (!(h > 0.0)) {
    throw Error(ErrorCode::ShapeMismatch, "finite difference step must be positive");
  }
  const Vector f0 = f(x);
  if (!f0.allFinite()) {
    throw Error(ErrorCode::NonFiniteOutput, "f(x) is not finite");
  }
  Matrix jac(f0.size(), x.size());
  Vector probe = x;
  for (int j = 0; j < x.size(); ++j) {
    probe(j) = x(j) + h;
    const Vector fp = f(probe);
    probe(j) = x(j) - h;
    const Vector fm = f(probe);
    probe(j) = x(j);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw Error(ErrorCode::NonFiniteOutput,
                  "non-finite output probing coordinate " + std::to_string(j));
    }
    if (fp.size() != f0.size() || fm.size() != f0.size()) {
      throw Error(ErrorCode::ShapeMismatch, "f changed output length between probes");
    }
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

}  // namespace dsmpc
