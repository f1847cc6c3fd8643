// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense real linear algebra shared by every other module. Storage is Eigen;
// the functions here add the contracts (symmetry/PSD checks, damping
// placement, Kronecker conventions) that the rest of the library relies on.

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "wdlab/error.hpp"

namespace wdlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, Q orthonormal.
struct SymmetricEigen {
  Vector eigenvalues;
  Matrix eigenvectors;
};

/// How damping is attached to a Kronecker-factored block S (x) A.
///  - factored: sqrt(lambda) is added to each factor, (A+sqrt(l)I)^-1 V (S+sqrt(l)I)^-1
///  - dense:    lambda is added to the assembled block, (S (x) A + l I)^-1 vec(V)
enum class DampingMode { factored, dense };

inline std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw StructuralError(std::string(what) + ": expected square matrix, got " + shape_of(m));
  }
}

inline double frobenius_norm_sq(const Matrix& m) { return m.squaredNorm(); }

inline double trace(const Matrix& m) {
  require_square(m, "trace");
  return m.trace();
}

/// Relative asymmetry ||M - M^T||_F / max(||M||_F, tiny).
inline double relative_asymmetry(const Matrix& m) {
  const double scale = m.norm();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).norm() / scale;
}

inline SymmetricEigen sym_eig(const Matrix& m) {
  require_square(m, "sym_eig");
  if (relative_asymmetry(m) > 1e-10) {
    throw StructuralError("sym_eig: input is not symmetric (relative asymmetry " +
                          std::to_string(relative_asymmetry(m)) + ")");
  }
  if (!m.allFinite()) throw NumericalError("sym_eig: non-finite entries");
  if (m.rows() == 0) return {Vector(0), Matrix(0, 0)};
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("sym_eig: eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

/// Rebuilds Q diag(f(mu)) Q^T.
template <typename F>
Matrix spectral_map(const SymmetricEigen& eig, F&& f) {
  Vector mapped = eig.eigenvalues.unaryExpr(std::forward<F>(f));
  Matrix out = eig.eigenvectors * mapped.asDiagonal() * eig.eigenvectors.transpose();
  return 0.5 * (out + out.transpose());
}

/// (M + lambda I)^-1 for symmetric PSD M.
inline Matrix damped_inverse(const Matrix& m, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("damped_inverse: lambda must be > 0");
  const SymmetricEigen eig = sym_eig(m);
  if (eig.eigenvalues.size() > 0 && eig.eigenvalues.minCoeff() < -1e-8 * m.norm()) {
    throw DomainError("damped_inverse: matrix is not positive semi-definite");
  }
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i) {
    if (!(eig.eigenvalues[i] + lambda > 0.0)) {
      throw NumericalError("damped_inverse: damped spectrum is not positive");
    }
  }
  Matrix inv = spectral_map(eig, [lambda](double mu) { return 1.0 / (mu + lambda); });
  if (!inv.allFinite()) throw NumericalError("damped_inverse: non-finite result");
  return inv;
}

/// Kronecker product S (x) A with S the outer (block) index.
inline Matrix kron(const Matrix& s, const Matrix& a) {
  Matrix out(s.rows() * a.rows(), s.cols() * a.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      out.block(i * a.rows(), j * a.cols(), a.rows(), a.cols()) = s(i, j) * a;
    }
  }
  return out;
}

/// Column-stacking vec(V).
inline Vector vec(const Matrix& v) {
  return Eigen::Map<const Vector>(v.data(), v.size());
}

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw StructuralError("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// A^-1 V S^-1 with damping attached per `mode`. A is n1 x n1, S is n2 x n2,
/// V is n1 x n2. In factored mode the product-space damping scale is lambda.
inline Matrix kron_precondition(const Matrix& a, const Matrix& s, const Matrix& v, double lambda,
                                DampingMode mode = DampingMode::factored) {
  require_square(a, "kron_precondition(A)");
  require_square(s, "kron_precondition(S)");
  if (v.rows() != a.rows() || v.cols() != s.rows()) {
    throw StructuralError("kron_precondition: V is " + shape_of(v) + ", factors are " +
                          shape_of(a) + " and " + shape_of(s));
  }
  if (!(lambda > 0.0)) throw DomainError("kron_precondition: lambda must be > 0");
  if (mode == DampingMode::factored) {
    const double root = std::sqrt(lambda);
    return damped_inverse(a, root) * v * damped_inverse(s, root);
  }
  // vec(A V S) = (S^T (x) A) vec(V); factors are symmetric.
  const Matrix block = kron(s, a);
  const Vector solved = damped_inverse(block, lambda) * vec(v);
  return unvec(solved, v.rows(), v.cols());
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// ||a - b||_F / max(||b||_F, floor). Used for every identity check.
template <typename DA, typename DB>
double relative_error(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                      double floor = 1e-300) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

inline double relative_error(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

}  // namespace wdlab
