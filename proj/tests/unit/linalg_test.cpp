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

#include <gtest/gtest.h>

#include "support.hpp"
#include "wdlab/linalg.hpp"

namespace wdlab {
namespace {

using testing::random_matrix;
using testing::random_psd;
using testing::random_symmetric;

TEST(SymEig, IdentityAndDiagonal) {
  const SymmetricEigen e = sym_eig(Matrix::Identity(2, 2));
  EXPECT_DOUBLE_EQ(e.eigenvalues[0], 1.0);
  EXPECT_DOUBLE_EQ(e.eigenvalues[1], 1.0);
  EXPECT_LT((e.eigenvectors.transpose() * e.eigenvectors - Matrix::Identity(2, 2)).norm(), 1e-12);

  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 5.0;
  d(1, 1) = 2.0;
  const SymmetricEigen e2 = sym_eig(d);
  EXPECT_NEAR(e2.eigenvalues[0], 2.0, 1e-14);
  EXPECT_NEAR(e2.eigenvalues[1], 5.0, 1e-14);
}

TEST(SymEig, ReconstructsRandomSymmetric) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_symmetric(rng, 6);
    const SymmetricEigen e = sym_eig(m);
    const Matrix& q = e.eigenvectors;
    const Matrix back = q * e.eigenvalues.asDiagonal() * q.transpose();
    EXPECT_LE((back - m).norm(), 1e-10 * m.norm());
    EXPECT_LE((q.transpose() * q - Matrix::Identity(6, 6)).norm(), 1e-10);
    for (Eigen::Index i = 1; i < 6; ++i) EXPECT_LE(e.eigenvalues[i - 1], e.eigenvalues[i]);
  }
}

TEST(SymEig, RejectsBadInput) {
  EXPECT_THROW(sym_eig(Matrix::Zero(2, 3)), StructuralError);
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = 1.0;
  EXPECT_THROW(sym_eig(a), StructuralError);
}

TEST(DampedInverse, ClosedForms) {
  EXPECT_LT((damped_inverse(Matrix::Zero(3, 3), 2.0) - 0.5 * Matrix::Identity(3, 3)).norm(), 1e-15);
  EXPECT_LT((damped_inverse(Matrix::Identity(3, 3), 1.0) - 0.5 * Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(DampedInverse, MultipliesBackToIdentity) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_psd(rng, 5);
    const Matrix inv = damped_inverse(m, 1e-3);
    Matrix damped = m;
    damped.diagonal().array() += 1e-3;
    EXPECT_LE((damped * inv - Matrix::Identity(5, 5)).norm(), 1e-8);
    EXPECT_LE(relative_asymmetry(inv), 1e-10);
  }
}

TEST(DampedInverse, EigenvaluesAreShiftedReciprocals) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix m = random_psd(rng, 6, 3);
    const double lambda = 0.25;
    const Vector mu = sym_eig(m).eigenvalues;
    Vector got = sym_eig(damped_inverse(m, lambda)).eigenvalues;
    std::sort(got.data(), got.data() + got.size());
    Vector want = (mu.array() + lambda).inverse();
    std::sort(want.data(), want.data() + want.size());
    EXPECT_LE(relative_error(got, want), 1e-8);
  }
}

TEST(DampedInverse, Errors) {
  EXPECT_THROW(damped_inverse(Matrix::Identity(2, 2), 0.0), DomainError);
  EXPECT_THROW(damped_inverse(Matrix::Identity(2, 2), -1.0), DomainError);
  EXPECT_THROW(damped_inverse(-Matrix::Identity(2, 2), 1.0), DomainError);
}

TEST(KronPrecondition, IdentityFactors) {
  Rng rng(1);
  const Matrix v = random_matrix(rng, 3, 2);
  const Matrix out = kron_precondition(Matrix::Identity(3, 3), Matrix::Identity(2, 2), v, 1e-12);
  // Each factor carries sqrt(lambda) = 1e-6.
  EXPECT_LE(relative_error(out, Matrix(v / ((1.0 + 1e-6) * (1.0 + 1e-6)))), 1e-14);
  EXPECT_LE((out - v).norm(), 2.1e-6 * v.norm());
}

TEST(KronPrecondition, DiagonalScaling) {
  Matrix v(2, 1);
  v << 8.0, 4.0;
  const Matrix out = kron_precondition(4.0 * Matrix::Identity(2, 2), Matrix::Identity(1, 1), v, 1e-300);
  EXPECT_NEAR(out(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(out(1, 0), 1.0, 1e-12);
}

TEST(KronPrecondition, MatchesDenseKroneckerSolve) {
  Rng rng(7);
  for (Eigen::Index n1 = 1; n1 <= 6; ++n1) {
    for (Eigen::Index n2 = 1; n2 <= 6; ++n2) {
      const Matrix a = random_psd(rng, n1);
      const Matrix s = random_psd(rng, n2);
      const Matrix v = random_matrix(rng, n1, n2);
      const double lambda = 0.3;
      Matrix ad = a, sd = s;
      ad.diagonal().array() += std::sqrt(lambda);
      sd.diagonal().array() += std::sqrt(lambda);
      // vec is column-stacking, so vec(A X S) = (S (x) A) vec(X).
      const Vector solved = kron(sd, ad).lu().solve(vec(v));
      const Matrix want = unvec(solved, n1, n2);
      EXPECT_LE(relative_error(kron_precondition(a, s, v, lambda), want), 1e-8) << n1 << "x" << n2;
    }
  }
}

TEST(KronPrecondition, DenseModeDampsTheProduct) {
  Rng rng(8);
  const Matrix a = random_psd(rng, 3);
  const Matrix s = random_psd(rng, 2);
  const Matrix v = random_matrix(rng, 3, 2);
  Matrix block = kron(s, a);
  block.diagonal().array() += 0.1;
  const Matrix want = unvec(block.lu().solve(vec(v)), 3, 2);
  EXPECT_LE(relative_error(kron_precondition(a, s, v, 0.1, DampingMode::dense), want), 1e-10);
}

TEST(KronPrecondition, ShapeMismatch) {
  EXPECT_THROW(kron_precondition(Matrix::Identity(2, 2), Matrix::Identity(3, 3), Matrix::Zero(3, 2), 1.0),
               StructuralError);
}

TEST(Norms, FrobeniusAndTrace) {
  EXPECT_EQ(frobenius_norm_sq(Matrix::Zero(2, 2)), 0.0);
  EXPECT_EQ(frobenius_norm_sq(Matrix::Constant(1, 1, 2.0)), 4.0);
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  EXPECT_EQ(frobenius_norm_sq(m), 30.0);
  EXPECT_EQ(trace(Matrix::Identity(3, 3)), 3.0);
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 2, 5;
  EXPECT_EQ(trace(d), 7.0);
  Rng rng(2);
  const Matrix r = random_matrix(rng, 4, 4);
  EXPECT_DOUBLE_EQ(trace(r), r(0, 0) + r(1, 1) + r(2, 2) + r(3, 3));
  EXPECT_THROW(trace(Matrix::Zero(2, 3)), StructuralError);
}

TEST(Kron, TraceFactorizes) {
  Rng rng(4);
  const Matrix a = random_psd(rng, 3);
  const Matrix s = random_psd(rng, 4);
  EXPECT_NEAR(trace(kron(s, a)), trace(s) * trace(a), 1e-10 * trace(s) * trace(a));
}

}  // namespace
}  // namespace wdlab
