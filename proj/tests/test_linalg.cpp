// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtlqe/error.hpp"
#include "mtlqe/linalg.hpp"
#include "test_util.hpp"

namespace mtlqe::linalg {
namespace {

using testing::naive_gram;
using testing::random_matrix;

TEST(Gram, IdentityColumnsGiveIdentity) {
  EXPECT_EQ(gram(Matrix::identity(2)), Matrix::identity(2));
}

TEST(Gram, SingleColumnIsSquaredNorm) {
  const Matrix m = gram(Matrix::from_rows({{3}, {4}}));
  ASSERT_EQ(m.rows(), 1u);
  EXPECT_DOUBLE_EQ(m(0, 0), 25.0);
}

TEST(Gram, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_matrix(rng, 5, 3);
    const Matrix m = gram(g);
    const Matrix ref = naive_gram(g);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) {
        EXPECT_NEAR(m(a, b), ref(a, b), 1e-12);
        EXPECT_EQ(m(a, b), m(b, a));
      }
  }
}

TEST(EighSym, DiagonalSortedDescending) {
  const SymEigen e = eigh_sym(Matrix::from_rows({{1, 0}, {0, 2}}));
  EXPECT_DOUBLE_EQ(e.eigenvalues[0], 2.0);
  EXPECT_DOUBLE_EQ(e.eigenvalues[1], 1.0);
  // Permutation of the identity, up to sign.
  EXPECT_DOUBLE_EQ(std::abs(e.eigenvectors(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(e.eigenvectors(0, 1)), 1.0);
}

TEST(EighSym, Classic2x2) {
  const SymEigen e = eigh_sym(Matrix::from_rows({{2, 1}, {1, 2}}));
  EXPECT_NEAR(e.eigenvalues[0], 3.0, 1e-14);
  EXPECT_NEAR(e.eigenvalues[1], 1.0, 1e-14);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(e.eigenvectors(0, 0)), s, 1e-14);
  EXPECT_NEAR(e.eigenvectors(0, 0) * e.eigenvectors(1, 0), 0.5, 1e-14);
  EXPECT_NEAR(e.eigenvectors(0, 1) * e.eigenvectors(1, 1), -0.5, 1e-14);
}

TEST(EighSym, ReconstructsRandomSymmetric) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_matrix(rng, 6, 6);
    Matrix m(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) m(i, j) = a(i, j) + a(j, i);
    const SymEigen e = eigh_sym(m);
    for (std::size_t k = 0; k + 1 < 6; ++k) EXPECT_GE(e.eigenvalues[k], e.eigenvalues[k + 1]);
    double worst = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double r = 0.0;
        for (std::size_t k = 0; k < 6; ++k)
          r += e.eigenvectors(i, k) * e.eigenvalues[k] * e.eigenvectors(j, k);
        worst = std::max(worst, std::abs(r - m(i, j)));
      }
    EXPECT_LE(worst, 1e-8);
  }
}

TEST(EighSym, RejectsNonSymmetric) {
  try {
    eigh_sym(Matrix::from_rows({{1, 2}, {0, 1}}));
    FAIL() << "expected NonSymmetric";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNonSymmetric);
  }
}

TEST(SolveSpd, Identity) {
  const Vector x = solve_spd(Matrix::identity(2), Vector{2, 5});
  EXPECT_DOUBLE_EQ(x[0], 2.0);
  EXPECT_DOUBLE_EQ(x[1], 5.0);
}

TEST(SolveSpd, Diagonal) {
  const Vector x = solve_spd(Matrix::from_rows({{2, 0}, {0, 4}}), Vector{2, 4});
  EXPECT_DOUBLE_EQ(x[0], 1.0);
  EXPECT_DOUBLE_EQ(x[1], 1.0);
}

TEST(SolveSpd, MultiplyBack) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = testing::random_spd(rng, 4);
    const Vector b = testing::random_vector(rng, 4);
    const Vector x = solve_spd(m, b);
    const Vector mb = testing::naive_matvec(m, x);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mb[i], b[i], 1e-10);
  }
}

TEST(SolveSpd, SingularThrows) {
  try {
    solve_spd(Matrix::from_rows({{1, 1}, {1, 1}}), Vector{1, 1});
    FAIL() << "expected Singular";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kSingular);
  }
}

TEST(SolveGeneral, PivotsPastZeroDiagonal) {
  const Vector x = solve_general(Matrix::from_rows({{0, 1}, {1, 0}}), Vector{3, 4});
  EXPECT_DOUBLE_EQ(x[0], 4.0);
  EXPECT_DOUBLE_EQ(x[1], 3.0);
}

}  // namespace
}  // namespace mtlqe::linalg
