// SPDX-License-Identifier: Apache-2.0
//
// Small dense linear algebra in double precision. Everything here is sized
// for T x T task systems (T <= 8) and tall gradient matrices with few columns.

#ifndef MTLQE_LINALG_HPP_
#define MTLQE_LINALG_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace mtlqe::linalg {

using Vector = std::vector<double>;

// Row-major dense matrix with at least one row and one column.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  // Builds a rows x columns.size() matrix whose j-th column is columns[j].
  static Matrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector column(std::size_t c) const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Matrix transpose() const;
  bool all_finite() const;
  // Largest absolute entry.
  double max_abs() const;
  double frobenius_norm() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

Matrix multiply(const Matrix& a, const Matrix& b);
Vector multiply(const Matrix& a, std::span<const double> x);

// M = G^T G. Symmetric by construction: the lower triangle is a copy of the upper.
Matrix gram(const Matrix& g);

struct SymEigen {
  Vector eigenvalues;  // descending
  Matrix eigenvectors;  // column k pairs with eigenvalues[k]
};

// Cyclic Jacobi eigendecomposition. Throws Errc::kNonSymmetric when
// |M_ij - M_ji| exceeds 1e-10 * max|M|.
SymEigen eigh_sym(const Matrix& m);

// Solves M x = b for symmetric positive-definite M via Cholesky.
// Throws Errc::kSingular unless lambda_min > 1e-12 * lambda_max.
Vector solve_spd(const Matrix& m, std::span<const double> b);

// Gaussian elimination with partial pivoting for general square systems.
// Throws Errc::kSingular when a pivot falls below rel_tol * max|A|.
Vector solve_general(const Matrix& a, std::span<const double> b, double rel_tol = 1e-12);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);

}  // namespace mtlqe::linalg

#endif  // MTLQE_LINALG_HPP_
