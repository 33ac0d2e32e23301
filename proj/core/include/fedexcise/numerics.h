// Copyright 2026 The fedexcise Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDEXCISE_NUMERICS_H_
#define FEDEXCISE_NUMERICS_H_

// Dense real linear algebra on small column-major matrices. Every kernel
// uses a fixed loop nest, so results are bit-identical across runs.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace fedexcise {

class Matrix {
 public:
  Matrix() = default;
  // Zero-filled rows x cols matrix.
  Matrix(std::size_t rows, std::size_t cols);
  // Takes column-major entries. Throws UsageError on size mismatch or
  // non-finite entries.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix Identity(std::size_t n);
  static Matrix FromRows(std::size_t rows, std::size_t cols,
                         std::span<const double> row_major);
  // Stacks equally sized vectors as columns.
  static Matrix FromColumns(const std::vector<std::vector<double>>& columns);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[c * rows_ + r];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[c * rows_ + r];
  }

  std::span<double> col(std::size_t c) {
    return {data_.data() + c * rows_, rows_};
  }
  std::span<const double> col(std::size_t c) const {
    return {data_.data() + c * rows_, rows_};
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Matrix Transposed() const;
  // Columns [first, first + count).
  Matrix ColumnRange(std::size_t first, std::size_t count) const;
  Matrix SelectColumns(std::span<const std::size_t> indices) const;

  bool AllFinite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A * B. Throws UsageError naming both shapes when a.cols != b.rows.
Matrix Multiply(const Matrix& a, const Matrix& b);
// A^T * B without materializing the transpose.
Matrix TransposeMultiply(const Matrix& a, const Matrix& b);
// A * B^T.
Matrix MultiplyTranspose(const Matrix& a, const Matrix& b);

std::vector<double> MatVec(const Matrix& a, std::span<const double> x);
std::vector<double> TransposeMatVec(const Matrix& a, std::span<const double> x);

// Rows of `a` at the given indices, in order.
Matrix SelectRows(const Matrix& a, std::span<const std::size_t> rows);

Matrix Add(const Matrix& a, const Matrix& b);
Matrix Subtract(const Matrix& a, const Matrix& b);
Matrix Scale(const Matrix& a, double s);

double Dot(std::span<const double> a, std::span<const double> b);
double Norm(std::span<const double> a);
double FrobeniusNorm(const Matrix& a);
double MaxAbs(const Matrix& a);
// max |A^T A - I| entrywise.
double OrthonormalityError(const Matrix& a);

struct SvdResult {
  Matrix u;                              // rows x k, orthonormal columns
  std::vector<double> singular_values;   // k = min(rows, cols), descending
  Matrix v;                              // cols x k, orthonormal columns
};

// Thin SVD via one-sided Jacobi. `role` names the matrix in error messages.
// Throws UsageError on empty or non-finite input and NumericError if the
// rotations fail to converge.
SvdResult ThinSvd(const Matrix& a, std::string_view role = "matrix");

// Throws NumericError if any SvdResult invariant is violated for `a`.
void CheckSvdInvariants(const Matrix& a, const SvdResult& svd,
                        std::string_view role = "matrix");

// Rank-revealing modified Gram-Schmidt (two passes). Columns whose residual
// norm after projection is <= tol are dropped.
Matrix OrthonormalColumns(const Matrix& a, double tol);

// Extends orthonormal columns q (n x k) to an orthonormal basis of R^n
// (n x n). The first k columns are q unchanged.
Matrix CompleteOrthonormalBasis(const Matrix& q);

}  // namespace fedexcise

#endif  // FEDEXCISE_NUMERICS_H_
