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

#include "fedexcise/numerics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "fedexcise/errors.h"
#include "spdlog/fmt/fmt.h"

namespace fedexcise {
namespace {

constexpr int kMaxJacobiSweeps = 80;
constexpr double kJacobiTolerance = 1e-15;

std::string Shape(const Matrix& m) {
  return fmt::format("{}x{}", m.rows(), m.cols());
}

void RequireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(fmt::format("{}: shape mismatch {} vs {}", op, Shape(a),
                                 Shape(b)));
  }
}

// Projects `v` against the columns [0, count) of q, twice.
void Reorthogonalize(const Matrix& q, std::size_t count, std::span<double> v) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < count; ++j) {
      auto qj = q.col(j);
      const double c = Dot(qj, v);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * qj[i];
    }
  }
}

// Appends orthonormal columns to `q` (whose first `count` columns are
// orthonormal) until it has `target` columns, choosing at each step the
// standard basis vector with the largest residual.
Matrix ExtendOrthonormal(const Matrix& q, std::size_t count,
                         std::size_t target) {
  const std::size_t n = q.rows();
  Matrix out(n, target);
  for (std::size_t j = 0; j < count; ++j) {
    std::copy(q.col(j).begin(), q.col(j).end(), out.col(j).begin());
  }
  std::vector<double> residual_sq(n, 1.0);
  for (std::size_t j = 0; j < count; ++j) {
    auto qj = q.col(j);
    for (std::size_t i = 0; i < n; ++i) residual_sq[i] -= qj[i] * qj[i];
  }
  for (std::size_t j = count; j < target; ++j) {
    const std::size_t best = static_cast<std::size_t>(
        std::max_element(residual_sq.begin(), residual_sq.end()) -
        residual_sq.begin());
    std::vector<double> v(n, 0.0);
    v[best] = 1.0;
    Reorthogonalize(out, j, v);
    const double norm = Norm(v);
    if (norm < 1e-8) {
      throw NumericError("orthonormal completion lost rank");
    }
    auto dst = out.col(j);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = v[i] / norm;
      residual_sq[i] -= dst[i] * dst[i];
    }
    residual_sq[best] = -1.0;
  }
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows_ * cols_) {
    throw UsageError(fmt::format("Matrix: {} entries for a {}x{} matrix",
                                 data_.size(), rows_, cols_));
  }
  if (!AllFinite()) throw UsageError("Matrix: non-finite entry");
}

Matrix Matrix::Identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::FromRows(std::size_t rows, std::size_t cols,
                        std::span<const double> row_major) {
  if (row_major.size() != rows * cols) {
    throw UsageError("Matrix::FromRows: entry count mismatch");
  }
  std::vector<double> entries(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      entries[c * rows + r] = row_major[r * cols + c];
    }
  }
  return Matrix(rows, cols, std::move(entries));
}

Matrix Matrix::FromColumns(const std::vector<std::vector<double>>& columns) {
  if (columns.empty()) return Matrix();
  const std::size_t rows = columns.front().size();
  std::vector<double> entries;
  entries.reserve(rows * columns.size());
  for (const auto& c : columns) {
    if (c.size() != rows) {
      throw UsageError("Matrix::FromColumns: ragged columns");
    }
    entries.insert(entries.end(), c.begin(), c.end());
  }
  return Matrix(rows, columns.size(), std::move(entries));
}

Matrix Matrix::Transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t c = 0; c < cols_; ++c) {
    for (std::size_t r = 0; r < rows_; ++r) t(c, r) = (*this)(r, c);
  }
  return t;
}

Matrix Matrix::ColumnRange(std::size_t first, std::size_t count) const {
  if (first + count > cols_) {
    throw UsageError("Matrix::ColumnRange: out of range");
  }
  Matrix out(rows_, count);
  std::copy(data_.begin() + first * rows_,
            data_.begin() + (first + count) * rows_, out.data_.begin());
  return out;
}

Matrix Matrix::SelectColumns(std::span<const std::size_t> indices) const {
  Matrix out(rows_, indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= cols_) {
      throw UsageError("Matrix::SelectColumns: index out of range");
    }
    auto src = col(indices[j]);
    std::copy(src.begin(), src.end(), out.col(j).begin());
  }
  return out;
}

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

Matrix Multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw UsageError(fmt::format("matmul: cannot multiply {} by {}", Shape(a),
                                 Shape(b)));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    auto cj = c.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj == 0.0) continue;
      auto ak = a.col(k);
      for (std::size_t i = 0; i < a.rows(); ++i) cj[i] += ak[i] * bkj;
    }
  }
  return c;
}

Matrix TransposeMultiply(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw UsageError(fmt::format("matmul: cannot multiply transpose of {} by {}",
                                 Shape(a), Shape(b)));
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < a.cols(); ++i) c(i, j) = Dot(a.col(i), b.col(j));
  }
  return c;
}

Matrix MultiplyTranspose(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw UsageError(fmt::format("matmul: cannot multiply {} by transpose of {}",
                                 Shape(a), Shape(b)));
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t k = 0; k < a.cols(); ++k) {
    auto ak = a.col(k);
    auto bk = b.col(k);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double bjk = bk[j];
      if (bjk == 0.0) continue;
      auto cj = c.col(j);
      for (std::size_t i = 0; i < a.rows(); ++i) cj[i] += ak[i] * bjk;
    }
  }
  return c;
}

std::vector<double> MatVec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw UsageError(fmt::format("matvec: {} matrix with length-{} vector",
                                 Shape(a), x.size()));
  }
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    auto ak = a.col(k);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] += ak[i] * xk;
  }
  return y;
}

std::vector<double> TransposeMatVec(const Matrix& a,
                                    std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw UsageError(fmt::format("matvec: transpose of {} with length-{} vector",
                                 Shape(a), x.size()));
  }
  std::vector<double> y(a.cols());
  for (std::size_t k = 0; k < a.cols(); ++k) y[k] = Dot(a.col(k), x);
  return y;
}

Matrix SelectRows(const Matrix& a, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), a.cols());
  for (std::size_t c = 0; c < a.cols(); ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= a.rows()) {
        throw UsageError(fmt::format("select_rows: row {} out of range for {}x{}",
                                     rows[i], a.rows(), a.cols()));
      }
      out(i, c) = a(rows[i], c);
    }
  }
  return out;
}

Matrix Add(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "add");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

Matrix Subtract(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "subtract");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

Matrix Scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.data()) x *= s;
  return c;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw UsageError(
        fmt::format("dot: length mismatch {} vs {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double Norm(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

double FrobeniusNorm(const Matrix& a) { return Norm(a.data()); }

double MaxAbs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

double OrthonormalityError(const Matrix& a) {
  Matrix g = TransposeMultiply(a, a);
  double err = 0.0;
  for (std::size_t j = 0; j < g.cols(); ++j) {
    for (std::size_t i = 0; i < g.rows(); ++i) {
      err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  return err;
}

SvdResult ThinSvd(const Matrix& a, std::string_view role) {
  if (a.empty()) {
    throw UsageError(fmt::format("thin_svd({}): empty {} input", role, Shape(a)));
  }
  if (!a.AllFinite()) {
    throw UsageError(fmt::format("thin_svd({}): non-finite input", role));
  }
  if (a.rows() < a.cols()) {
    SvdResult t = ThinSvd(a.Transposed(), role);
    std::swap(t.u, t.v);
    return t;
  }

  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::Identity(n);

  bool converged = false;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = w.col(p);
        auto wq = w.col(q);
        const double alpha = Dot(wp, wp);
        const double beta = Dot(wq, wq);
        const double gamma = Dot(wp, wq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) {
          continue;
        }
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = wp[i];
          const double y = wq[i];
          wp[i] = c * x - s * y;
          wq[i] = s * x + c * y;
        }
        auto vp = v.col(p);
        auto vq = v.col(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) {
    throw NumericError(fmt::format(
        "thin_svd({}): Jacobi rotations did not converge in {} sweeps", role,
        kMaxJacobiSweeps));
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = Norm(w.col(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return sigma[x] > sigma[y];
  });

  SvdResult out;
  out.singular_values.resize(n);
  out.v = v.SelectColumns(order);
  Matrix u(m, n);
  std::vector<std::size_t> deficient;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.singular_values[j] = sigma[src];
    if (sigma[src] == 0.0) {
      deficient.push_back(j);
      continue;
    }
    auto dst = u.col(j);
    auto wc = w.col(src);
    for (std::size_t i = 0; i < m; ++i) dst[i] = wc[i] / sigma[src];
  }
  // Re-orthogonalize in singular-value order; this only touches columns at
  // rounding level and replaces any that collapsed.
  Matrix q(m, n);
  std::size_t filled = 0;
  std::vector<std::size_t> slot(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (std::find(deficient.begin(), deficient.end(), j) != deficient.end()) {
      continue;
    }
    std::vector<double> col(u.col(j).begin(), u.col(j).end());
    Reorthogonalize(q, filled, col);
    const double norm = Norm(col);
    if (norm < 0.5) {
      deficient.push_back(j);
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) q(i, filled) = col[i] / norm;
    slot[j] = filled++;
  }
  Matrix full = ExtendOrthonormal(q, filled, n);
  std::sort(deficient.begin(), deficient.end());
  std::size_t extra = filled;
  for (std::size_t j : deficient) slot[j] = extra++;
  out.u = full.SelectColumns(slot);
#ifndef NDEBUG
  CheckSvdInvariants(a, out, role);
#endif
  return out;
}

void CheckSvdInvariants(const Matrix& a, const SvdResult& svd,
                        std::string_view role) {
  const auto& s = svd.singular_values;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0.0 || (i > 0 && s[i] > s[i - 1])) {
      throw NumericError(
          fmt::format("svd({}): singular values not sorted/non-negative", role));
    }
  }
  if (OrthonormalityError(svd.u) > 1e-10 || OrthonormalityError(svd.v) > 1e-10) {
    throw NumericError(fmt::format("svd({}): factors not orthonormal", role));
  }
  Matrix us = svd.u;
  for (std::size_t j = 0; j < us.cols(); ++j) {
    for (double& x : us.col(j)) x *= s[j];
  }
  const double err = FrobeniusNorm(Subtract(MultiplyTranspose(us, svd.v), a));
  if (err > 1e-9 * std::max(1.0, FrobeniusNorm(a))) {
    throw NumericError(
        fmt::format("svd({}): reconstruction error {:.3e}", role, err));
  }
}

Matrix OrthonormalColumns(const Matrix& a, double tol) {
  if (a.empty()) throw UsageError("orthonormal_columns: empty input");
  Matrix q(a.rows(), a.cols());
  std::size_t kept = 0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    std::vector<double> v(a.col(j).begin(), a.col(j).end());
    Reorthogonalize(q, kept, v);
    const double norm = Norm(v);
    if (norm <= tol) continue;
    for (std::size_t i = 0; i < v.size(); ++i) q(i, kept) = v[i] / norm;
    ++kept;
  }
  return q.ColumnRange(0, kept);
}

Matrix CompleteOrthonormalBasis(const Matrix& q) {
  if (q.cols() > q.rows()) {
    throw UsageError("complete_basis: more columns than rows");
  }
  return ExtendOrthonormal(q, q.cols(), q.rows());
}

}  // namespace fedexcise
