// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/linalg.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace protoncd {

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols() == b.rows());
  if (out.rows() != a.rows() || out.cols() != b.cols()) out = Matrix(a.rows(), b.cols());
  else out.fill(0.0);
  const std::size_t n = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double s = ai[k];
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bk[j];
    }
  }
}

void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.rows() == b.rows());
  assert(out.rows() == a.cols() && out.cols() == b.cols());
  const std::size_t m = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r).data();
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols() == b.cols());
  if (out.rows() != a.rows() || out.cols() != b.rows()) out = Matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  assert(bias.size() == m.cols());
  const double* b = bias.flat().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i).data();
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += b[j];
  }
}

void col_sums_acc(const Matrix& m, Matrix& bias) {
  assert(bias.size() == m.cols());
  double* b = bias.flat().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i).data();
    for (std::size_t j = 0; j < m.cols(); ++j) b[j] += r[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace protoncd
