// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace qlab {

RealMatrix slice_rows(const RealMatrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) throw ShapeError("slice_rows out of range");
  RealMatrix out(count, m.cols());
  for (std::size_t r = 0; r < count; ++r) {
    std::ranges::copy(m.row(first + r), out.row(r).begin());
  }
  return out;
}

RealMatrix slice_cols(const RealMatrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.cols()) throw ShapeError("slice_cols out of range");
  RealMatrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
  }
  return out;
}

void assign_cols(RealMatrix& dst, const RealMatrix& block, std::size_t first) {
  if (block.rows() != dst.rows() || first + block.cols() > dst.cols()) {
    throw ShapeError("assign_cols out of range");
  }
  for (std::size_t r = 0; r < dst.rows(); ++r) {
    for (std::size_t c = 0; c < block.cols(); ++c) dst(r, first + c) = block(r, c);
  }
}

RealMatrix vstack(std::initializer_list<const RealMatrix*> parts) {
  std::size_t rows = 0;
  const std::size_t cols = parts.size() == 0 ? 0 : (*parts.begin())->cols();
  for (const RealMatrix* p : parts) {
    if (p->cols() != cols) throw ShapeError("vstack: column counts differ");
    rows += p->rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const RealMatrix* p : parts) data.insert(data.end(), p->flat().begin(), p->flat().end());
  return RealMatrix(rows, cols, std::move(data));
}

RealMatrix transpose(const RealMatrix& m) {
  RealMatrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

double relative_frobenius_error(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("relative_frobenius_error: shape mismatch");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.flat()[i] - b.flat()[i];
    num += d * d;
    den += b.flat()[i] * b.flat()[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

double max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.flat()[i] - b.flat()[i]));
  return m;
}

}  // namespace qlab
