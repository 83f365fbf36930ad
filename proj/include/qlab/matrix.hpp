// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "qlab/error.hpp"

namespace qlab {

/// Dense row-major matrix with value semantics.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data size " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RealMatrix = Matrix<double>;

// Small helpers shared by the calibration and simulation code.

/// Rows [first, first + count) as a new matrix.
RealMatrix slice_rows(const RealMatrix& m, std::size_t first, std::size_t count);
/// Columns [first, first + count) as a new matrix.
RealMatrix slice_cols(const RealMatrix& m, std::size_t first, std::size_t count);
/// Writes `block` into `dst` starting at column `first`.
void assign_cols(RealMatrix& dst, const RealMatrix& block, std::size_t first);
/// Vertical concatenation; all parts must have the same column count.
RealMatrix vstack(std::initializer_list<const RealMatrix*> parts);
RealMatrix transpose(const RealMatrix& m);

/// ||a - b||_F / ||b||_F (0 when both are zero).
double relative_frobenius_error(const RealMatrix& a, const RealMatrix& b);
double max_abs_diff(const RealMatrix& a, const RealMatrix& b);

}  // namespace qlab
