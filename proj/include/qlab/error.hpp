// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data violates an operation's precondition (empty group, zero
/// scale, non-divisible grouping, degenerate tensor, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace qlab
