// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Slow, independent reference implementations used by the test suites.
// Nothing here calls into the library code it is meant to check: format
// values are enumerated from their bit fields, rounding is decided by exact
// rational comparison, and the linear algebra is plain loops in long double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <gmpxx.h>

#include "qlab/matrix.hpp"

namespace qlab::oracle {

/// Exact rational value of a finite double.
mpq_class exact(double x);

/// |value| of the non-negative E4M3 codes 0x00..0x7E, from the bit fields.
const std::vector<mpq_class>& e4m3_magnitudes();
/// Decoded value; NaN for 0x7F and 0xFF.
double e4m3_value(std::uint8_t code);
/// Nearest code by linear scan over every finite code, ties to the even
/// code, magnitudes past 448 saturate. Zero maps to 0x00 (or 0x80 when
/// `negative_zero`).
std::uint8_t e4m3_nearest(const mpq_class& x, bool negative_zero = false);
/// Largest magnitude not above |x|, saturating at 448.
std::uint8_t e4m3_toward_zero(const mpq_class& x);

/// Same rounding for an IEEE-style format with `ebits` exponent and
/// `mbits` mantissa bits (BF16: 8/7, FP16: 5/10), saturating at the largest
/// finite value. Binary search over the enumerated magnitudes.
std::uint32_t ieee_nearest(const mpq_class& x, int ebits, int mbits);
double ieee_value(std::uint32_t code, int ebits, int mbits);

/// sum max(0, 7*2^-9 - |w| * 2^k), exactly.
mpq_class underflow_score(const RealMatrix& w, int k);

struct PtsAnswer {
  int exponent = 0;
  bool overflow = false;  // stop reason: overflow band hit
};

/// Literal scan n = 0, 1, ..., max_n: the overflow band test, then
/// S(n) == S(n + i) for every i up to the point where no element can
/// change the score any more. nullopt when no n qualifies.
std::optional<PtsAnswer> pts_bruteforce(const RealMatrix& w, int max_n = 60);

/// Fraction of contiguous row groups whose max |w| is below 7*2^-9.
double tiny_group_fraction(const RealMatrix& w, std::size_t group_size);

/// Low nibble first, odd tail padded with a zero nibble.
std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes);

/// A * B^T with long double accumulation.
RealMatrix matmul_nt(const RealMatrix& a, const RealMatrix& b);

/// Rotary embedding of pairs (i, i + d/2) at positions 0..rows-1.
RealMatrix rope(const RealMatrix& x, double base);

/// softmax(tau * Q K^T) V, long double, optional causal mask.
RealMatrix attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v, bool causal,
                     double tau);

double relative_frobenius(const RealMatrix& a, const RealMatrix& b);
double max_abs(const RealMatrix& a, const RealMatrix& b);

}  // namespace qlab::oracle
