// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact software emulation of the narrow floating-point formats used by
// the INT4 x FP8 pipeline (FP8 E4M3, BF16, FP16) plus integer rounding and
// INT4 packing. Every conversion goes through `double`, which holds every
// value of every emulated format exactly.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace qlab {

enum class RoundingMode { nearest_even, toward_zero };

/// Parameters of a binary floating-point format with subnormals.
/// `ieee_specials` selects IEEE inf/NaN encoding; when false the format
/// follows the E4M3 convention (no infinities, only S.1111.111 is NaN).
struct FloatFormat {
  int exponent_bits;
  int mantissa_bits;
  int bias;
  double max_finite;
  bool ieee_specials;

  constexpr int total_bits() const { return 1 + exponent_bits + mantissa_bits; }
  constexpr int min_normal_exponent() const { return 1 - bias; }
};

inline constexpr FloatFormat kE4M3Format{4, 3, 7, 448.0, false};
inline constexpr FloatFormat kBf16Format{8, 7, 127, 3.3895313892515355e38, true};
inline constexpr FloatFormat kFp16Format{5, 10, 15, 65504.0, true};

/// Largest finite E4M3 magnitude, 1.75 * 2^8.
inline constexpr double kFp8Max = 448.0;
/// Smallest positive E4M3 subnormal, 2^-9.
inline constexpr double kFp8MinSubnormal = 1.0 / 512.0;
/// Smallest positive E4M3 normal, 2^-6.
inline constexpr double kFp8MinNormal = 1.0 / 64.0;
/// Group maxima below 7 * 2^-9 give a zero FP8 scale for INT4 (max / 7 < 2^-9).
inline constexpr double kFp8UnderflowThreshold = 7.0 / 512.0;

/// Rounds `x` onto the grid of `fmt`. Magnitudes beyond the largest finite
/// value (and infinities) saturate to +-max_finite. NaN passes through.
double round_to_format(double x, const FloatFormat& fmt,
                       RoundingMode mode = RoundingMode::nearest_even);

/// Bit pattern of `round_to_format(x, fmt, mode)`.
std::uint32_t encode_bits(double x, const FloatFormat& fmt,
                          RoundingMode mode = RoundingMode::nearest_even);

/// Exact value of a bit pattern (NaN for NaN codes, +-inf for IEEE inf).
double decode_bits(std::uint32_t bits, const FloatFormat& fmt);

// ---------------------------------------------------------------------------
// Strong scalar types

class Fp8E4M3 {
 public:
  constexpr Fp8E4M3() = default;
  static constexpr Fp8E4M3 from_bits(std::uint8_t bits) { return Fp8E4M3(bits); }

  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool is_nan() const { return (bits_ & 0x7F) == 0x7F; }
  double value() const;

  friend constexpr bool operator==(Fp8E4M3, Fp8E4M3) = default;

 private:
  constexpr explicit Fp8E4M3(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

class Bf16 {
 public:
  constexpr Bf16() = default;
  static constexpr Bf16 from_bits(std::uint16_t bits) { return Bf16(bits); }
  constexpr std::uint16_t bits() const { return bits_; }
  double value() const;
  friend constexpr bool operator==(Bf16, Bf16) = default;

 private:
  constexpr explicit Bf16(std::uint16_t bits) : bits_(bits) {}
  std::uint16_t bits_ = 0;
};

class Fp16 {
 public:
  constexpr Fp16() = default;
  static constexpr Fp16 from_bits(std::uint16_t bits) { return Fp16(bits); }
  constexpr std::uint16_t bits() const { return bits_; }
  double value() const;
  friend constexpr bool operator==(Fp16, Fp16) = default;

 private:
  constexpr explicit Fp16(std::uint16_t bits) : bits_(bits) {}
  std::uint16_t bits_ = 0;
};

/// Nearest FP8 E4M3 code. Saturates to +-448; NaN maps to the NaN code.
Fp8E4M3 fp8_encode(double x, RoundingMode mode = RoundingMode::nearest_even);
double fp8_decode(Fp8E4M3 f);

Bf16 bf16_encode(double x, RoundingMode mode = RoundingMode::nearest_even);
double bf16_decode(Bf16 b);

Fp16 fp16_encode(double x, RoundingMode mode = RoundingMode::nearest_even);
double fp16_decode(Fp16 h);

/// Nearest integer, ties to even. Precondition: |x| < 2^52.
std::int64_t round_half_even(double x);

// ---------------------------------------------------------------------------
// INT4

inline constexpr int kInt4Min = -8;
inline constexpr int kInt4Max = 7;

/// Packs two signed 4-bit codes; `lo` goes in the low nibble.
constexpr std::uint8_t pack_int4_pair(std::int8_t lo, std::int8_t hi) {
  return static_cast<std::uint8_t>((static_cast<std::uint8_t>(lo) & 0x0F) |
                                   ((static_cast<std::uint8_t>(hi) & 0x0F) << 4));
}

constexpr std::int8_t sign_extend_nibble(std::uint8_t nibble) {
  return static_cast<std::int8_t>((nibble & 0x08) ? static_cast<int>(nibble & 0x0F) - 16
                                                  : static_cast<int>(nibble & 0x0F));
}

constexpr std::pair<std::int8_t, std::int8_t> unpack_int4_pair(std::uint8_t b) {
  return {sign_extend_nibble(b & 0x0F), sign_extend_nibble(static_cast<std::uint8_t>(b >> 4))};
}

/// ceil(n / 2) bytes, low nibble first; an odd tail leaves the last high nibble zero.
std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> codes);
std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count);

// ---------------------------------------------------------------------------
// Working formats of the kernel simulators

enum class Format { fp8_e4m3, bf16, fp16, fp32, fp64 };

/// Rounds to `f` with nearest-even. fp64 is the identity, fp32 is a native
/// float conversion (IEEE overflow to inf), the narrow formats saturate.
double round_to(Format f, double x);

std::string_view to_string(Format f);
Format parse_format(std::string_view name);

/// Decoded values of all 256 E4M3 codes (NaN codes decode to NaN).
const std::array<double, 256>& fp8_value_table();

}  // namespace qlab
