// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/numerics.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "qlab/error.hpp"

namespace qlab {
namespace {

double nearest_even_integer(double s) {
  const double fl = std::floor(s);
  const double frac = s - fl;
  if (frac > 0.5) return fl + 1.0;
  if (frac < 0.5) return fl;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

std::uint32_t nan_bits(const FloatFormat& fmt) {
  const std::uint32_t exp_all = (1u << fmt.exponent_bits) - 1u;
  if (fmt.ieee_specials) {
    return (exp_all << fmt.mantissa_bits) | (1u << (fmt.mantissa_bits - 1));
  }
  return (exp_all << fmt.mantissa_bits) | ((1u << fmt.mantissa_bits) - 1u);
}

}  // namespace

double round_to_format(double x, const FloatFormat& fmt, RoundingMode mode) {
  if (std::isnan(x)) return x;
  const double a = std::fabs(x);
  if (a == 0.0) return x;
  if (std::isinf(a)) return std::copysign(fmt.max_finite, x);

  std::uint64_t bits = std::bit_cast<std::uint64_t>(a);
  const int exponent = static_cast<int>((bits >> 52) & 0x7FF) - 1023;
  double r;
  if (exponent >= fmt.min_normal_exponent()) {
    // Normal in the target: drop low mantissa bits of the double. A carry out
    // of the kept mantissa correctly bumps the exponent.
    const int shift = 52 - fmt.mantissa_bits;
    const std::uint64_t mask = (std::uint64_t{1} << shift) - 1;
    if (mode == RoundingMode::nearest_even) {
      bits += (mask >> 1) + ((bits >> shift) & 1u);
    }
    bits &= ~mask;
    r = std::bit_cast<double>(bits);
  } else {
    // Subnormal in the target: fixed quantum 2^(emin - mantissa_bits).
    const int quantum_exp = fmt.min_normal_exponent() - fmt.mantissa_bits;
    const double scaled = std::ldexp(a, -quantum_exp);
    const double n = mode == RoundingMode::nearest_even ? nearest_even_integer(scaled)
                                                        : std::trunc(scaled);
    r = std::ldexp(n, quantum_exp);
  }
  if (r > fmt.max_finite) r = fmt.max_finite;
  return std::copysign(r, x);
}

std::uint32_t encode_bits(double x, const FloatFormat& fmt, RoundingMode mode) {
  const std::uint32_t sign = std::signbit(x) ? 1u << (fmt.total_bits() - 1) : 0u;
  if (std::isnan(x)) return sign | nan_bits(fmt);
  const double a = std::fabs(round_to_format(x, fmt, mode));
  if (a == 0.0) return sign;

  const int emin = fmt.min_normal_exponent();
  const int e = std::ilogb(a);
  std::uint32_t exp_field;
  std::uint32_t mantissa;
  if (e < emin) {
    exp_field = 0;
    mantissa = static_cast<std::uint32_t>(std::ldexp(a, fmt.mantissa_bits - emin));
  } else {
    exp_field = static_cast<std::uint32_t>(e + fmt.bias);
    mantissa = static_cast<std::uint32_t>(std::ldexp(a, fmt.mantissa_bits - e)) -
               (1u << fmt.mantissa_bits);
  }
  return sign | (exp_field << fmt.mantissa_bits) | mantissa;
}

double decode_bits(std::uint32_t bits, const FloatFormat& fmt) {
  const std::uint32_t exp_all = (1u << fmt.exponent_bits) - 1u;
  const std::uint32_t man_all = (1u << fmt.mantissa_bits) - 1u;
  const bool negative = (bits >> (fmt.total_bits() - 1)) & 1u;
  const std::uint32_t exp_field = (bits >> fmt.mantissa_bits) & exp_all;
  const std::uint32_t mantissa = bits & man_all;

  double v;
  if (fmt.ieee_specials && exp_field == exp_all) {
    v = mantissa == 0 ? std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::quiet_NaN();
  } else if (!fmt.ieee_specials && exp_field == exp_all && mantissa == man_all) {
    v = std::numeric_limits<double>::quiet_NaN();
  } else if (exp_field == 0) {
    v = std::ldexp(static_cast<double>(mantissa), fmt.min_normal_exponent() - fmt.mantissa_bits);
  } else {
    v = std::ldexp(static_cast<double>(mantissa | (1u << fmt.mantissa_bits)),
                   static_cast<int>(exp_field) - fmt.bias - fmt.mantissa_bits);
  }
  return negative ? -v : v;
}

double Fp8E4M3::value() const { return fp8_value_table()[bits_]; }
double Bf16::value() const { return decode_bits(bits_, kBf16Format); }
double Fp16::value() const { return decode_bits(bits_, kFp16Format); }

Fp8E4M3 fp8_encode(double x, RoundingMode mode) {
  return Fp8E4M3::from_bits(static_cast<std::uint8_t>(encode_bits(x, kE4M3Format, mode)));
}
double fp8_decode(Fp8E4M3 f) { return f.value(); }

Bf16 bf16_encode(double x, RoundingMode mode) {
  return Bf16::from_bits(static_cast<std::uint16_t>(encode_bits(x, kBf16Format, mode)));
}
double bf16_decode(Bf16 b) { return b.value(); }

Fp16 fp16_encode(double x, RoundingMode mode) {
  return Fp16::from_bits(static_cast<std::uint16_t>(encode_bits(x, kFp16Format, mode)));
}
double fp16_decode(Fp16 h) { return h.value(); }

std::int64_t round_half_even(double x) {
  return static_cast<std::int64_t>(nearest_even_integer(x));
}

std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> codes) {
  std::vector<std::uint8_t> out((codes.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < codes.size(); i += 2) {
    const std::int8_t hi = i + 1 < codes.size() ? codes[i + 1] : std::int8_t{0};
    out[i / 2] = pack_int4_pair(codes[i], hi);
  }
  return out;
}

std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count) {
  if (bytes.size() < (count + 1) / 2) {
    throw DataError("unpack_int4: " + std::to_string(bytes.size()) + " bytes cannot hold " +
                    std::to_string(count) + " codes");
  }
  std::vector<std::int8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [lo, hi] = unpack_int4_pair(bytes[i / 2]);
    out[i] = (i % 2 == 0) ? lo : hi;
  }
  return out;
}

double round_to(Format f, double x) {
  switch (f) {
    case Format::fp8_e4m3: return round_to_format(x, kE4M3Format);
    case Format::bf16: return round_to_format(x, kBf16Format);
    case Format::fp16: return round_to_format(x, kFp16Format);
    case Format::fp32: return static_cast<double>(static_cast<float>(x));
    case Format::fp64: return x;
  }
  return x;
}

std::string_view to_string(Format f) {
  switch (f) {
    case Format::fp8_e4m3: return "fp8";
    case Format::bf16: return "bf16";
    case Format::fp16: return "fp16";
    case Format::fp32: return "fp32";
    case Format::fp64: return "fp64";
  }
  return "?";
}

Format parse_format(std::string_view name) {
  if (name == "fp8" || name == "fp8e4m3" || name == "e4m3") return Format::fp8_e4m3;
  if (name == "bf16") return Format::bf16;
  if (name == "fp16") return Format::fp16;
  if (name == "fp32") return Format::fp32;
  if (name == "fp64") return Format::fp64;
  throw DataError("unknown number format '" + std::string(name) + "'");
}

const std::array<double, 256>& fp8_value_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (std::uint32_t c = 0; c < 256; ++c) t[c] = decode_bits(c, kE4M3Format);
    return t;
  }();
  return table;
}

}  // namespace qlab
