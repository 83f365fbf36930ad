// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/numerics.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "qlab/oracles.hpp"

namespace qlab {
namespace {

TEST(Fp8, DecodeMatchesFieldOracleForEveryCode) {
  for (int c = 0; c < 256; ++c) {
    const auto code = static_cast<std::uint8_t>(c);
    const double want = oracle::e4m3_value(code);
    const double got = fp8_decode(Fp8E4M3::from_bits(code));
    if (std::isnan(want)) {
      EXPECT_TRUE(std::isnan(got)) << c;
    } else {
      EXPECT_EQ(got, want) << c;
      EXPECT_EQ(std::signbit(got), std::signbit(want)) << c;
    }
  }
}

TEST(Fp8, KnownValues) {
  EXPECT_EQ(fp8_decode(Fp8E4M3::from_bits(0x7E)), 448.0);
  EXPECT_EQ(fp8_decode(Fp8E4M3::from_bits(0x01)), kFp8MinSubnormal);
  EXPECT_EQ(fp8_decode(Fp8E4M3::from_bits(0x08)), kFp8MinNormal);
  EXPECT_EQ(fp8_decode(Fp8E4M3::from_bits(0x38)), 1.0);
  EXPECT_TRUE(Fp8E4M3::from_bits(0x7F).is_nan());
  EXPECT_TRUE(Fp8E4M3::from_bits(0xFF).is_nan());
  EXPECT_FALSE(Fp8E4M3::from_bits(0x7E).is_nan());
}

TEST(Fp8, EncodeMatchesExhaustiveNearestSearch) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> e(-14.0, 10.0);
  std::uniform_real_distribution<double> sign(-1.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const double x = std::copysign(std::exp2(e(rng)), sign(rng));
    ASSERT_EQ(fp8_encode(x).bits(), oracle::e4m3_nearest(oracle::exact(x))) << x;
  }
}

TEST(Fp8, TiesGoToEvenMantissa) {
  // Midpoints between adjacent codes.
  for (std::uint8_t c = 0; c < 0x7E; ++c) {
    const double mid = 0.5 * (fp8_decode(Fp8E4M3::from_bits(c)) + fp8_decode(Fp8E4M3::from_bits(c + 1)));
    const std::uint8_t even = (c % 2 == 0) ? c : static_cast<std::uint8_t>(c + 1);
    EXPECT_EQ(fp8_encode(mid).bits(), even) << int(c);
    EXPECT_EQ(fp8_encode(-mid).bits(), even | 0x80) << int(c);
  }
}

TEST(Fp8, SaturatesAndKeepsNaN) {
  EXPECT_EQ(fp8_encode(464.0).bits(), 0x7E);
  EXPECT_EQ(fp8_encode(1e30).bits(), 0x7E);
  EXPECT_EQ(fp8_encode(-std::numeric_limits<double>::infinity()).bits(), 0xFE);
  EXPECT_TRUE(fp8_encode(std::numeric_limits<double>::quiet_NaN()).is_nan());
  EXPECT_EQ(fp8_encode(-0.0).bits(), 0x80);
  EXPECT_EQ(fp8_encode(0.0).bits(), 0x00);
  // Below half the smallest subnormal rounds to zero, the half itself ties to zero.
  EXPECT_EQ(fp8_encode(std::ldexp(1.0, -10)).bits(), 0x00);
  EXPECT_EQ(fp8_encode(std::nextafter(std::ldexp(1.0, -10), 1.0)).bits(), 0x01);
}

TEST(Fp8, TowardZeroMatchesOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> e(-12.0, 10.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = std::exp2(e(rng));
    ASSERT_EQ(fp8_encode(x, RoundingMode::toward_zero).bits(), oracle::e4m3_toward_zero(oracle::exact(x))) << x;
  }
}

TEST(Bf16, EncodeMatchesOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> e(-140.0, 127.0);
  std::uniform_real_distribution<double> sign(-1.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = std::copysign(std::exp2(e(rng)), sign(rng));
    const std::uint32_t want = oracle::ieee_nearest(oracle::exact(x), 8, 7);
    ASSERT_EQ(bf16_encode(x).bits(), want) << x;
    ASSERT_EQ(bf16_decode(Bf16::from_bits(static_cast<std::uint16_t>(want))), oracle::ieee_value(want, 8, 7));
  }
}

TEST(Fp16, EncodeMatchesOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> e(-26.0, 16.0);
  std::uniform_real_distribution<double> sign(-1.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = std::copysign(std::exp2(e(rng)), sign(rng));
    const std::uint32_t want = oracle::ieee_nearest(oracle::exact(x), 5, 10);
    ASSERT_EQ(fp16_encode(x).bits(), want) << x;
  }
  EXPECT_EQ(fp16_decode(fp16_encode(65504.0)), 65504.0);
  EXPECT_EQ(fp16_decode(fp16_encode(1e6)), 65504.0);
  EXPECT_TRUE(std::isinf(fp16_decode(Fp16::from_bits(0x7C00))));
}

TEST(Fp16, EveryCodeRoundTrips) {
  for (std::uint32_t c = 0; c < 0x10000; ++c) {
    const auto h = Fp16::from_bits(static_cast<std::uint16_t>(c));
    const double v = fp16_decode(h);
    if (std::isnan(v) || std::isinf(v)) continue;
    ASSERT_EQ(fp16_encode(v).bits(), c);
  }
}

TEST(RoundHalfEven, Ties) {
  EXPECT_EQ(round_half_even(0.5), 0);
  EXPECT_EQ(round_half_even(1.5), 2);
  EXPECT_EQ(round_half_even(2.5), 2);
  EXPECT_EQ(round_half_even(-2.5), -2);
  EXPECT_EQ(round_half_even(-3.5), -4);
  EXPECT_EQ(round_half_even(2.5000000001), 3);
  EXPECT_EQ(round_half_even(-0.49), 0);
}

TEST(Int4, PackMatchesNibbleOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> nib(-8, 7);
  for (std::size_t n : {0, 1, 2, 3, 15, 16, 17, 255}) {
    std::vector<std::int8_t> codes(n);
    for (auto& c : codes) c = static_cast<std::int8_t>(nib(rng));
    const auto packed = pack_int4(codes);
    EXPECT_EQ(packed, oracle::pack_nibbles(codes));
    EXPECT_EQ(unpack_int4(packed, n), codes);
    if (n % 2 == 1) {
      EXPECT_EQ(packed.back() >> 4, 0);
    }
  }
}

TEST(Int4, SignExtension) {
  EXPECT_EQ(sign_extend_nibble(0x8), -8);
  EXPECT_EQ(sign_extend_nibble(0xF), -1);
  EXPECT_EQ(sign_extend_nibble(0x7), 7);
  const auto [lo, hi] = unpack_int4_pair(pack_int4_pair(-8, 7));
  EXPECT_EQ(lo, -8);
  EXPECT_EQ(hi, 7);
}

TEST(Int4, UnpackIgnoresOddTailHighNibble) {
  const std::vector<std::uint8_t> bytes{0x21, 0xF3};
  EXPECT_EQ(unpack_int4(bytes, 3), (std::vector<std::int8_t>{1, 2, 3}));
}

TEST(RoundTo, WorkingFormats) {
  EXPECT_EQ(round_to(Format::fp64, 0.1), 0.1);
  EXPECT_EQ(round_to(Format::fp32, 0.1), static_cast<double>(0.1f));
  EXPECT_EQ(round_to(Format::fp16, 0.1), fp16_decode(fp16_encode(0.1)));
  EXPECT_EQ(round_to(Format::bf16, 0.1), bf16_decode(bf16_encode(0.1)));
  EXPECT_EQ(round_to(Format::fp8_e4m3, 0.1), fp8_decode(fp8_encode(0.1)));
  EXPECT_TRUE(std::isinf(round_to(Format::fp32, 1e300)));
  EXPECT_EQ(round_to(Format::fp16, -1e300), -65504.0);
}

TEST(RoundTo, FormatNames) {
  for (Format f : {Format::fp8_e4m3, Format::bf16, Format::fp16, Format::fp32, Format::fp64}) {
    EXPECT_EQ(parse_format(to_string(f)), f);
  }
  EXPECT_THROW(parse_format("fp4"), std::exception);
}

}  // namespace
}  // namespace qlab
