// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/attention_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qlab/error.hpp"
#include "qlab/oracles.hpp"

namespace qlab {
namespace {

RealMatrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double std = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, std);
  RealMatrix m(rows, cols);
  for (double& v : m.flat()) v = d(rng);
  return m;
}

struct Qkv {
  RealMatrix q, k, v;
};

Qkv make_qkv(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  return {gaussian(n, d, seed, scale), gaussian(n, d, seed + 1, scale), gaussian(n, d, seed + 2)};
}

TEST(ReferenceAttention, MatchesOracle) {
  const Qkv a = make_qkv(37, 16, 1);
  for (bool causal : {true, false}) {
    EXPECT_LT(oracle::max_abs(reference_attention(a.q, a.k, a.v, causal),
                              oracle::attention(a.q, a.k, a.v, causal, 0.25)),
              1e-12);
  }
  EXPECT_LT(oracle::max_abs(reference_attention(a.q, a.k, a.v, false, 0.7),
                            oracle::attention(a.q, a.k, a.v, false, 0.7)),
            1e-12);
}

TEST(TiledAttention, ExactModeMatchesOracle) {
  const Qkv a = make_qkv(50, 8, 4);
  for (const auto& [br, bc] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 3}, {16, 64}, {64, 16}, {50, 50}}) {
    for (bool causal : {true, false}) {
      const TileSchedule s{br, bc, causal, std::nullopt};
      const RealMatrix got = tiled_attention_forward(a.q, a.k, a.v, s, PrecisionPolicy::exact());
      EXPECT_LT(oracle::max_abs(got, oracle::attention(a.q, a.k, a.v, causal, 1.0 / std::sqrt(8.0))), 1e-12)
          << br << "x" << bc << (causal ? " causal" : "");
    }
  }
}

TEST(TiledAttention, SerialAndParallelAreBitIdentical) {
  const Qkv a = make_qkv(130, 32, 7, 2.0);
  for (const PrecisionPolicy& pol : {PrecisionPolicy::mixed(), PrecisionPolicy::fp32(),
                                     PrecisionPolicy::fp16_scores(), PrecisionPolicy::exact()}) {
    for (bool causal : {true, false}) {
      const TileSchedule s{32, 16, causal, std::nullopt};
      AttentionTrace ta, tb;
      const RealMatrix par = tiled_attention_forward(a.q, a.k, a.v, s, pol, &ta);
      const RealMatrix ser = tiled_attention_forward_serial(a.q, a.k, a.v, s, pol, &tb);
      for (std::size_t i = 0; i < par.size(); ++i) ASSERT_EQ(par.flat()[i], ser.flat()[i]);
      EXPECT_EQ(ta.rowmax, tb.rowmax);
      EXPECT_EQ(ta.final_rowsum, tb.final_rowsum);
    }
  }
}

TEST(TiledAttention, MixedPolicyStaysNearReference) {
  const Qkv a = make_qkv(96, 64, 10);
  const RealMatrix ref = oracle::attention(a.q, a.k, a.v, true, 0.125);
  const RealMatrix got = tiled_attention_forward(a.q, a.k, a.v, {}, PrecisionPolicy::mixed());
  EXPECT_LT(oracle::relative_frobenius(got, ref), 0.05);
}

TEST(TiledAttention, RowmaxTraceIsRunningMax) {
  const Qkv a = make_qkv(20, 8, 13);
  const double tau = 1.0 / std::sqrt(8.0);
  const RealMatrix s = oracle::matmul_nt(a.q, a.k);
  AttentionTrace tr;
  tiled_attention_forward(a.q, a.k, a.v, {20, 6, false, std::nullopt}, PrecisionPolicy::exact(), &tr);
  ASSERT_EQ(tr.rowmax.size(), 20u);
  for (std::size_t r = 0; r < 20; ++r) {
    ASSERT_EQ(tr.rowmax[r].size(), 4u);
    double m = -INFINITY;
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 6 * j; c < std::min<std::size_t>(20, 6 * j + 6); ++c) m = std::max(m, tau * s(r, c));
      EXPECT_NEAR(tr.rowmax[r][j], m, 1e-12);
    }
    long double l = 0.0L;
    for (std::size_t c = 0; c < 20; ++c) l += std::exp(static_cast<long double>(tau * s(r, c) - m));
    EXPECT_NEAR(tr.final_rowsum[r], static_cast<double>(l), 1e-12 * static_cast<double>(l));
  }
}

TEST(TiledAttention, CausalSchedulesSkipMaskedTiles) {
  const Qkv a = make_qkv(32, 4, 16);
  AttentionTrace tr;
  tiled_attention_forward(a.q, a.k, a.v, {8, 8, true, std::nullopt}, PrecisionPolicy::exact(), &tr);
  for (std::size_t r = 0; r < 32; ++r) EXPECT_EQ(tr.rowmax[r].size(), r / 8 + 1);
}

TEST(TiledAttention, FirstCausalRowCopiesFirstValue) {
  const Qkv a = make_qkv(9, 16, 19, 30.0);
  for (const PrecisionPolicy& pol : {PrecisionPolicy::mixed(), PrecisionPolicy::exact()}) {
    const RealMatrix got = tiled_attention_forward(a.q, a.k, a.v, {4, 4, true, std::nullopt}, pol);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(got(0, c), round_to(pol.effective().output_format, a.v(0, c)));
  }
}

TEST(TiledAttention, SingleKey) {
  const Qkv a = make_qkv(1, 4, 22);
  const RealMatrix got =
      tiled_attention_forward(a.q, a.k, a.v, {64, 64, false, std::nullopt}, PrecisionPolicy::exact());
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(got(0, c), a.v(0, c));
}

TEST(TiledAttention, ReconstructedRowsums) {
  const Qkv a = make_qkv(64, 16, 25);
  const TileSchedule s{16, 16, true, std::nullopt};
  for (double x : reconstructed_p_rowsums(a.q, a.k, s, PrecisionPolicy::exact())) EXPECT_NEAR(x, 1.0, 1e-12);
  // FP8 P and a BF16 output leave the sum within a few percent of one.
  for (double x : reconstructed_p_rowsums(a.q, a.k, s, PrecisionPolicy::mixed())) EXPECT_NEAR(x, 1.0, 0.08);
}

TEST(QuantizePTile, RoundsScaledValues) {
  const RealMatrix p{{0.3, 1.0}, {0.0, 0.01}};
  PrecisionPolicy pol = PrecisionPolicy::mixed();
  pol.p_scale = 2.0;
  const RealMatrix got = quantize_p_tile(p, pol);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(got.flat()[i], oracle::e4m3_value(oracle::e4m3_nearest(oracle::exact(p.flat()[i] * 2.0), false)));
  }
  EXPECT_EQ(quantize_p_tile(p, PrecisionPolicy::exact()), p);
}

TEST(TiledAttention, Errors) {
  const Qkv a = make_qkv(8, 4, 28);
  const PrecisionPolicy pol = PrecisionPolicy::mixed();
  EXPECT_THROW(tiled_attention_forward(a.q, gaussian(8, 5, 1), a.v, {}, pol), ShapeError);
  EXPECT_THROW(tiled_attention_forward(a.q, a.k, gaussian(7, 4, 1), {}, pol), ShapeError);
  EXPECT_THROW(tiled_attention_forward(a.q, a.k, a.v, {0, 4, true, std::nullopt}, pol), ShapeError);
  EXPECT_THROW(tiled_attention_forward(a.q, gaussian(4, 4, 1), gaussian(4, 4, 2), {}, pol), ShapeError);
  PrecisionPolicy bad = pol;
  bad.p_scale = 0.0;
  EXPECT_THROW(tiled_attention_forward(a.q, a.k, a.v, {}, bad), DataError);
  EXPECT_THROW(reference_attention(a.q, RealMatrix(0, 4), RealMatrix(0, 4), false), ShapeError);
}

TEST(PrecisionPolicy, Names) {
  for (const char* n : {"mixed", "exact", "fp32", "fp16-scores"}) EXPECT_EQ(policy_name(parse_policy(n)), n);
  PrecisionPolicy p = PrecisionPolicy::mixed();
  p.p_format = Format::bf16;
  EXPECT_EQ(policy_name(p), "custom");
  p.exact_mode = true;
  EXPECT_EQ(policy_name(p), "exact");
  EXPECT_EQ(p.accum_format(), Format::fp64);
  EXPECT_THROW(parse_policy("int8"), DataError);
}

}  // namespace
}  // namespace qlab
