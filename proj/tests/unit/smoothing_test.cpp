// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/smoothing.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qlab/error.hpp"
#include "qlab/numerics.hpp"
#include "qlab/oracles.hpp"

namespace qlab {
namespace {

RealMatrix gaussian(std::size_t rows, std::size_t cols, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, std);
  RealMatrix m(rows, cols);
  for (double& v : m.flat()) v = d(rng);
  return m;
}

TEST(UnderflowScore, SumsShortfallBelowThreshold) {
  const RealMatrix w{{0.0, kFp8UnderflowThreshold}, {-0.01, 1.0}};
  EXPECT_DOUBLE_EQ(underflow_score(w), kFp8UnderflowThreshold + (kFp8UnderflowThreshold - 0.01));
}

TEST(UnderflowScore, MatchesExactOracle) {
  const RealMatrix w = gaussian(16, 16, 0.01, 1);
  EXPECT_NEAR(underflow_score(w), oracle::underflow_score(w, 0).get_d(), 1e-15);
}

TEST(Pts, UniformTinyWeights) {
  const RealMatrix w(2, 3, std::ldexp(1.0, -12));
  const PtsResult r = compute_pts_exponent(w);
  EXPECT_EQ(r.exponent, 6);
  EXPECT_EQ(r.stop_reason, PtsStop::underflow_stable);
  ASSERT_EQ(r.score_trace.size(), 7u);
  for (std::size_t k = 1; k < r.score_trace.size(); ++k) EXPECT_LE(r.score_trace[k], r.score_trace[k - 1]);
  EXPECT_EQ(r.score_trace.back(), 0.0);
}

TEST(Pts, LargeElementStopsImmediately) {
  const RealMatrix w{{300.0, 1e-6}};  // 224 <= 300 < 448
  const PtsResult r = compute_pts_exponent(w);
  EXPECT_EQ(r.exponent, 0);
  EXPECT_EQ(r.stop_reason, PtsStop::overflow_risk);
}

TEST(Pts, OverflowBandIsHalfOpen) {
  // 7 * 2^3 = 56 is inside the n = 2 band [56, 112) and not in the n = 3 band.
  const RealMatrix w{{56.0, 1e-9}};
  EXPECT_EQ(compute_pts_exponent(w).exponent, 2);
  const RealMatrix w2{{std::nextafter(56.0, 0.0), 1e-9}};
  EXPECT_EQ(compute_pts_exponent(w2).exponent, 3);
}

TEST(Pts, ZerosDoNotBlockStability) {
  const RealMatrix w{{0.0, 0.0, 0.1}};
  const PtsResult r = compute_pts_exponent(w);
  EXPECT_EQ(r.exponent, 0);
  EXPECT_EQ(r.stop_reason, PtsStop::underflow_stable);
  EXPECT_EQ(compute_pts_exponent(RealMatrix(2, 2, 0.0)).exponent, 0);
}

TEST(Pts, DegenerateTensorThrows) {
  const RealMatrix w{{1e-30}};
  EXPECT_THROW(compute_pts_exponent(w), DataError);
}

TEST(Pts, AgreesWithBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> e(-30.0, 8.0);
  for (int t = 0; t < 40; ++t) {
    RealMatrix w = gaussian(4, 6, std::exp2(e(rng)), 100 + t);
    const auto want = oracle::pts_bruteforce(w);
    if (!want) {
      EXPECT_THROW(compute_pts_exponent(w), DataError);
      continue;
    }
    const PtsResult got = compute_pts_exponent(w);
    EXPECT_EQ(got.exponent, want->exponent);
    EXPECT_EQ(got.stop_reason == PtsStop::overflow_risk, want->overflow);
  }
}

TEST(Pts, ApplyAndFoldAreExactInverses) {
  const RealMatrix w = gaussian(3, 5, 1.0, 3);
  EXPECT_EQ(fold_inverse_pts(apply_pts(w, 17), 17), w);
  EXPECT_THROW(apply_pts(w, -1), DataError);
}

TEST(Pts, StopReasonNames) {
  EXPECT_EQ(parse_pts_stop(to_string(PtsStop::overflow_risk)), PtsStop::overflow_risk);
  EXPECT_EQ(parse_pts_stop(to_string(PtsStop::underflow_stable)), PtsStop::underflow_stable);
  EXPECT_THROW(parse_pts_stop("none"), DataError);
}

TEST(GroupFraction, CountsTinyGroups) {
  RealMatrix w(2, 8, 1.0);
  for (std::size_t c = 0; c < 4; ++c) w(1, c) = 0.001;
  EXPECT_EQ(underflow_group_fraction(w, 4), 0.25);
  EXPECT_EQ(underflow_group_fraction(w, 8), 0.0);
  EXPECT_EQ(underflow_group_fraction(w, 4), oracle::tiny_group_fraction(w, 4));
  EXPECT_THROW(underflow_group_fraction(w, 3), DataError);
}

TEST(Cas, EqualizesAbsmeans) {
  RealMatrix w = gaussian(32, 12, 0.1, 4);
  for (std::size_t r = 0; r < 32; ++r) w(r, 5) *= 40.0;
  const CasScales cas = compute_cas(w);
  EXPECT_EQ(cas.mode, CasMode::mean_of_absmeans);
  EXPECT_LT(cas.lambdas[5], 0.2);
  const auto after = channel_absmeans(apply_cas(w, cas));
  for (double a : after) EXPECT_NEAR(a / cas.target_absmean, 1.0, 1e-12);
}

TEST(Cas, ZeroChannelKeepsUnitLambdaAndIsIgnoredByTarget) {
  RealMatrix w{{1.0, 0.0, 3.0}, {-1.0, 0.0, -3.0}};
  const CasScales cas = compute_cas(w);
  EXPECT_EQ(cas.target_absmean, 2.0);
  EXPECT_EQ(cas.lambdas, (std::vector<double>{2.0, 1.0, 2.0 / 3.0}));
}

TEST(Cas, ExplicitAndConstantTargets) {
  const RealMatrix w{{1.0, 4.0}, {1.0, 4.0}};
  const CasScales e = compute_cas(w, {CasMode::explicit_value, 2.0});
  EXPECT_EQ(e.lambdas, (std::vector<double>{2.0, 0.5}));
  const CasScales c = compute_cas(w, {CasMode::constant_one, 1.0});
  EXPECT_EQ(c.lambdas, (std::vector<double>{1.0, 1.0}));
  EXPECT_THROW(compute_cas(w, {CasMode::explicit_value, 0.0}), DataError);
  EXPECT_EQ(identity_cas(3).lambdas, std::vector<double>(3, 1.0));
}

TEST(Cas, MergeIntoProducerPreservesComposition) {
  // y = W2 (W1 x): scaling W2's columns and W1's rows inversely is neutral.
  const RealMatrix w1 = gaussian(10, 6, 1.0, 5);
  RealMatrix w2 = gaussian(4, 10, 1.0, 6);
  for (std::size_t r = 0; r < 4; ++r) w2(r, 3) *= 25.0;
  const RealMatrix x = gaussian(7, 6, 1.0, 7);
  const CasScales cas = compute_cas(w2);
  const RealMatrix want = oracle::matmul_nt(oracle::matmul_nt(x, w1), w2);
  const RealMatrix got = oracle::matmul_nt(oracle::matmul_nt(x, merge_inverse_cas(w1, cas)), apply_cas(w2, cas));
  EXPECT_LT(oracle::relative_frobenius(got, want), 1e-13);
}

TEST(Cas, ShapeChecks) {
  const RealMatrix w(3, 4, 1.0);
  EXPECT_THROW(apply_cas(w, identity_cas(5)), ShapeError);
  EXPECT_THROW(merge_inverse_cas(w, identity_cas(4)), ShapeError);
  CasScales bad = identity_cas(4);
  bad.lambdas[0] = 0.0;
  EXPECT_THROW(apply_cas(w, bad), DataError);
}

TEST(Cas, ModeNames) {
  for (CasMode m : {CasMode::mean_of_absmeans, CasMode::explicit_value, CasMode::constant_one}) {
    EXPECT_EQ(parse_cas_mode(to_string(m)), m);
  }
}

}  // namespace
}  // namespace qlab
