// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/rope_calib.hpp"

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

TEST(Rope, MatchesOracle) {
  const RealMatrix x = gaussian(50, 64, 1);
  EXPECT_LT(oracle::max_abs(apply_rope(x, {64, 10000.0}), oracle::rope(x, 10000.0)), 1e-12);
  const RealMatrix y = gaussian(20, 16, 2);
  EXPECT_LT(oracle::max_abs(apply_rope(y, {16, 500.0}), oracle::rope(y, 500.0)), 1e-12);
}

TEST(Rope, PositionZeroIsIdentityAndNormsArePreserved) {
  const RealMatrix x = gaussian(8, 32, 3);
  const RealMatrix r = apply_rope(x, {32, 10000.0});
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(r(0, c), x(0, c));
  for (std::size_t t = 0; t < 8; ++t) {
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_NEAR(std::hypot(r(t, i), r(t, i + 16)), std::hypot(x(t, i), x(t, i + 16)), 1e-12);
    }
  }
}

TEST(Rope, ExplicitPositions) {
  const RealMatrix x = gaussian(3, 8, 4);
  const std::vector<double> pos{5.0, 5.0, 0.0};
  const RealMatrix r = apply_rope(x, pos, {8, 10000.0});
  const auto [a, b] = rotate_pair(x(0, 1), x(0, 5), rope_angle({8, 10000.0}, 1, 5.0));
  EXPECT_DOUBLE_EQ(r(0, 1), a);
  EXPECT_DOUBLE_EQ(r(0, 5), b);
  EXPECT_EQ(r(2, 3), x(2, 3));
  EXPECT_THROW(apply_rope(x, std::vector<double>{1.0}, {8, 10000.0}), ShapeError);
}

TEST(Rope, AngleFormula) {
  EXPECT_DOUBLE_EQ(rope_angle({64, 10000.0}, 0, 7.0), 7.0);
  EXPECT_DOUBLE_EQ(rope_angle({64, 10000.0}, 16, 3.0), 3.0 / 100.0);
}

TEST(Rpn, BoundsEveryPairNorm) {
  RealMatrix k = gaussian(100, 64, 5);
  for (std::size_t r = 0; r < 100; ++r) k(r, 3) *= 30.0;
  const RpnScales rpn = compute_rpn(k, 8.0);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(rpn.s[i], rpn.s[i + 32]);
  const RealMatrix kn = divide_columns(k, rpn.s);
  for (const RealMatrix& m : {kn, oracle::rope(kn, 10000.0)}) {
    for (std::size_t r = 0; r < 100; ++r) {
      for (std::size_t i = 0; i < 32; ++i) EXPECT_LE(std::hypot(m(r, i), m(r, i + 32)), 0.125 + 1e-12);
    }
  }
}

TEST(Rpn, ZeroPairGetsAlpha) {
  RealMatrix k = gaussian(10, 8, 6);
  for (std::size_t r = 0; r < 10; ++r) k(r, 1) = k(r, 5) = 0.0;
  const RpnScales rpn = compute_rpn(k, 4.0);
  EXPECT_EQ(rpn.s[1], 4.0);
  EXPECT_EQ(rpn.s[5], 4.0);
}

TEST(Rpn, CommutesWithRope) {
  const RealMatrix k = gaussian(30, 16, 7);
  const RpnScales rpn = compute_rpn(k);
  const RopeConfig cfg{16, 10000.0};
  EXPECT_LT(oracle::max_abs(apply_rope(divide_columns(k, rpn.s), cfg),
                            divide_columns(apply_rope(k, cfg), rpn.s)),
            1e-15);
}

TEST(Rpn, Errors) {
  EXPECT_THROW(compute_rpn(RealMatrix(0, 8)), DataError);
  EXPECT_THROW(compute_rpn(RealMatrix(2, 7, 1.0)), std::exception);
  EXPECT_THROW(compute_rpn(RealMatrix(2, 8, 1.0), 0.0), DataError);
}

TEST(OutlierPairs, PicksInjectedPairsInAscendingOrder) {
  RealMatrix k = gaussian(64, 32, 8);
  for (std::size_t r = 0; r < 64; ++r) {
    k(r, 11) += 40.0;
    k(r, 2 + 16) -= 25.0;
  }
  EXPECT_EQ(select_outlier_pairs(k, 2), (std::vector<std::size_t>{2, 11}));
  const auto eight = select_outlier_pairs(k, 8);
  EXPECT_EQ(eight.size(), 8u);
  EXPECT_TRUE(std::is_sorted(eight.begin(), eight.end()));
}

TEST(OutlierPairs, TiesGoToLowerIndex) {
  const RealMatrix k(4, 8, 1.0);
  EXPECT_EQ(select_outlier_pairs(k, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(select_outlier_pairs(k, 5), DataError);
}

TEST(Crs, ScalesOnlySelectedPairs) {
  RealMatrix k = gaussian(16, 8, 9);
  k(3, 1) = -20.0;
  const std::vector<std::size_t> pairs{1};
  const CrsScales crs = compute_crs(k, pairs, 8.0);
  EXPECT_EQ(crs.t[1], 160.0);
  double m5 = 0.0;
  for (std::size_t r = 0; r < 16; ++r) m5 = std::max(m5, std::fabs(k(r, 5)));
  EXPECT_EQ(crs.t[5], 8.0 * m5);
  for (std::size_t c : {0, 2, 3, 4, 6, 7}) EXPECT_EQ(crs.t[c], 1.0);
  const RealMatrix ks = divide_columns(k, crs.t);
  for (std::size_t r = 0; r < 16; ++r) EXPECT_LE(std::fabs(ks(r, 1)), 0.125);
  EXPECT_THROW(compute_crs(k, std::vector<std::size_t>{4}, 8.0), DataError);
}

TEST(Smoothing, CompensatedScoresAreInvariant) {
  const RopeConfig cfg{64, 10000.0};
  const RealMatrix q = gaussian(40, 64, 10);
  RealMatrix k = gaussian(40, 64, 11);
  for (std::size_t r = 0; r < 40; ++r) k(r, 30) += 50.0;
  const RpnScales rpn = compute_rpn(k);
  const CrsScales crs = compute_crs(apply_rope(divide_columns(k, rpn.s), cfg),
                                    select_outlier_pairs(apply_rope(k, cfg), 8));
  const RealMatrix got = oracle::matmul_nt(compensate_queries(apply_rope(q, cfg), rpn, crs),
                                           smooth_keys(k, rpn, crs, cfg));
  const RealMatrix want = oracle::matmul_nt(oracle::rope(q, 1e4), oracle::rope(k, 1e4));
  EXPECT_LT(oracle::relative_frobenius(got, want), 1e-12);
}

TEST(Smoothing, MergedProjectionsReproduceScaledKeysAndQueries) {
  const RealMatrix x = gaussian(12, 20, 12);
  const RealMatrix wk = gaussian(16, 20, 13), wq = gaussian(16, 20, 14);
  const RealMatrix k = oracle::matmul_nt(x, wk);
  const RpnScales rpn = compute_rpn(slice_cols(k, 8, 8));
  const RealMatrix k_merged = oracle::matmul_nt(x, merge_rpn_into_key_projection(wk, rpn, 8));
  const RealMatrix q_merged = oracle::matmul_nt(x, merge_rpn_into_query_projection(wq, rpn, 8));
  const RealMatrix q = oracle::matmul_nt(x, wq);
  for (std::size_t r = 0; r < 12; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      const double s = c < 8 ? 1.0 : rpn.s[c - 8];
      EXPECT_NEAR(k_merged(r, c), k(r, c) / s, 1e-12 * (1.0 + std::fabs(k(r, c))));
      EXPECT_NEAR(q_merged(r, c), q(r, c) * s, 1e-12 * (1.0 + std::fabs(q(r, c) * s)));
    }
  }
}

TEST(Identity, ScalesAreOne) {
  EXPECT_EQ(identity_rpn(6).s, std::vector<double>(6, 1.0));
  EXPECT_EQ(identity_crs(6).t, std::vector<double>(6, 1.0));
  EXPECT_TRUE(identity_crs(6).outlier_pairs.empty());
}

}  // namespace
}  // namespace qlab
