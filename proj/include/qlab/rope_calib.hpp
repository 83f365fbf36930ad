// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rotary embeddings and RoPE-aware key smoothing.
//
// Channel i of a head pairs with channel i + d/2. Two scalings are used:
//  * RPN: one scale per pair, s = alpha * max_n ||(k_i, k_j)||_2 over the
//    calibration keys. A pair-shared scale commutes with the rotation, so it
//    is merged offline into the key projection (divide) and the query
//    projection (multiply), before RoPE.
//  * CRS: one scale per channel of the selected outlier pairs,
//    t = beta * max_n |k_i| over post-RoPE keys. Scales that differ inside a
//    pair do not commute with the rotation, so CRS runs after RoPE on both
//    keys (divide) and queries (multiply).

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "qlab/matrix.hpp"

namespace qlab {

struct RopeConfig {
  std::size_t head_dim = 64;
  double base = 10000.0;

  friend bool operator==(const RopeConfig&, const RopeConfig&) = default;
};

/// theta_i^t = t * base^(-2i/d)
double rope_angle(const RopeConfig& cfg, std::size_t pair, double position);

/// (x_i, x_j) * R(theta) = (x_i cos - x_j sin, x_i sin + x_j cos).
std::pair<double, double> rotate_pair(double xi, double xj, double theta);

/// Rotates every (i, i + d/2) pair of every row; row r sits at positions[r].
RealMatrix apply_rope(const RealMatrix& x, std::span<const double> positions, const RopeConfig& cfg);
/// Positions 0, 1, ..., rows - 1.
RealMatrix apply_rope(const RealMatrix& x, const RopeConfig& cfg);

struct RpnScales {
  double alpha = 8.0;
  std::vector<double> s;  // per channel, s[i] == s[i + d/2]

  friend bool operator==(const RpnScales&, const RpnScales&) = default;
};

struct CrsScales {
  double beta = 8.0;
  std::vector<std::size_t> outlier_pairs;  // ascending pair indices
  std::vector<double> t;                   // per channel; 1 outside the outlier pairs

  friend bool operator==(const CrsScales&, const CrsScales&) = default;
};

/// Pairs whose calibration keys are all zero get s = alpha.
RpnScales compute_rpn(const RealMatrix& k_pre_rope, double alpha = 8.0);
RpnScales identity_rpn(std::size_t head_dim);

/// The `count` pairs with the largest max(max_n |k_i|, max_n |k_j|); ties go
/// to the lower pair index. Returned in ascending order.
std::vector<std::size_t> select_outlier_pairs(const RealMatrix& k_post_rope, std::size_t count = 8);

/// Zero channels get t = beta.
CrsScales compute_crs(const RealMatrix& k_post_rope, std::span<const std::size_t> outlier_pairs,
                      double beta = 8.0);
CrsScales identity_crs(std::size_t head_dim);

/// RoPE(K / s) / t.
RealMatrix smooth_keys(const RealMatrix& k_raw, const RpnScales& rpn, const CrsScales& crs,
                       const RopeConfig& cfg, std::span<const double> positions);
RealMatrix smooth_keys(const RealMatrix& k_raw, const RpnScales& rpn, const CrsScales& crs,
                       const RopeConfig& cfg);

/// Q_post_rope * s * t, so that compensated queries against smoothed keys
/// reproduce RoPE(Q) RoPE(K)^T.
RealMatrix compensate_queries(const RealMatrix& q_post_rope, const RpnScales& rpn,
                              const CrsScales& crs);

/// Scales the key-projection rows [row_offset, row_offset + d) by 1/s.
RealMatrix merge_rpn_into_key_projection(const RealMatrix& wk, const RpnScales& rpn,
                                         std::size_t row_offset = 0);
/// Scales the query-projection rows [row_offset, row_offset + d) by s.
RealMatrix merge_rpn_into_query_projection(const RealMatrix& wq, const RpnScales& rpn,
                                           std::size_t row_offset = 0);

/// Column-wise multiply / divide by a per-channel vector.
RealMatrix scale_columns(const RealMatrix& x, std::span<const double> factors);
RealMatrix divide_columns(const RealMatrix& x, std::span<const double> divisors);

}  // namespace qlab
