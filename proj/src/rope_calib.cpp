// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/rope_calib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "qlab/error.hpp"

namespace qlab {
namespace {

void check_head_dim(const RealMatrix& x, std::size_t head_dim, const char* what) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ShapeError(std::string(what) + ": head_dim must be even and positive");
  }
  if (x.cols() != head_dim) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(head_dim) +
                     " columns, got " + std::to_string(x.cols()));
  }
}

std::vector<double> iota_positions(std::size_t n) {
  std::vector<double> p(n);
  std::iota(p.begin(), p.end(), 0.0);
  return p;
}

RealMatrix scale_rows(const RealMatrix& w, std::span<const double> s, std::size_t row_offset,
                      bool divide) {
  if (row_offset + s.size() > w.rows()) throw ShapeError("projection rows do not cover the head");
  RealMatrix out = w;
  for (std::size_t c = 0; c < s.size(); ++c) {
    for (double& v : out.row(row_offset + c)) v = divide ? v / s[c] : v * s[c];
  }
  return out;
}

}  // namespace

double rope_angle(const RopeConfig& cfg, std::size_t pair, double position) {
  const double d = static_cast<double>(cfg.head_dim);
  return position * std::pow(cfg.base, -2.0 * static_cast<double>(pair) / d);
}

std::pair<double, double> rotate_pair(double xi, double xj, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {xi * c - xj * s, xi * s + xj * c};
}

RealMatrix apply_rope(const RealMatrix& x, std::span<const double> positions,
                      const RopeConfig& cfg) {
  check_head_dim(x, cfg.head_dim, "apply_rope");
  if (positions.size() != x.rows()) throw ShapeError("apply_rope: one position per row required");
  const std::size_t half = cfg.head_dim / 2;
  RealMatrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const auto [a, b] = rotate_pair(x(r, i), x(r, i + half), rope_angle(cfg, i, positions[r]));
      out(r, i) = a;
      out(r, i + half) = b;
    }
  }
  return out;
}

RealMatrix apply_rope(const RealMatrix& x, const RopeConfig& cfg) {
  return apply_rope(x, iota_positions(x.rows()), cfg);
}

RpnScales compute_rpn(const RealMatrix& k, double alpha) {
  if (k.rows() == 0) throw DataError("compute_rpn: no calibration tokens");
  if (!(alpha > 0.0)) throw DataError("compute_rpn: alpha must be positive");
  check_head_dim(k, k.cols(), "compute_rpn");
  const std::size_t half = k.cols() / 2;
  RpnScales rpn;
  rpn.alpha = alpha;
  rpn.s.assign(k.cols(), alpha);
  for (std::size_t i = 0; i < half; ++i) {
    double max_norm = 0.0;
    for (std::size_t n = 0; n < k.rows(); ++n) {
      max_norm = std::max(max_norm, std::hypot(k(n, i), k(n, i + half)));
    }
    if (max_norm > 0.0) rpn.s[i] = rpn.s[i + half] = alpha * max_norm;
  }
  return rpn;
}

RpnScales identity_rpn(std::size_t head_dim) { return {1.0, std::vector<double>(head_dim, 1.0)}; }

std::vector<std::size_t> select_outlier_pairs(const RealMatrix& k, std::size_t count) {
  check_head_dim(k, k.cols(), "select_outlier_pairs");
  const std::size_t half = k.cols() / 2;
  if (count > half) throw DataError("select_outlier_pairs: count exceeds pair count");
  std::vector<double> score(half, 0.0);
  for (std::size_t n = 0; n < k.rows(); ++n) {
    for (std::size_t i = 0; i < half; ++i) {
      score[i] = std::max({score[i], std::fabs(k(n, i)), std::fabs(k(n, i + half))});
    }
  }
  std::vector<std::size_t> order(half);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(count);
  std::ranges::sort(order);
  return order;
}

CrsScales compute_crs(const RealMatrix& k, std::span<const std::size_t> pairs, double beta) {
  check_head_dim(k, k.cols(), "compute_crs");
  if (!(beta > 0.0)) throw DataError("compute_crs: beta must be positive");
  const std::size_t half = k.cols() / 2;
  CrsScales crs;
  crs.beta = beta;
  crs.outlier_pairs.assign(pairs.begin(), pairs.end());
  std::ranges::sort(crs.outlier_pairs);
  crs.t.assign(k.cols(), 1.0);
  for (std::size_t p : crs.outlier_pairs) {
    if (p >= half) throw DataError("compute_crs: pair index out of range");
    for (std::size_t c : {p, p + half}) {
      double m = 0.0;
      for (std::size_t n = 0; n < k.rows(); ++n) m = std::max(m, std::fabs(k(n, c)));
      crs.t[c] = m > 0.0 ? beta * m : beta;
    }
  }
  return crs;
}

CrsScales identity_crs(std::size_t head_dim) { return {1.0, {}, std::vector<double>(head_dim, 1.0)}; }

RealMatrix scale_columns(const RealMatrix& x, std::span<const double> factors) {
  if (factors.size() != x.cols()) throw ShapeError("scale_columns: width mismatch");
  RealMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= factors[c];
  }
  return out;
}

RealMatrix divide_columns(const RealMatrix& x, std::span<const double> divisors) {
  if (divisors.size() != x.cols()) throw ShapeError("divide_columns: width mismatch");
  RealMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= divisors[c];
  }
  return out;
}

RealMatrix smooth_keys(const RealMatrix& k_raw, const RpnScales& rpn, const CrsScales& crs,
                       const RopeConfig& cfg, std::span<const double> positions) {
  return divide_columns(apply_rope(divide_columns(k_raw, rpn.s), positions, cfg), crs.t);
}

RealMatrix smooth_keys(const RealMatrix& k_raw, const RpnScales& rpn, const CrsScales& crs,
                       const RopeConfig& cfg) {
  return smooth_keys(k_raw, rpn, crs, cfg, iota_positions(k_raw.rows()));
}

RealMatrix compensate_queries(const RealMatrix& q_post_rope, const RpnScales& rpn,
                              const CrsScales& crs) {
  return scale_columns(scale_columns(q_post_rope, rpn.s), crs.t);
}

RealMatrix merge_rpn_into_key_projection(const RealMatrix& wk, const RpnScales& rpn,
                                         std::size_t row_offset) {
  return scale_rows(wk, rpn.s, row_offset, /*divide=*/true);
}

RealMatrix merge_rpn_into_query_projection(const RealMatrix& wq, const RpnScales& rpn,
                                           std::size_t row_offset) {
  return scale_rows(wq, rpn.s, row_offset, /*divide=*/false);
}

}  // namespace qlab
