// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear-layer outlier smoothing: channel-wise absmean scaling (CAS) and
// power-of-two per-tensor scaling (PTS) against FP8 scale underflow.
//
// Weights are stored (out_features x in_features). A "channel" is an input
// feature, i.e. a column; CAS scales columns and the inverse is absorbed by
// the rows (output features) of the layer that produces this layer's input.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qlab/matrix.hpp"

namespace qlab {

/// S(W) = sum over elements of max(0, 7*2^-9 - |w|), summed left to right in
/// row-major order.
double underflow_score(const RealMatrix& w);

enum class PtsStop { underflow_stable, overflow_risk };

std::string_view to_string(PtsStop s);
PtsStop parse_pts_stop(std::string_view s);

struct PtsResult {
  int exponent = 0;
  PtsStop stop_reason = PtsStop::underflow_stable;
  std::vector<double> score_trace;  // S(W * 2^k) for k = 0..exponent

  friend bool operator==(const PtsResult&, const PtsResult&) = default;
};

inline constexpr int kMaxPtsExponent = 60;

/// Smallest n >= 0 such that some element satisfies 7*2^(5-n) <= |w| < 7*2^(6-n)
/// (overflow risk, checked first) or S(W*2^n) = S(W*2^(n+i)) for every i >= 1
/// (underflow stable). The latter holds exactly when every nonzero element is
/// already >= 7*2^-9 after scaling. Throws DataError("degenerate tensor") when
/// no n <= kMaxPtsExponent qualifies.
PtsResult compute_pts_exponent(const RealMatrix& w);

RealMatrix apply_pts(const RealMatrix& w, int n);
RealMatrix fold_inverse_pts(const RealMatrix& y, int n);

/// Fraction of row-wise groups whose max |w| is below 7*2^-9.
double underflow_group_fraction(const RealMatrix& w, std::size_t group_size);

enum class CasMode { mean_of_absmeans, explicit_value, constant_one };

std::string_view to_string(CasMode m);
CasMode parse_cas_mode(std::string_view s);

struct CasTarget {
  CasMode mode = CasMode::mean_of_absmeans;
  double value = 1.0;  // target absmean for explicit_value, lambda for constant_one
};

struct CasScales {
  CasMode mode = CasMode::mean_of_absmeans;
  double target_absmean = 0.0;
  std::vector<double> lambdas;  // one per input channel, all > 0

  friend bool operator==(const CasScales&, const CasScales&) = default;
};

/// Mean |w| of each column.
std::vector<double> channel_absmeans(const RealMatrix& w);

/// lambda_i = target / absmean_i. All-zero channels get lambda = 1. The
/// default target is the mean absmean over the nonzero channels.
CasScales compute_cas(const RealMatrix& w, CasTarget target = {});
CasScales identity_cas(std::size_t channels);

/// W * diag(lambda).
RealMatrix apply_cas(const RealMatrix& w, const CasScales& cas);
/// diag(1/lambda) * W_prev: the producer of this layer's input absorbs the inverse.
RealMatrix merge_inverse_cas(const RealMatrix& prev_w, const CasScales& cas);
/// X * diag(1/lambda), for inputs with no producing layer to merge into.
RealMatrix apply_inverse_cas_to_activations(const RealMatrix& x, const CasScales& cas);

/// Per-layer smoothing record.
struct SmoothingRecipe {
  std::string layer;
  CasScales cas;
  PtsResult pts;

  friend bool operator==(const SmoothingRecipe&, const SmoothingRecipe&) = default;
};

}  // namespace qlab
