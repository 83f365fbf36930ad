// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qlab/error.hpp"
#include "qlab/numerics.hpp"

namespace qlab {
namespace {

double scaled_underflow_score(const RealMatrix& w, int n) {
  double s = 0.0;
  for (double v : w.flat()) {
    s += std::max(0.0, kFp8UnderflowThreshold - std::ldexp(std::fabs(v), n));
  }
  return s;
}

bool overflow_risk_at(const RealMatrix& w, int n) {
  const double lo = std::ldexp(7.0, 5 - n);
  const double hi = std::ldexp(7.0, 6 - n);
  return std::ranges::any_of(w.flat(), [&](double v) {
    const double a = std::fabs(v);
    return lo <= a && a < hi;
  });
}

void check_lambdas(const CasScales& cas) {
  for (double l : cas.lambdas) {
    if (!(l > 0.0) || !std::isfinite(l)) {
      throw DataError("CAS scales must be positive and finite");
    }
  }
}

}  // namespace

double underflow_score(const RealMatrix& w) { return scaled_underflow_score(w, 0); }

std::string_view to_string(PtsStop s) {
  return s == PtsStop::underflow_stable ? "underflow_stable" : "overflow_risk";
}

PtsStop parse_pts_stop(std::string_view s) {
  if (s == "underflow_stable") return PtsStop::underflow_stable;
  if (s == "overflow_risk") return PtsStop::overflow_risk;
  throw DataError("unknown PTS stop reason '" + std::string(s) + "'");
}

PtsResult compute_pts_exponent(const RealMatrix& w) {
  double min_nonzero = std::numeric_limits<double>::infinity();
  for (double v : w.flat()) {
    if (!std::isfinite(v)) throw DataError("compute_pts_exponent: non-finite weight");
    if (v != 0.0) min_nonzero = std::min(min_nonzero, std::fabs(v));
  }

  PtsResult result;
  for (int n = 0; n <= kMaxPtsExponent; ++n) {
    result.score_trace.push_back(scaled_underflow_score(w, n));
    if (overflow_risk_at(w, n)) {
      result.exponent = n;
      result.stop_reason = PtsStop::overflow_risk;
      return result;
    }
    // Zeros contribute the same amount at every scale and a nonzero element
    // below the threshold strictly lowers S when doubled, so S stops changing
    // exactly when the smallest nonzero magnitude has crossed the threshold.
    if (std::ldexp(min_nonzero, n) >= kFp8UnderflowThreshold) {
      result.exponent = n;
      result.stop_reason = PtsStop::underflow_stable;
      return result;
    }
  }
  throw DataError("degenerate tensor: no PTS exponent <= " + std::to_string(kMaxPtsExponent));
}

RealMatrix apply_pts(const RealMatrix& w, int n) {
  if (n < 0) throw DataError("apply_pts: negative exponent");
  RealMatrix out = w;
  for (double& v : out.flat()) v = std::ldexp(v, n);
  return out;
}

RealMatrix fold_inverse_pts(const RealMatrix& y, int n) {
  if (n < 0) throw DataError("fold_inverse_pts: negative exponent");
  RealMatrix out = y;
  for (double& v : out.flat()) v = std::ldexp(v, -n);
  return out;
}

double underflow_group_fraction(const RealMatrix& w, std::size_t group_size) {
  if (group_size == 0 || w.cols() % group_size != 0) {
    throw DataError("underflow_group_fraction: " + std::to_string(w.cols()) +
                    " columns not divisible by group size " + std::to_string(group_size));
  }
  const std::size_t groups_per_row = w.cols() / group_size;
  const std::size_t total = w.rows() * groups_per_row;
  if (total == 0) return 0.0;
  std::size_t tiny = 0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t g = 0; g < groups_per_row; ++g) {
      double m = 0.0;
      for (double v : w.row(r).subspan(g * group_size, group_size)) m = std::max(m, std::fabs(v));
      if (m < kFp8UnderflowThreshold) ++tiny;
    }
  }
  return static_cast<double>(tiny) / static_cast<double>(total);
}

std::string_view to_string(CasMode m) {
  switch (m) {
    case CasMode::mean_of_absmeans: return "mean_of_absmeans";
    case CasMode::explicit_value: return "explicit_value";
    case CasMode::constant_one: return "constant_one";
  }
  return "?";
}

CasMode parse_cas_mode(std::string_view s) {
  if (s == "mean_of_absmeans" || s == "absmean") return CasMode::mean_of_absmeans;
  if (s == "explicit_value" || s == "explicit") return CasMode::explicit_value;
  if (s == "constant_one" || s == "constant") return CasMode::constant_one;
  throw DataError("unknown CAS mode '" + std::string(s) + "'");
}

std::vector<double> channel_absmeans(const RealMatrix& w) {
  std::vector<double> sums(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) sums[c] += std::fabs(w(r, c));
  }
  if (w.rows() > 0) {
    for (double& s : sums) s /= static_cast<double>(w.rows());
  }
  return sums;
}

CasScales compute_cas(const RealMatrix& w, CasTarget target) {
  if (w.cols() == 0) throw ShapeError("compute_cas: weight has no input channels");
  CasScales cas;
  cas.mode = target.mode;
  if (target.mode == CasMode::constant_one) {
    if (!(target.value > 0.0)) throw DataError("compute_cas: constant lambda must be positive");
    cas.target_absmean = target.value;
    cas.lambdas.assign(w.cols(), target.value);
    return cas;
  }

  const std::vector<double> absmeans = channel_absmeans(w);
  if (target.mode == CasMode::explicit_value) {
    if (!(target.value > 0.0)) throw DataError("compute_cas: target absmean must be positive");
    cas.target_absmean = target.value;
  } else {
    double sum = 0.0;
    std::size_t nonzero = 0;
    for (double a : absmeans) {
      if (a > 0.0) {
        sum += a;
        ++nonzero;
      }
    }
    cas.target_absmean = nonzero == 0 ? 1.0 : sum / static_cast<double>(nonzero);
  }
  cas.lambdas.resize(w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c) {
    cas.lambdas[c] = absmeans[c] > 0.0 ? cas.target_absmean / absmeans[c] : 1.0;
  }
  return cas;
}

CasScales identity_cas(std::size_t channels) {
  return {CasMode::constant_one, 1.0, std::vector<double>(channels, 1.0)};
}

RealMatrix apply_cas(const RealMatrix& w, const CasScales& cas) {
  if (cas.lambdas.size() != w.cols()) throw ShapeError("apply_cas: lambda count != input channels");
  check_lambdas(cas);
  RealMatrix out = w;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) *= cas.lambdas[c];
  }
  return out;
}

RealMatrix merge_inverse_cas(const RealMatrix& prev_w, const CasScales& cas) {
  if (cas.lambdas.size() != prev_w.rows()) {
    throw ShapeError("merge_inverse_cas: lambda count != producer output channels");
  }
  check_lambdas(cas);
  RealMatrix out = prev_w;
  for (std::size_t r = 0; r < prev_w.rows(); ++r) {
    for (double& v : out.row(r)) v /= cas.lambdas[r];
  }
  return out;
}

RealMatrix apply_inverse_cas_to_activations(const RealMatrix& x, const CasScales& cas) {
  if (cas.lambdas.size() != x.cols()) throw ShapeError("activation width != lambda count");
  check_lambdas(cas);
  RealMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= cas.lambdas[c];
  }
  return out;
}

}  // namespace qlab
