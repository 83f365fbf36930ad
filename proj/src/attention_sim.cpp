// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/attention_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qlab/error.hpp"

namespace qlab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_qkv(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query and key widths differ");
  if (k.rows() != v.rows()) throw ShapeError("attention: key and value lengths differ");
  if (k.rows() == 0) throw ShapeError("attention: no keys");
}

// One query block [r0, r1) through the full tile pipeline.
class BlockRunner {
 public:
  BlockRunner(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
              const TileSchedule& sched, const PrecisionPolicy& pol, std::size_t r0,
              std::size_t r1)
      : q_(q), k_(k), v_(v), sched_(sched), pol_(pol), acc_(pol.accum_format()), r0_(r0),
        rows_(r1 - r0), bc_(std::max<std::size_t>(1, std::min(sched.block_cols, k.rows()))),
        tau_(sched.tau_for(q.cols())),
        masked_(pol.rowmax_format == Format::fp16 ? -kFp16Format.max_finite : -kInf),
        o_(rows_, v.cols(), 0.0), m_(rows_, -kInf), l_(rows_, 0.0), s_(rows_, 1.0) {
    const std::size_t n = k.rows();
    tiles_ = (n + bc_ - 1) / bc_;
    // Tiles entirely right of the block's last row are fully masked and
    // leave m, l and O untouched.
    if (sched.causal) tiles_ = std::min(tiles_, (r1 - 1) / bc_ + 1);
  }

  void run(RealMatrix& out, AttentionTrace* trace) {
    if (trace != nullptr) {
      for (std::size_t r = 0; r < rows_; ++r) trace->rowmax[r0_ + r].clear();
    }
    // Stage 1 for tile 0, then softmax of tile 0 with a fresh running max.
    RealMatrix s_prev = masked_scores(0);
    for (std::size_t r = 0; r < rows_; ++r) m_[r] = round_to(pol_.rowmax_format, row_max(s_prev, r));
    record_max(trace);
    RealMatrix p_prev = softmax_tile(s_prev);
    RealMatrix p_prev2;

    for (std::size_t j = 2; j <= tiles_; ++j) {
      // PV of tile j-2 is issued before the softmax of tile j-1.
      p_prev2 = std::move(p_prev);
      accumulate_pv(p_prev2, j - 2);
      RealMatrix s_cur = masked_scores(j - 1);
      update_max(s_cur);
      record_max(trace);
      p_prev = softmax_tile(s_cur);
      rescale_output();
    }
    accumulate_pv(p_prev, tiles_ - 1);

    for (std::size_t r = 0; r < rows_; ++r) {
      const double inv_l = round_to(acc_, 1.0 / l_[r]);
      for (std::size_t c = 0; c < o_.cols(); ++c) {
        out(r0_ + r, c) = round_to(pol_.output_format, round_to(acc_, o_(r, c) * inv_l));
      }
      if (trace != nullptr) trace->final_rowsum[r0_ + r] = l_[r];
    }
  }

 private:
  std::size_t tile_begin(std::size_t j) const { return j * bc_; }

  bool is_masked(std::size_t row, std::size_t col) const {
    return col >= k_.rows() || (sched_.causal && col > row);
  }

  // S = mask(tau * Q K_j^T), accumulated in the score format.
  RealMatrix masked_scores(std::size_t j) const {
    RealMatrix s(rows_, bc_);
    const std::size_t d = q_.cols();
    for (std::size_t r = 0; r < rows_; ++r) {
      const std::size_t row = r0_ + r;
      for (std::size_t c = 0; c < bc_; ++c) {
        const std::size_t col = tile_begin(j) + c;
        if (is_masked(row, col)) {
          s(r, c) = masked_;
          continue;
        }
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          acc = round_to(pol_.score_format, acc + q_(row, t) * k_(col, t));
        }
        const double scaled = round_to(pol_.score_format, tau_ * acc);
        s(r, c) = round_to(pol_.rowmax_format, scaled);
      }
    }
    return s;
  }

  static double row_max(const RealMatrix& s, std::size_t r) {
    double m = -kInf;
    for (double x : s.row(r)) m = std::max(m, x);
    return m;
  }

  void update_max(const RealMatrix& s) {
    for (std::size_t r = 0; r < rows_; ++r) {
      const double m_old = m_[r];
      m_[r] = round_to(pol_.rowmax_format, std::max(m_old, row_max(s, r)));
      s_[r] = round_to(acc_, std::exp(round_to(pol_.rowmax_format, m_old - m_[r])));
      l_[r] = round_to(acc_, s_[r] * l_[r]);
    }
  }

  // P = exp(S - m) in the softmax format; l += rowsum(P) before P is encoded.
  RealMatrix softmax_tile(const RealMatrix& s) {
    RealMatrix p(rows_, bc_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < bc_; ++c) {
        const double diff = round_to(pol_.rowmax_format, s(r, c) - m_[r]);
        const double e = round_to(pol_.rowmax_format, std::exp(diff));
        l_[r] = round_to(acc_, l_[r] + e);
        p(r, c) = round_to(pol_.p_format, e * pol_.p_scale);
      }
    }
    return p;
  }

  void accumulate_pv(const RealMatrix& p, std::size_t j) {
    const double unscale = 1.0 / pol_.p_scale;
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < o_.cols(); ++c) {
        double t = 0.0;
        for (std::size_t x = 0; x < bc_; ++x) {
          const std::size_t col = tile_begin(j) + x;
          if (col >= v_.rows()) break;
          t = round_to(acc_, t + round_to(acc_, p(r, x) * v_(col, c)));
        }
        if (pol_.p_scale != 1.0) t = round_to(acc_, t * unscale);
        o_(r, c) = round_to(acc_, o_(r, c) + t);
      }
    }
  }

  void rescale_output() {
    for (std::size_t r = 0; r < rows_; ++r) {
      for (double& x : o_.row(r)) x = round_to(acc_, s_[r] * x);
    }
  }

  void record_max(AttentionTrace* trace) const {
    if (trace == nullptr) return;
    for (std::size_t r = 0; r < rows_; ++r) trace->rowmax[r0_ + r].push_back(m_[r]);
  }

  const RealMatrix& q_;
  const RealMatrix& k_;
  const RealMatrix& v_;
  const TileSchedule& sched_;
  const PrecisionPolicy& pol_;
  Format acc_;
  std::size_t r0_, rows_, bc_, tiles_ = 0;
  double tau_, masked_;
  RealMatrix o_;
  std::vector<double> m_, l_, s_;
};

RealMatrix run_tiled(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                     const TileSchedule& schedule, const PrecisionPolicy& policy,
                     AttentionTrace* trace, bool parallel) {
  check_qkv(q, k, v);
  if (schedule.block_rows == 0 || schedule.block_cols == 0) {
    throw ShapeError("attention: block sizes must be positive");
  }
  if (schedule.causal && q.rows() > k.rows()) {
    throw ShapeError("attention: causal prefill needs a key for every query");
  }
  if (!(policy.p_scale > 0.0)) throw DataError("attention: p_scale must be positive");
  const PrecisionPolicy pol = policy.effective();
  if (trace != nullptr) {
    trace->rowmax.assign(q.rows(), {});
    trace->final_rowsum.assign(q.rows(), 0.0);
  }
  RealMatrix out(q.rows(), v.cols());
  const std::size_t br = schedule.block_rows;
  const std::ptrdiff_t blocks = static_cast<std::ptrdiff_t>((q.rows() + br - 1) / br);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t r0 = static_cast<std::size_t>(b) * br;
    BlockRunner(q, k, v, schedule, pol, r0, std::min(q.rows(), r0 + br)).run(out, trace);
  }
  return out;
}

}  // namespace

PrecisionPolicy PrecisionPolicy::mixed() { return {}; }

PrecisionPolicy PrecisionPolicy::exact() {
  PrecisionPolicy p;
  p.exact_mode = true;
  return p.effective();
}

PrecisionPolicy PrecisionPolicy::fp32() {
  return {Format::fp32, Format::fp32, Format::fp32, 1.0, Format::fp32, false};
}

PrecisionPolicy PrecisionPolicy::fp16_scores() {
  return {Format::fp16, Format::fp16, Format::fp32, 1.0, Format::fp32, false};
}

PrecisionPolicy PrecisionPolicy::effective() const {
  if (!exact_mode) return *this;
  return {Format::fp64, Format::fp64, Format::fp64, 1.0, Format::fp64, true};
}

std::string_view policy_name(const PrecisionPolicy& p) {
  const PrecisionPolicy e = p.effective();
  auto same = [](const PrecisionPolicy& a, const PrecisionPolicy& b) {
    return a.score_format == b.score_format && a.rowmax_format == b.rowmax_format &&
           a.p_format == b.p_format && a.p_scale == b.p_scale &&
           a.output_format == b.output_format && a.exact_mode == b.exact_mode;
  };
  if (same(e, PrecisionPolicy::exact())) return "exact";
  if (same(e, PrecisionPolicy::mixed())) return "mixed";
  if (same(e, PrecisionPolicy::fp32())) return "fp32";
  if (same(e, PrecisionPolicy::fp16_scores())) return "fp16-scores";
  return "custom";
}

PrecisionPolicy parse_policy(std::string_view name) {
  if (name == "mixed") return PrecisionPolicy::mixed();
  if (name == "exact") return PrecisionPolicy::exact();
  if (name == "fp32") return PrecisionPolicy::fp32();
  if (name == "fp16-scores") return PrecisionPolicy::fp16_scores();
  throw DataError("unknown precision policy '" + std::string(name) + "'");
}

double TileSchedule::tau_for(std::size_t head_dim) const {
  return tau.value_or(1.0 / std::sqrt(static_cast<double>(head_dim)));
}

RealMatrix reference_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                               bool causal, std::optional<double> tau) {
  check_qkv(q, k, v);
  const double t = tau.value_or(1.0 / std::sqrt(static_cast<double>(q.cols())));
  RealMatrix out(q.rows(), v.cols(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const std::size_t visible = causal ? std::min(r + 1, k.rows()) : k.rows();
    std::vector<double> s(visible);
    double m = -kInf;
    for (std::size_t c = 0; c < visible; ++c) {
      double acc = 0.0;
      for (std::size_t x = 0; x < q.cols(); ++x) acc += q(r, x) * k(c, x);
      s[c] = t * acc;
      m = std::max(m, s[c]);
    }
    double sum = 0.0;
    for (double& x : s) {
      x = std::exp(x - m);
      sum += x;
    }
    for (std::size_t c = 0; c < visible; ++c) {
      const double p = s[c] / sum;
      for (std::size_t x = 0; x < v.cols(); ++x) out(r, x) += p * v(c, x);
    }
  }
  return out;
}

RealMatrix tiled_attention_forward(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                   const TileSchedule& schedule, const PrecisionPolicy& policy,
                                   AttentionTrace* trace) {
  return run_tiled(q, k, v, schedule, policy, trace, true);
}

RealMatrix tiled_attention_forward_serial(const RealMatrix& q, const RealMatrix& k,
                                          const RealMatrix& v, const TileSchedule& schedule,
                                          const PrecisionPolicy& policy, AttentionTrace* trace) {
  return run_tiled(q, k, v, schedule, policy, trace, false);
}

RealMatrix quantize_p_tile(const RealMatrix& p, const PrecisionPolicy& policy) {
  const PrecisionPolicy pol = policy.effective();
  RealMatrix out(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.flat()[i] = round_to(pol.p_format, p.flat()[i] * pol.p_scale);
  }
  return out;
}

std::vector<double> reconstructed_p_rowsums(const RealMatrix& q, const RealMatrix& k,
                                            const TileSchedule& schedule,
                                            const PrecisionPolicy& policy) {
  PrecisionPolicy pol = policy;
  pol.output_format = Format::fp64;
  const RealMatrix ones(k.rows(), 1, 1.0);
  const RealMatrix o = tiled_attention_forward(q, k, ones, schedule, pol);
  std::vector<double> sums(o.rows());
  for (std::size_t r = 0; r < o.rows(); ++r) sums[r] = o(r, 0);
  return sums;
}

}  // namespace qlab
