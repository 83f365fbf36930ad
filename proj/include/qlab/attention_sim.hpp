// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prefill attention with an online softmax over key/value tiles, following
// the three-stage (QK^T, softmax, PV) consumer pipeline tile by tile, plus a
// full-precision reference.
//
// Per query block the pipeline keeps the PV product one tile behind the
// softmax: at step j it accumulates P_{j-2} V_{j-2}, updates the running max
// and sum with tile j-1, computes P_{j-1} and only then rescales O. The
// numerics depend on that order, so it is reproduced exactly.

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "qlab/matrix.hpp"
#include "qlab/numerics.hpp"

namespace qlab {

struct PrecisionPolicy {
  Format score_format = Format::fp16;   // QK^T accumulation and tau * S
  Format rowmax_format = Format::fp16;  // m, S - m and exp
  Format p_format = Format::fp8_e4m3;   // encoded P entering the PV product
  double p_scale = 1.0;                 // P is encoded as p * p_scale
  Format output_format = Format::bf16;
  // Runs every stage, including l, s and O, in double with p_scale 1.
  bool exact_mode = false;

  /// FP16 scores and softmax, FP8 P, FP32 l/s/O, BF16 output.
  static PrecisionPolicy mixed();
  static PrecisionPolicy exact();
  /// FP32 everywhere (accumulators are FP32 anyway).
  static PrecisionPolicy fp32();
  /// FP16 scores and softmax, FP32 P and output.
  static PrecisionPolicy fp16_scores();

  /// Formats after applying exact_mode.
  PrecisionPolicy effective() const;
  Format accum_format() const { return exact_mode ? Format::fp64 : Format::fp32; }
};

std::string_view policy_name(const PrecisionPolicy& p);
PrecisionPolicy parse_policy(std::string_view name);

struct TileSchedule {
  std::size_t block_rows = 64;  // B_r
  std::size_t block_cols = 64;  // B_c; larger than N means a single tile
  bool causal = true;
  std::optional<double> tau;    // defaults to 1/sqrt(d)

  double tau_for(std::size_t head_dim) const;
};

struct AttentionTrace {
  // rowmax[r][j]: running max of query row r after tile j. Causal schedules
  // skip tiles that are fully masked for a whole query block.
  std::vector<std::vector<double>> rowmax;
  std::vector<double> final_rowsum;  // l per row before the 1/l normalization
};

/// Row r of the result only sees keys 0..r when causal.
RealMatrix reference_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                               bool causal, std::optional<double> tau = std::nullopt);

/// OpenMP over query blocks.
RealMatrix tiled_attention_forward(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                   const TileSchedule& schedule, const PrecisionPolicy& policy,
                                   AttentionTrace* trace = nullptr);

/// Same dataflow on one thread; bit-identical to tiled_attention_forward.
RealMatrix tiled_attention_forward_serial(const RealMatrix& q, const RealMatrix& k,
                                          const RealMatrix& v, const TileSchedule& schedule,
                                          const PrecisionPolicy& policy,
                                          AttentionTrace* trace = nullptr);

/// fp8/p_format encode of p * p_scale, elementwise.
RealMatrix quantize_p_tile(const RealMatrix& p, const PrecisionPolicy& policy);

/// Row sums of the normalized P the tiled kernel effectively applies,
/// obtained by running it against an all-ones value column.
std::vector<double> reconstructed_p_rowsums(const RealMatrix& q, const RealMatrix& k,
                                            const TileSchedule& schedule,
                                            const PrecisionPolicy& policy);

}  // namespace qlab
