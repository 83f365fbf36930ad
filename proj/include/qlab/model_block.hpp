// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// A single toy transformer block: QKV projections, RoPE, causal prefill
// attention, output projection and a gated FFN, down(silu(gate(h)) * up(h)).
// No biases, norms or residual connections.
//
// Offline merges performed by calibration, in order:
//   lambda_down  columns of w_down, inverse into the rows of w_up
//   lambda_ug    columns of [w_up; w_gate] (shared), inverse into rows of wo
//   lambda_o     columns of wo, inverse into rows of wv
//   rpn s        rows of wk divided by s, rows of wq multiplied by s
//   lambda_qkv   columns of [wq; wk; wv] (shared); inverse applied to the
//                block input online (a no-op in the default constant mode)
//   pts          per tensor, 2^n folded back after each GEMM
// CRS runs online after RoPE: keys divided by t, queries multiplied by t.

#pragma once

#include <string_view>

#include "qlab/attention_sim.hpp"
#include "qlab/matrix.hpp"
#include "qlab/quantizer.hpp"
#include "qlab/recipe.hpp"

namespace qlab {

struct BlockWeights {
  BlockDims dims;
  RealMatrix wq, wk, wv;     // attn_dim x model_dim
  RealMatrix wo;             // model_dim x attn_dim
  RealMatrix w_up, w_gate;   // ffn_dim x model_dim
  RealMatrix w_down;         // model_dim x ffn_dim

  const RealMatrix& layer(std::string_view name) const;
  RealMatrix& layer(std::string_view name);
  /// Throws ShapeError on inconsistent shapes or an odd head dim.
  void validate() const;
  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct SmoothingToggles {
  bool cas = true;
  bool pts = true;
  bool rpn = true;
  bool crs = true;

  static SmoothingToggles none() { return {false, false, false, false}; }
};

struct CalibrationConfig {
  std::size_t group_size = 128;
  double alpha = 8.0;
  double beta = 8.0;
  std::size_t outlier_pairs = 8;
  ScaleFormat scale_format = ScaleFormat::fp8;
  double rope_base = 10000.0;
  CasTarget cas_qkv{CasMode::constant_one, 1.0};
  CasTarget cas_o{};
  CasTarget cas_up_gate{};
  CasTarget cas_down{};
  SmoothingToggles toggles{};
};

struct QuantizedBlock {
  BlockRecipe recipe;
  BlockWeights original;
  BlockWeights merged;  // every merge applied, without the 2^n PTS factor
  std::vector<QuantizedWeight> weights;  // kLayerNames order

  const QuantizedWeight& weight(std::string_view name) const;
};

/// Scales, outlier sets and PTS exponents from the weights and calibration inputs.
BlockRecipe calibrate_recipe(const BlockWeights& w, const RealMatrix& calib_x,
                             const CalibrationConfig& cfg);
/// Performs the merges a recipe describes. No quantization.
BlockWeights merge_recipe(const BlockWeights& w, const BlockRecipe& recipe);
/// merge_recipe, then quantizes every layer with its PTS exponent.
QuantizedBlock apply_recipe(const BlockWeights& w, const BlockRecipe& recipe);
QuantizedBlock calibrate_block(const BlockWeights& w, const RealMatrix& calib_x,
                               const CalibrationConfig& cfg);

/// Double precision forward of the unmodified block.
RealMatrix forward_fp32(const BlockWeights& w, const RealMatrix& x, double rope_base = 10000.0);

struct ForwardOptions {
  PrecisionPolicy policy = PrecisionPolicy::mixed();
  TileSchedule schedule{};
};

/// Double precision forward of the merged block with the online input and
/// CRS scalings. Equal to forward_fp32 of the original weights up to rounding.
/// With `tiled`, attention runs through the tiled kernel under its policy.
RealMatrix forward_merged(const QuantizedBlock& qb, const RealMatrix& x,
                          const ForwardOptions* tiled = nullptr);

struct ErrorMetrics {
  double relative_frobenius = 0.0;
  double max_abs = 0.0;
};

ErrorMetrics compare_outputs(const RealMatrix& out, const RealMatrix& reference);

struct QuantizedForward {
  RealMatrix output;
  ErrorMetrics error;  // against forward_fp32 of the original weights
};

/// FP8 activations into every INT4 x FP8 GEMM, INT4 per-token keys/values
/// and FP8 queries into the simulated attention.
QuantizedForward forward_quantized(const QuantizedBlock& qb, const RealMatrix& x,
                                   const ForwardOptions& opts = {});

}  // namespace qlab
