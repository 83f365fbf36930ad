// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// INT4 x FP8 GEMM simulation: LUT dequantization of the weights, exact
// FP8 x FP8 products, FP32 accumulation in ascending k, per-row activation
// scale and 2^-n PTS folding, then an FP32 epilogue and one output encode.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "qlab/matrix.hpp"
#include "qlab/numerics.hpp"
#include "qlab/quantizer.hpp"

namespace qlab {

enum class Activation { none, silu, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

/// Applied in FP32 in this order: activation, multiply, residual add.
struct EpilogueSpec {
  Activation activation = Activation::none;
  const RealMatrix* multiplier = nullptr;  // elementwise, e.g. the gate path
  const RealMatrix* residual = nullptr;
  Format output_format = Format::bf16;
};

struct GemmTrace {
  std::uint64_t multiplies = 0;              // M * N * K
  std::uint64_t lut_lookups = 0;             // N * K, one per weight element
  std::uint64_t output_scale_multiplies = 0; // M * N

  friend bool operator==(const GemmTrace&, const GemmTrace&) = default;
};

/// x * sigmoid(x) in FP32.
float silu(float x);

/// Y = X W^T with X given as FP8 rows (M x K) and W as INT4 groups (N x K).
/// OpenMP over output rows; each element reduces sequentially over k.
RealMatrix int4fp8_gemm(std::span<const Fp8ActivationRow> x, const QuantizedWeight& w,
                        const EpilogueSpec& epilogue = {}, GemmTrace* trace = nullptr);

/// Single-threaded reference with a LUT lookup per multiply. Bit-identical
/// to int4fp8_gemm.
RealMatrix int4fp8_gemm_serial(std::span<const Fp8ActivationRow> x, const QuantizedWeight& w,
                               const EpilogueSpec& epilogue = {}, GemmTrace* trace = nullptr);

/// Y = X W^T in double, ascending k.
RealMatrix reference_gemm(const RealMatrix& x, const RealMatrix& w);

}  // namespace qlab
