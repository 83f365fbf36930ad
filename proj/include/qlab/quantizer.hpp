// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Symmetric INT4 quantization with FP8 (or BF16) group scales, FP8 activation
// rows with BF16 scales, per-token KV quantization and the 16-entry
// dequantization lookup table.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qlab/matrix.hpp"
#include "qlab/numerics.hpp"

namespace qlab {

enum class ScaleFormat { fp8, bf16 };

std::string_view to_string(ScaleFormat f);
ScaleFormat parse_scale_format(std::string_view name);

/// A group scale stored as its bit pattern in the chosen format.
struct GroupScale {
  ScaleFormat format = ScaleFormat::fp8;
  std::uint16_t bits = 0;

  double value() const;
  bool is_zero() const { return value() == 0.0; }
  friend bool operator==(const GroupScale&, const GroupScale&) = default;
};

/// One quantization group: a scale and INT4 codes in [-8, 7].
/// If the scale decodes to zero every code is zero.
struct QuantGroup {
  GroupScale scale;
  std::vector<std::int8_t> codes;
};

/// Per-token quantized key/value row (always an FP8 scale).
struct QuantizedKvRow {
  Fp8E4M3 scale;
  std::vector<std::int8_t> codes;
};

/// FP8 activation row with its BF16 scale beta (value ~= beta * code).
struct Fp8ActivationRow {
  Bf16 scale_beta;
  std::vector<Fp8E4M3> codes;
};

/// Group-wise INT4 weight. Groups are contiguous `group_size` spans along the
/// input dimension of each output row. The stored codes represent
/// W * 2^pts_exponent; dequantization divides that factor back out.
struct QuantizedWeight {
  std::string layer;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t group_size = 128;
  ScaleFormat scale_format = ScaleFormat::fp8;
  int pts_exponent = 0;
  std::vector<std::uint16_t> scale_bits;  // rows x groups_per_row
  std::vector<std::int8_t> codes;         // rows x cols

  std::size_t groups_per_row() const { return group_size == 0 ? 0 : cols / group_size; }
  GroupScale scale(std::size_t row, std::size_t group) const {
    return {scale_format, scale_bits[row * groups_per_row() + group]};
  }
  std::int8_t code(std::size_t row, std::size_t col) const { return codes[row * cols + col]; }
};

/// sigma = toward_zero(max|x| / 7) in `format`;
/// codes = clamp(round_half_even(x / sigma), -8, 7). Throws DataError on empty input.
QuantGroup int4_symmetric_quantize(std::span<const double> values,
                                   ScaleFormat format = ScaleFormat::fp8);

/// entry[v + 8] = fp8_encode(v * sigma) for v in [-8, 7].
std::array<Fp8E4M3, 16> build_dequant_lut(Fp8E4M3 scale);

/// Dequantized value for each of the 16 codes (index code + 8). FP8 scales go
/// through `build_dequant_lut`; BF16 scales round code * sigma to BF16.
std::array<double, 16> dequant_table(GroupScale scale);

Fp8ActivationRow fp8_quantize_activation_row(std::span<const double> row);
std::vector<Fp8ActivationRow> fp8_quantize_activations(const RealMatrix& x);

/// Pre: `w` already carries every smoothing merge and the 2^n PTS factor.
/// Throws DataError when cols is not a multiple of group_size.
QuantizedWeight quantize_weight(const RealMatrix& w, std::size_t group_size, int pts_exponent,
                                ScaleFormat format = ScaleFormat::fp8, std::string layer = {});

QuantizedKvRow quantize_kv_row(std::span<const double> row);

std::vector<double> dequantize(const QuantGroup& group);
std::vector<double> dequantize(const QuantizedKvRow& row);
std::vector<double> dequantize(const Fp8ActivationRow& row);
/// Includes the 2^-pts_exponent factor.
RealMatrix dequantize(const QuantizedWeight& w);

/// Quantize-dequantize every row of `m` per token (INT4 codes, FP8 scales).
RealMatrix fake_quantize_kv(const RealMatrix& m);
/// Quantize-dequantize every row of `m` to FP8 with a BF16 row scale.
RealMatrix fake_quantize_activations(const RealMatrix& m);

}  // namespace qlab
