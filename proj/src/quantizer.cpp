// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qlab/error.hpp"

namespace qlab {
namespace {

constexpr double kInt4Denominator = 7.0;  // 2^(b-1) - 1 for b = 4

const FloatFormat& float_format(ScaleFormat f) {
  return f == ScaleFormat::fp8 ? kE4M3Format : kBf16Format;
}

double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("quantize: non-finite input");
    m = std::max(m, std::fabs(v));
  }
  return m;
}

// Largest scale on the format grid with 7 * sigma <= max_abs. Encoding
// max_abs / 7 toward zero can be one code too high when the double quotient
// rounds up onto a grid point; the exact check below undoes that.
GroupScale truncated_scale(double max_abs_value, ScaleFormat format) {
  const FloatFormat& fmt = float_format(format);
  auto bits = static_cast<std::uint16_t>(
      encode_bits(max_abs_value / kInt4Denominator, fmt, RoundingMode::toward_zero));
  if (bits != 0 && kInt4Denominator * decode_bits(bits, fmt) > max_abs_value) --bits;
  return {format, bits};
}

// clamp(round_half_even(x / sigma), -8, 7), computed without rounding the
// quotient: k * sigma and (k + 1/2) * sigma are exact for the small k involved.
std::int8_t int4_code(double x, double sigma) {
  const double a = std::fabs(x);
  double k = std::floor(a / sigma);
  while ((k + 1.0) * sigma <= a) k += 1.0;
  while (k > 0.0 && k * sigma > a) k -= 1.0;
  const double mid = (k + 0.5) * sigma;
  double r = k;
  if (a > mid || (a == mid && std::fmod(k, 2.0) != 0.0)) r = k + 1.0;
  const double s = x < 0 ? -r : r;
  return static_cast<std::int8_t>(std::clamp(s, double{kInt4Min}, double{kInt4Max}));
}

void quantize_span(std::span<const double> values, ScaleFormat format, GroupScale& scale,
                   std::span<std::int8_t> codes) {
  scale = truncated_scale(max_abs(values), format);
  const double sigma = scale.value();
  for (std::size_t i = 0; i < values.size(); ++i) {
    codes[i] = sigma == 0.0 ? std::int8_t{0} : int4_code(values[i], sigma);
  }
}

}  // namespace

std::string_view to_string(ScaleFormat f) { return f == ScaleFormat::fp8 ? "fp8" : "bf16"; }

ScaleFormat parse_scale_format(std::string_view name) {
  if (name == "fp8" || name == "fp8e4m3") return ScaleFormat::fp8;
  if (name == "bf16") return ScaleFormat::bf16;
  throw DataError("unknown scale format '" + std::string(name) + "'");
}

double GroupScale::value() const { return decode_bits(bits, float_format(format)); }

QuantGroup int4_symmetric_quantize(std::span<const double> values, ScaleFormat format) {
  if (values.empty()) throw DataError("empty group");
  QuantGroup g;
  g.codes.resize(values.size());
  quantize_span(values, format, g.scale, g.codes);
  return g;
}

std::array<Fp8E4M3, 16> build_dequant_lut(Fp8E4M3 scale) {
  std::array<Fp8E4M3, 16> lut{};
  const double sigma = fp8_decode(scale);
  for (int v = kInt4Min; v <= kInt4Max; ++v) lut[v + 8] = fp8_encode(v * sigma);
  return lut;
}

std::array<double, 16> dequant_table(GroupScale scale) {
  std::array<double, 16> table{};
  if (scale.format == ScaleFormat::fp8) {
    const auto lut = build_dequant_lut(Fp8E4M3::from_bits(static_cast<std::uint8_t>(scale.bits)));
    for (std::size_t i = 0; i < 16; ++i) table[i] = fp8_decode(lut[i]);
  } else {
    const double sigma = scale.value();
    for (int v = kInt4Min; v <= kInt4Max; ++v) table[v + 8] = bf16_decode(bf16_encode(v * sigma));
  }
  return table;
}

Fp8ActivationRow fp8_quantize_activation_row(std::span<const double> row) {
  Fp8ActivationRow out;
  out.codes.resize(row.size());
  const double m = max_abs(row);
  Bf16 beta = bf16_encode(m / kFp8Max);
  if (m == 0.0 || bf16_decode(beta) == 0.0) beta = bf16_encode(1.0);
  out.scale_beta = beta;
  const double b = bf16_decode(beta);
  for (std::size_t i = 0; i < row.size(); ++i) out.codes[i] = fp8_encode(row[i] / b);
  return out;
}

std::vector<Fp8ActivationRow> fp8_quantize_activations(const RealMatrix& x) {
  std::vector<Fp8ActivationRow> rows(x.rows());
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < x.rows(); ++r) rows[r] = fp8_quantize_activation_row(x.row(r));
  return rows;
}

QuantizedWeight quantize_weight(const RealMatrix& w, std::size_t group_size, int pts_exponent,
                                ScaleFormat format, std::string layer) {
  if (group_size == 0 || w.cols() % group_size != 0) {
    throw DataError("quantize_weight: input dim " + std::to_string(w.cols()) +
                    " is not divisible by group size " + std::to_string(group_size));
  }
  if (pts_exponent < 0) throw DataError("quantize_weight: negative PTS exponent");
  QuantizedWeight q;
  q.layer = std::move(layer);
  q.rows = w.rows();
  q.cols = w.cols();
  q.group_size = group_size;
  q.scale_format = format;
  q.pts_exponent = pts_exponent;
  const std::size_t groups = q.groups_per_row();
  q.scale_bits.assign(q.rows * groups, 0);
  q.codes.assign(q.rows * q.cols, 0);

#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      GroupScale scale;
      quantize_span(w.row(r).subspan(g * group_size, group_size), format, scale,
                    std::span(q.codes).subspan(r * q.cols + g * group_size, group_size));
      q.scale_bits[r * groups + g] = scale.bits;
    }
  }
  return q;
}

QuantizedKvRow quantize_kv_row(std::span<const double> row) {
  const QuantGroup g = int4_symmetric_quantize(row, ScaleFormat::fp8);
  return {Fp8E4M3::from_bits(static_cast<std::uint8_t>(g.scale.bits)), g.codes};
}

std::vector<double> dequantize(const QuantGroup& group) {
  const auto table = dequant_table(group.scale);
  std::vector<double> out(group.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = table[group.codes[i] + 8];
  return out;
}

std::vector<double> dequantize(const QuantizedKvRow& row) {
  return dequantize(QuantGroup{{ScaleFormat::fp8, row.scale.bits()}, row.codes});
}

std::vector<double> dequantize(const Fp8ActivationRow& row) {
  const double b = bf16_decode(row.scale_beta);
  std::vector<double> out(row.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fp8_decode(row.codes[i]) * b;
  return out;
}

RealMatrix dequantize(const QuantizedWeight& w) {
  RealMatrix out(w.rows, w.cols);
  const double unscale = std::ldexp(1.0, -w.pts_exponent);
  const std::size_t groups = w.groups_per_row();
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      const auto table = dequant_table(w.scale(r, g));
      for (std::size_t c = g * w.group_size; c < (g + 1) * w.group_size; ++c) {
        out(r, c) = table[w.code(r, c) + 8] * unscale;
      }
    }
  }
  return out;
}

RealMatrix fake_quantize_kv(const RealMatrix& m) {
  RealMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto deq = dequantize(quantize_kv_row(m.row(r)));
    std::ranges::copy(deq, out.row(r).begin());
  }
  return out;
}

RealMatrix fake_quantize_activations(const RealMatrix& m) {
  RealMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto deq = dequantize(fp8_quantize_activation_row(m.row(r)));
    std::ranges::copy(deq, out.row(r).begin());
  }
  return out;
}

}  // namespace qlab
