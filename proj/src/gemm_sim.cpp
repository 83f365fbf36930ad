// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/gemm_sim.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "qlab/error.hpp"

namespace qlab {
namespace {

void check_shapes(std::span<const Fp8ActivationRow> x, const QuantizedWeight& w,
                  const EpilogueSpec& ep) {
  for (const auto& row : x) {
    if (row.codes.size() != w.cols) {
      throw ShapeError("int4fp8_gemm: activation width " + std::to_string(row.codes.size()) +
                       " != weight cols " + std::to_string(w.cols));
    }
  }
  if (w.codes.size() != w.rows * w.cols || w.scale_bits.size() != w.rows * w.groups_per_row()) {
    throw ShapeError("int4fp8_gemm: malformed quantized weight");
  }
  for (const RealMatrix* m : {ep.multiplier, ep.residual}) {
    if (m != nullptr && (m->rows() != x.size() || m->cols() != w.rows)) {
      throw ShapeError("int4fp8_gemm: epilogue operand shape mismatch");
    }
  }
}

float activate(Activation a, float v) {
  switch (a) {
    case Activation::none: return v;
    case Activation::silu: return silu(v);
    case Activation::relu: return v > 0.0f ? v : 0.0f;
  }
  return v;
}

// Everything after the FP32 accumulation of one output element.
double finish(float acc, float beta, int pts, const EpilogueSpec& ep, std::size_t m,
              std::size_t n) {
  float y = acc * beta;
  y = std::ldexp(y, -pts);
  y = activate(ep.activation, y);
  if (ep.multiplier != nullptr) y = y * static_cast<float>((*ep.multiplier)(m, n));
  if (ep.residual != nullptr) y = y + static_cast<float>((*ep.residual)(m, n));
  return round_to(ep.output_format, y);
}

void fill_trace(GemmTrace* trace, std::size_t m, const QuantizedWeight& w) {
  if (trace == nullptr) return;
  trace->multiplies = static_cast<std::uint64_t>(m) * w.rows * w.cols;
  trace->lut_lookups = static_cast<std::uint64_t>(w.rows) * w.cols;
  trace->output_scale_multiplies = static_cast<std::uint64_t>(m) * w.rows;
}

std::vector<float> activation_values(const Fp8ActivationRow& row) {
  const auto& table = fp8_value_table();
  std::vector<float> v(row.codes.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(table[row.codes[k].bits()]);
  return v;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::silu: return "silu";
    case Activation::relu: return "relu";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "none") return Activation::none;
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  throw DataError("unknown activation '" + std::string(s) + "'");
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

RealMatrix int4fp8_gemm(std::span<const Fp8ActivationRow> x, const QuantizedWeight& w,
                        const EpilogueSpec& ep, GemmTrace* trace) {
  check_shapes(x, w, ep);
  const std::size_t M = x.size(), N = w.rows, K = w.cols, G = w.group_size;

  // Expand the weight once: each group's 16-entry table indexed by its codes.
  std::vector<float> wf(N * K);
#pragma omp parallel for schedule(static)
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < w.groups_per_row(); ++g) {
      const std::array<double, 16> lut = dequant_table(w.scale(n, g));
      for (std::size_t k = g * G; k < (g + 1) * G; ++k) {
        wf[n * K + k] = static_cast<float>(lut[w.code(n, k) + 8]);
      }
    }
  }

  RealMatrix y(M, N);
#pragma omp parallel for schedule(static)
  for (std::size_t m = 0; m < M; ++m) {
    const std::vector<float> a = activation_values(x[m]);
    const float beta = static_cast<float>(x[m].scale_beta.value());
    for (std::size_t n = 0; n < N; ++n) {
      const float* wr = wf.data() + n * K;
      float acc = 0.0f;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * wr[k];
      y(m, n) = finish(acc, beta, w.pts_exponent, ep, m, n);
    }
  }
  fill_trace(trace, M, w);
  return y;
}

RealMatrix int4fp8_gemm_serial(std::span<const Fp8ActivationRow> x, const QuantizedWeight& w,
                               const EpilogueSpec& ep, GemmTrace* trace) {
  check_shapes(x, w, ep);
  const std::size_t M = x.size(), N = w.rows, K = w.cols, G = w.group_size;
  std::vector<std::array<double, 16>> luts;
  luts.reserve(N * w.groups_per_row());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < w.groups_per_row(); ++g) luts.push_back(dequant_table(w.scale(n, g)));
  }
  RealMatrix y(M, N);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = 0; n < N; ++n) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = luts[n * w.groups_per_row() + k / G][w.code(n, k) + 8];
        const double av = fp8_decode(x[m].codes[k]);
        acc += static_cast<float>(av * wv);
      }
      y(m, n) = finish(acc, static_cast<float>(bf16_decode(x[m].scale_beta)), w.pts_exponent, ep,
                       m, n);
    }
  }
  fill_trace(trace, M, w);
  return y;
}

RealMatrix reference_gemm(const RealMatrix& x, const RealMatrix& w) {
  if (x.cols() != w.cols()) throw ShapeError("reference_gemm: inner dimensions differ");
  RealMatrix y(x.rows(), w.rows());
#pragma omp parallel for schedule(static)
  for (std::size_t m = 0; m < x.rows(); ++m) {
    for (std::size_t n = 0; n < w.rows(); ++n) {
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(m, k) * w(n, k);
      y(m, n) = acc;
    }
  }
  return y;
}

}  // namespace qlab
