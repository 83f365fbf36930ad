// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic block weights and activations with optional injected
// outliers. All values are rounded to FP32 so that they survive a package
// round trip unchanged.

#pragma once

#include <cstdint>
#include <vector>

#include "qlab/matrix.hpp"
#include "qlab/model_block.hpp"

namespace qlab {

struct SynthConfig {
  std::uint64_t seed = 0;
  BlockDims dims{};
  std::size_t tokens = 128;        // evaluation input rows
  std::size_t calib_tokens = 128;  // calibration input rows
  double input_std = 1.0;
  // Weight entries ~ N(0, (gain / sqrt(fan_in))^2).
  double weight_gain = 1.0;
  // Extra gain on wq and wk. Scores scale with (input_std * weight_gain * qk_gain)^2.
  double qk_gain = 1.0;
  // Input channels (columns) scaled by weight_outlier_scale in wo, w_up,
  // w_gate (shared set) and w_down.
  std::size_t weight_outlier_channels = 0;
  double weight_outlier_scale = 1.0;
  // Explicit outlier channels for all three sets; overrides the random pick.
  std::vector<std::size_t> weight_outlier_at;
  // Per head, key_outlier_pairs of the lowest-frequency RoPE pairs get a large,
  // nearly constant offset: a dedicated input channel holds the constant
  // input_std * sqrt(model_dim) and only these key rows read it, with weight
  // key_outlier_scale * gain / sqrt(model_dim). The offset is then about
  // key_outlier_scale times a typical key entry.
  std::size_t key_outlier_pairs = 0;
  double key_outlier_scale = 1.0;
  // Fraction of weight rows scaled down by tiny_row_scale.
  double tiny_row_fraction = 0.0;
  double tiny_row_scale = 1.0;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SynthData {
  BlockWeights weights;
  RealMatrix calibration;  // calib_tokens x model_dim
  RealMatrix input;        // tokens x model_dim
  std::vector<std::size_t> weight_outlier_channels;
  std::vector<std::vector<std::size_t>> key_outlier_pairs;  // per head, ascending
  std::size_t offset_channel = 0;  // meaningful when key_outlier_pairs > 0
};

SynthData generate_block(const SynthConfig& cfg);

/// rows x cols matrix of N(0, std^2) samples rounded to FP32.
RealMatrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed);

}  // namespace qlab
