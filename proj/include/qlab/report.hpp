// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-layer quantization statistics: FP8-scale underflow fractions before and
// after smoothing, PTS exponents, outlier pairs and the LUT dequantization
// cost estimate.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlab/model_block.hpp"

namespace qlab {

inline constexpr int kReportSchemaVersion = 1;

/// (batch + d_in) * d_out: one LUT lookup per weight plus one scale multiply
/// per output element.
std::uint64_t dequant_cost(std::uint64_t batch, std::uint64_t d_in, std::uint64_t d_out);

struct LayerReport {
  std::string layer;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double underflow_raw = 0.0;        // original weights
  double underflow_smoothed = 0.0;   // after CAS and RPN merges
  double underflow_after_pts = 0.0;  // after the 2^n factor
  int pts_exponent = 0;
  PtsStop pts_stop = PtsStop::underflow_stable;
  std::uint64_t dequant_ops = 0;
};

struct BlockReport {
  std::size_t group_size = 128;
  std::size_t batch = 16;
  std::vector<LayerReport> layers;
  std::vector<std::vector<std::size_t>> outlier_pairs;  // per head
};

BlockReport make_report(const BlockWeights& original, const BlockWeights& merged,
                        const BlockRecipe& recipe, std::size_t batch);

nlohmann::json report_to_json(const BlockReport& r);
std::string report_to_csv(const BlockReport& r);

}  // namespace qlab
