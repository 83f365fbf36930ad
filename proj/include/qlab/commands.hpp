// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The work behind each `qlab` subcommand, independent of argument parsing.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qlab/model_block.hpp"
#include "qlab/synth.hpp"
#include "qlab/tensorio.hpp"

namespace qlab {

inline constexpr int kMetricsSchemaVersion = 1;

/// Weights, calibration and input tensors of a synthetic block.
Package make_block_package(const SynthData& data, const SynthConfig& cfg);
SynthData load_block_package(const Package& p);

/// Quantized package: original weights, merged weights, INT4 codes and
/// scales of every layer, the recipe, and the inputs carried over.
Package make_quantized_package(const QuantizedBlock& qb, const Package& source);
QuantizedBlock load_quantized_package(const Package& p);
bool is_quantized_package(const Package& p);

void cmd_gen(const SynthConfig& cfg, const std::filesystem::path& out);
void cmd_calibrate(const std::filesystem::path& package, const CalibrationConfig& cfg,
                   const std::filesystem::path& recipe_out);
void cmd_quantize(const std::filesystem::path& package, const std::filesystem::path& recipe,
                  const std::filesystem::path& out);

struct RunOptions {
  ForwardOptions forward{};
  bool passthrough = false;  // unquantized merged block in double precision
  std::optional<std::filesystem::path> input;  // package holding an "input" tensor
};

/// Writes an outputs package ("output", fp32) and returns the metrics JSON.
nlohmann::json cmd_run(const std::filesystem::path& qpackage, const RunOptions& opts,
                       const std::filesystem::path& outputs);

/// Uses the recipe inside a quantized package, or calibrates a plain package
/// with `cfg`.
nlohmann::json cmd_report(const std::filesystem::path& package, const CalibrationConfig& cfg,
                          std::size_t batch, const std::optional<std::filesystem::path>& csv);

nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace qlab
