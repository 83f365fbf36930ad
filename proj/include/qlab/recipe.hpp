// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Everything calibration decides for one block, and its versioned JSON form.

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlab/quantizer.hpp"
#include "qlab/rope_calib.hpp"
#include "qlab/smoothing.hpp"

namespace qlab {

struct BlockDims {
  std::size_t model_dim = 256;
  std::size_t head_dim = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 512;

  std::size_t attn_dim() const { return head_dim * n_heads; }
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

struct HeadCalibration {
  RpnScales rpn;
  CrsScales crs;

  friend bool operator==(const HeadCalibration&, const HeadCalibration&) = default;
};

/// Linear layers of the block, in recipe order.
inline constexpr const char* kLayerNames[] = {"wq", "wk", "wv", "wo", "w_up", "w_gate", "w_down"};

struct BlockRecipe {
  BlockDims dims;
  RopeConfig rope;
  std::size_t group_size = 128;
  ScaleFormat scale_format = ScaleFormat::fp8;
  // One entry per kLayerNames element. Layers sharing an input share lambdas.
  std::vector<SmoothingRecipe> layers;
  std::vector<HeadCalibration> heads;

  const SmoothingRecipe& layer(std::string_view name) const;
  /// Input width of a named layer.
  std::size_t layer_cols(std::string_view name) const;
  /// Throws DataError when an array length disagrees with the dims.
  void validate() const;

  friend bool operator==(const BlockRecipe&, const BlockRecipe&) = default;
};

inline constexpr int kRecipeVersion = 1;

nlohmann::json recipe_to_json(const BlockRecipe& r);
/// Checks the format tag and version, then validate().
BlockRecipe recipe_from_json(const nlohmann::json& j);

void write_recipe_file(const BlockRecipe& r, const std::filesystem::path& path);
BlockRecipe read_recipe_file(const std::filesystem::path& path);

}  // namespace qlab
