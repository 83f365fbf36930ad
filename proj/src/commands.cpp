// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/commands.hpp"

#include <fstream>
#include <string>
#include <string_view>
#include <utility>

#include "qlab/error.hpp"
#include "qlab/report.hpp"

namespace qlab {
namespace {

using nlohmann::json;

json dims_json(const BlockDims& d) {
  return {{"model_dim", d.model_dim},
          {"head_dim", d.head_dim},
          {"n_heads", d.n_heads},
          {"ffn_dim", d.ffn_dim}};
}

BlockDims dims_from(const json& j) {
  try {
    BlockDims d;
    d.model_dim = j.at("model_dim").get<std::size_t>();
    d.head_dim = j.at("head_dim").get<std::size_t>();
    d.n_heads = j.at("n_heads").get<std::size_t>();
    d.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    return d;
  } catch (const json::exception& e) {
    throw DataError(std::string("package dims: ") + e.what());
  }
}

const Tensor& require(const Package& p, const std::string& name) {
  if (!p.contains(name)) throw DataError("package has no tensor '" + name + "'");
  return p.at(name);
}

RealMatrix require_matrix(const Package& p, const std::string& name, std::size_t rows,
                          std::size_t cols) {
  RealMatrix m = to_matrix(require(p, name));
  if (m.rows() != rows || m.cols() != cols) {
    throw DataError("tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
  return m;
}

std::pair<std::size_t, std::size_t> layer_shape(const BlockDims& d, std::string_view name) {
  if (name == "wo") return {d.model_dim, d.attn_dim()};
  if (name == "w_down") return {d.model_dim, d.ffn_dim};
  if (name == "w_up" || name == "w_gate") return {d.ffn_dim, d.model_dim};
  return {d.attn_dim(), d.model_dim};
}

BlockWeights load_weights(const Package& p, const std::string& prefix, const BlockDims& d) {
  BlockWeights w;
  w.dims = d;
  for (const char* name : kLayerNames) {
    const auto [rows, cols] = layer_shape(d, name);
    w.layer(name) = require_matrix(p, prefix + name, rows, cols);
  }
  w.validate();
  return w;
}

void add_weights(Package& p, const std::string& prefix, const BlockWeights& w) {
  for (const char* name : kLayerNames) p.add(make_fp32(prefix + name, w.layer(name)));
}

RealMatrix load_input(const Package& p, std::size_t model_dim) {
  RealMatrix x = to_matrix(require(p, "input"));
  if (x.cols() != model_dim) throw DataError("input width does not match model_dim");
  return x;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorCode::io_failure, "cannot open " + path.string());
  out << text;
  if (!out) throw IoError(IoErrorCode::io_failure, "write failed: " + path.string());
}

}  // namespace

json synth_config_to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"dims", dims_json(c.dims)},
          {"tokens", c.tokens},
          {"calib_tokens", c.calib_tokens},
          {"input_std", c.input_std},
          {"weight_gain", c.weight_gain},
          {"qk_gain", c.qk_gain},
          {"weight_outlier_channels", c.weight_outlier_channels},
          {"weight_outlier_scale", c.weight_outlier_scale},
          {"weight_outlier_at", c.weight_outlier_at},
          {"key_outlier_pairs", c.key_outlier_pairs},
          {"key_outlier_scale", c.key_outlier_scale},
          {"tiny_row_fraction", c.tiny_row_fraction},
          {"tiny_row_scale", c.tiny_row_scale}};
}

SynthConfig synth_config_from_json(const json& j) {
  try {
    SynthConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dims = dims_from(j.at("dims"));
    c.tokens = j.at("tokens").get<std::size_t>();
    c.calib_tokens = j.at("calib_tokens").get<std::size_t>();
    c.input_std = j.at("input_std").get<double>();
    c.weight_gain = j.at("weight_gain").get<double>();
    c.qk_gain = j.at("qk_gain").get<double>();
    c.weight_outlier_channels = j.at("weight_outlier_channels").get<std::size_t>();
    c.weight_outlier_scale = j.at("weight_outlier_scale").get<double>();
    c.weight_outlier_at = j.at("weight_outlier_at").get<std::vector<std::size_t>>();
    c.key_outlier_pairs = j.at("key_outlier_pairs").get<std::size_t>();
    c.key_outlier_scale = j.at("key_outlier_scale").get<double>();
    c.tiny_row_fraction = j.at("tiny_row_fraction").get<double>();
    c.tiny_row_scale = j.at("tiny_row_scale").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("synth config: ") + e.what());
  }
}

Package make_block_package(const SynthData& data, const SynthConfig& cfg) {
  Package p;
  add_weights(p, "weights.", data.weights);
  p.add(make_fp32("calib", data.calibration));
  p.add(make_fp32("input", data.input));
  p.metadata = {{"kind", "block"},
                {"dims", dims_json(data.weights.dims)},
                {"synth", synth_config_to_json(cfg)},
                {"weight_outlier_channels", data.weight_outlier_channels},
                {"key_outlier_pairs", data.key_outlier_pairs}};
  return p;
}

SynthData load_block_package(const Package& p) {
  if (!p.metadata.contains("dims")) throw DataError("package metadata has no dims");
  const BlockDims d = dims_from(p.metadata.at("dims"));
  SynthData s;
  s.weights = load_weights(p, "weights.", d);
  s.calibration = to_matrix(require(p, "calib"));
  if (s.calibration.cols() != d.model_dim) throw DataError("calib width does not match model_dim");
  s.input = load_input(p, d.model_dim);
  return s;
}

bool is_quantized_package(const Package& p) {
  return p.metadata.value("kind", std::string{}) == "quantized";
}

Package make_quantized_package(const QuantizedBlock& qb, const Package& source) {
  Package p;
  add_weights(p, "orig.", qb.original);
  add_weights(p, "merged.", qb.merged);
  for (const QuantizedWeight& q : qb.weights) {
    const std::string base = "q." + q.layer;
    p.add(make_int4(base + ".codes", {q.rows, q.cols}, q.codes));
    const std::vector<std::size_t> shape{q.rows, q.groups_per_row()};
    if (q.scale_format == ScaleFormat::fp8) {
      std::vector<Fp8E4M3> s;
      s.reserve(q.scale_bits.size());
      for (std::uint16_t b : q.scale_bits) s.push_back(Fp8E4M3::from_bits(static_cast<std::uint8_t>(b)));
      p.add(make_fp8(base + ".scales", shape, s));
    } else {
      std::vector<Bf16> s;
      s.reserve(q.scale_bits.size());
      for (std::uint16_t b : q.scale_bits) s.push_back(Bf16::from_bits(b));
      p.add(make_bf16(base + ".scales", shape, s));
    }
  }
  for (const char* carried : {"calib", "input"}) {
    if (source.contains(carried)) p.add(source.at(carried));
  }
  p.recipes = {qb.recipe};
  p.metadata = {{"kind", "quantized"}, {"dims", dims_json(qb.recipe.dims)}};
  return p;
}

QuantizedBlock load_quantized_package(const Package& p) {
  if (!is_quantized_package(p)) throw DataError("not a quantized package");
  if (p.recipes.size() != 1) throw DataError("quantized package must hold exactly one recipe");
  QuantizedBlock qb;
  qb.recipe = p.recipes.front();
  qb.original = load_weights(p, "orig.", qb.recipe.dims);
  // Stored merged weights are FP32 copies for inspection; the exact ones are
  // replayed from the recipe.
  qb.merged = merge_recipe(qb.original, qb.recipe);
  for (const SmoothingRecipe& l : qb.recipe.layers) {
    const std::string base = "q." + l.layer;
    const Tensor& codes = require(p, base + ".codes");
    const Tensor& scales = require(p, base + ".scales");
    const RealMatrix& m = qb.merged.layer(l.layer);
    QuantizedWeight q;
    q.layer = l.layer;
    q.rows = m.rows();
    q.cols = m.cols();
    q.group_size = qb.recipe.group_size;
    q.scale_format = qb.recipe.scale_format;
    q.pts_exponent = l.pts.exponent;
    if (codes.dtype != DType::int4packed || codes.shape != std::vector<std::size_t>{q.rows, q.cols}) {
      throw DataError("tensor '" + codes.name + "' has the wrong dtype or shape");
    }
    q.codes = decode_int4(codes);
    const DType want = q.scale_format == ScaleFormat::fp8 ? DType::fp8e4m3 : DType::bf16;
    if (scales.dtype != want ||
        scales.shape != std::vector<std::size_t>{q.rows, q.groups_per_row()}) {
      throw DataError("tensor '" + scales.name + "' has the wrong dtype or shape");
    }
    if (want == DType::fp8e4m3) {
      q.scale_bits.assign(scales.payload.begin(), scales.payload.end());
    } else {
      q.scale_bits = decode_u16(scales);
    }
    qb.weights.push_back(std::move(q));
  }
  return qb;
}

void cmd_gen(const SynthConfig& cfg, const std::filesystem::path& out) {
  write_package(make_block_package(generate_block(cfg), cfg), out);
}

void cmd_calibrate(const std::filesystem::path& package, const CalibrationConfig& cfg,
                   const std::filesystem::path& recipe_out) {
  const SynthData data = load_block_package(read_package(package));
  write_recipe_file(calibrate_recipe(data.weights, data.calibration, cfg), recipe_out);
}

void cmd_quantize(const std::filesystem::path& package, const std::filesystem::path& recipe,
                  const std::filesystem::path& out) {
  const Package src = read_package(package);
  const SynthData data = load_block_package(src);
  const BlockRecipe r = read_recipe_file(recipe);
  if (!(r.dims == data.weights.dims)) throw DataError("recipe dims do not match the package");
  write_package(make_quantized_package(apply_recipe(data.weights, r), src), out);
}

json cmd_run(const std::filesystem::path& qpackage, const RunOptions& opts,
             const std::filesystem::path& outputs) {
  const Package qp = read_package(qpackage);
  const QuantizedBlock qb = load_quantized_package(qp);
  const RealMatrix x = opts.input ? load_input(read_package(*opts.input), qb.recipe.dims.model_dim)
                                  : load_input(qp, qb.recipe.dims.model_dim);

  RealMatrix out;
  ErrorMetrics err;
  if (opts.passthrough) {
    out = forward_merged(qb, x, &opts.forward);
    err = compare_outputs(out, forward_fp32(qb.original, x, qb.recipe.rope.base));
  } else {
    QuantizedForward f = forward_quantized(qb, x, opts.forward);
    out = std::move(f.output);
    err = f.error;
  }

  const json metrics = {{"schema_version", kMetricsSchemaVersion},
                        {"policy", policy_name(opts.forward.policy)},
                        {"passthrough", opts.passthrough},
                        {"block_rows", opts.forward.schedule.block_rows},
                        {"block_cols", opts.forward.schedule.block_cols},
                        {"tokens", x.rows()},
                        {"relative_frobenius", err.relative_frobenius},
                        {"max_abs", err.max_abs}};
  Package op;
  op.add(make_fp32("output", out));
  op.metadata = {{"kind", "outputs"}, {"metrics", metrics}};
  write_package(op, outputs);
  return metrics;
}

json cmd_report(const std::filesystem::path& package, const CalibrationConfig& cfg,
                std::size_t batch, const std::optional<std::filesystem::path>& csv) {
  const Package p = read_package(package);
  QuantizedBlock qb;
  if (is_quantized_package(p)) {
    qb = load_quantized_package(p);
  } else {
    const SynthData data = load_block_package(p);
    const BlockRecipe r = calibrate_recipe(data.weights, data.calibration, cfg);
    qb.recipe = r;
    qb.original = data.weights;
    qb.merged = merge_recipe(data.weights, r);
  }
  const BlockReport rep = make_report(qb.original, qb.merged, qb.recipe, batch);
  if (csv) write_text(*csv, report_to_csv(rep));
  return report_to_json(rep);
}

}  // namespace qlab
