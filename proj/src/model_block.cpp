// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/model_block.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qlab/error.hpp"
#include "qlab/gemm_sim.hpp"
#include "qlab/rope_calib.hpp"
#include "qlab/smoothing.hpp"

namespace qlab {
namespace {

void expect_shape(const RealMatrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

// Applies `cas` to the columns of every listed matrix.
void apply_shared_cas(std::initializer_list<RealMatrix*> mats, const CasScales& cas) {
  for (RealMatrix* m : mats) *m = apply_cas(*m, cas);
}

CasScales calibrated_cas(std::initializer_list<const RealMatrix*> mats, CasTarget target,
                         bool enabled) {
  const RealMatrix joint = vstack(mats);
  return enabled ? compute_cas(joint, target) : identity_cas(joint.cols());
}

bool is_identity(const CasScales& cas) {
  return std::ranges::all_of(cas.lambdas, [](double l) { return l == 1.0; });
}

double silu_exact(double x) { return x / (1.0 + std::exp(-x)); }

// Attention + FFN in double. `crs` may be empty (no online CRS).
RealMatrix forward_double(const BlockWeights& w, const RealMatrix& x, const RopeConfig& rope,
                          const std::vector<HeadCalibration>* heads,
                          const ForwardOptions* tiled = nullptr) {
  const BlockDims& d = w.dims;
  const RealMatrix q = reference_gemm(x, w.wq);
  const RealMatrix k = reference_gemm(x, w.wk);
  const RealMatrix v = reference_gemm(x, w.wv);
  RealMatrix attn(x.rows(), d.attn_dim());
  for (std::size_t h = 0; h < d.n_heads; ++h) {
    const std::size_t c0 = h * d.head_dim;
    RealMatrix qh = apply_rope(slice_cols(q, c0, d.head_dim), rope);
    RealMatrix kh = apply_rope(slice_cols(k, c0, d.head_dim), rope);
    if (heads != nullptr) {
      qh = scale_columns(qh, (*heads)[h].crs.t);
      kh = divide_columns(kh, (*heads)[h].crs.t);
    }
    const RealMatrix vh = slice_cols(v, c0, d.head_dim);
    if (tiled != nullptr) {
      TileSchedule sched = tiled->schedule;
      sched.causal = true;
      assign_cols(attn, tiled_attention_forward(qh, kh, vh, sched, tiled->policy), c0);
    } else {
      assign_cols(attn, reference_attention(qh, kh, vh, true), c0);
    }
  }
  const RealMatrix hidden = reference_gemm(attn, w.wo);
  const RealMatrix up = reference_gemm(hidden, w.w_up);
  RealMatrix act = reference_gemm(hidden, w.w_gate);
  for (std::size_t i = 0; i < act.size(); ++i) {
    act.flat()[i] = silu_exact(act.flat()[i]) * up.flat()[i];
  }
  return reference_gemm(act, w.w_down);
}

// The merges shared by calibration and recipe replay. `rpn_for_head` and the
// CAS lambdas come from the caller; calibration computes each from the
// partially merged weights right before it is applied.
void merge_down(BlockWeights& m, const CasScales& down) {
  m.w_down = apply_cas(m.w_down, down);
  m.w_up = merge_inverse_cas(m.w_up, down);
}

void merge_up_gate(BlockWeights& m, const CasScales& ug) {
  apply_shared_cas({&m.w_up, &m.w_gate}, ug);
  m.wo = merge_inverse_cas(m.wo, ug);
}

void merge_o(BlockWeights& m, const CasScales& o) {
  m.wo = apply_cas(m.wo, o);
  m.wv = merge_inverse_cas(m.wv, o);
}

void merge_rpn(BlockWeights& m, const RpnScales& rpn, std::size_t head) {
  const std::size_t off = head * m.dims.head_dim;
  m.wk = merge_rpn_into_key_projection(m.wk, rpn, off);
  m.wq = merge_rpn_into_query_projection(m.wq, rpn, off);
}

SmoothingRecipe make_layer(std::string name, const CasScales& cas, const RealMatrix& merged,
                           bool pts) {
  SmoothingRecipe r{std::move(name), cas, {}};
  if (pts) {
    r.pts = compute_pts_exponent(merged);
  } else {
    r.pts = {0, PtsStop::underflow_stable, {underflow_score(merged)}};
  }
  return r;
}

}  // namespace

const RealMatrix& BlockWeights::layer(std::string_view name) const {
  if (name == "wq") return wq;
  if (name == "wk") return wk;
  if (name == "wv") return wv;
  if (name == "wo") return wo;
  if (name == "w_up") return w_up;
  if (name == "w_gate") return w_gate;
  if (name == "w_down") return w_down;
  throw DataError("unknown layer '" + std::string(name) + "'");
}

RealMatrix& BlockWeights::layer(std::string_view name) {
  return const_cast<RealMatrix&>(static_cast<const BlockWeights&>(*this).layer(name));
}

void BlockWeights::validate() const {
  if (dims.head_dim == 0 || dims.head_dim % 2 != 0) throw ShapeError("head_dim must be even");
  const std::size_t D = dims.model_dim, A = dims.attn_dim(), F = dims.ffn_dim;
  expect_shape(wq, A, D, "wq");
  expect_shape(wk, A, D, "wk");
  expect_shape(wv, A, D, "wv");
  expect_shape(wo, D, A, "wo");
  expect_shape(w_up, F, D, "w_up");
  expect_shape(w_gate, F, D, "w_gate");
  expect_shape(w_down, D, F, "w_down");
}

const QuantizedWeight& QuantizedBlock::weight(std::string_view name) const {
  for (const auto& w : weights) {
    if (w.layer == name) return w;
  }
  throw DataError("no quantized layer '" + std::string(name) + "'");
}

BlockRecipe calibrate_recipe(const BlockWeights& w, const RealMatrix& calib_x,
                             const CalibrationConfig& cfg) {
  w.validate();
  const BlockDims& d = w.dims;
  if (calib_x.cols() != d.model_dim) throw ShapeError("calibration inputs have the wrong width");
  if (calib_x.rows() == 0) throw DataError("no calibration tokens");
  for (std::size_t cols : {d.model_dim, d.attn_dim(), d.ffn_dim}) {
    if (cfg.group_size == 0 || cols % cfg.group_size != 0) {
      throw DataError("layer width " + std::to_string(cols) + " is not a multiple of group size " +
                      std::to_string(cfg.group_size));
    }
  }
  const SmoothingToggles& on = cfg.toggles;

  BlockRecipe r;
  r.dims = d;
  r.rope = {d.head_dim, cfg.rope_base};
  r.group_size = cfg.group_size;
  r.scale_format = cfg.scale_format;

  BlockWeights m = w;
  const CasScales down = calibrated_cas({&m.w_down}, cfg.cas_down, on.cas);
  merge_down(m, down);
  const CasScales ug = calibrated_cas({&m.w_up, &m.w_gate}, cfg.cas_up_gate, on.cas);
  merge_up_gate(m, ug);
  const CasScales o = calibrated_cas({&m.wo}, cfg.cas_o, on.cas);
  merge_o(m, o);

  // The key projection is untouched by the CAS merges above.
  const RealMatrix keys = reference_gemm(calib_x, m.wk);
  for (std::size_t h = 0; h < d.n_heads; ++h) {
    const RealMatrix kh = slice_cols(keys, h * d.head_dim, d.head_dim);
    HeadCalibration hc{on.rpn ? compute_rpn(kh, cfg.alpha) : identity_rpn(d.head_dim),
                       identity_crs(d.head_dim)};
    if (on.crs) {
      const std::size_t count = std::min(cfg.outlier_pairs, d.head_dim / 2);
      const auto pairs = select_outlier_pairs(apply_rope(kh, r.rope), count);
      hc.crs = compute_crs(apply_rope(divide_columns(kh, hc.rpn.s), r.rope), pairs, cfg.beta);
    }
    merge_rpn(m, hc.rpn, h);
    r.heads.push_back(std::move(hc));
  }

  const CasScales qkv = calibrated_cas({&m.wq, &m.wk, &m.wv}, cfg.cas_qkv, on.cas);
  apply_shared_cas({&m.wq, &m.wk, &m.wv}, qkv);

  const CasScales* per_layer[] = {&qkv, &qkv, &qkv, &o, &ug, &ug, &down};
  for (std::size_t i = 0; i < std::size(kLayerNames); ++i) {
    r.layers.push_back(make_layer(kLayerNames[i], *per_layer[i], m.layer(kLayerNames[i]), on.pts));
  }
  r.validate();
  return r;
}

BlockWeights merge_recipe(const BlockWeights& w, const BlockRecipe& r) {
  w.validate();
  r.validate();
  if (!(w.dims == r.dims)) throw ShapeError("recipe dims do not match the weights");
  BlockWeights m = w;
  merge_down(m, r.layer("w_down").cas);
  merge_up_gate(m, r.layer("w_up").cas);
  merge_o(m, r.layer("wo").cas);
  for (std::size_t h = 0; h < r.dims.n_heads; ++h) merge_rpn(m, r.heads[h].rpn, h);
  apply_shared_cas({&m.wq, &m.wk, &m.wv}, r.layer("wq").cas);
  return m;
}

QuantizedBlock apply_recipe(const BlockWeights& w, const BlockRecipe& recipe) {
  QuantizedBlock qb{recipe, w, merge_recipe(w, recipe), {}};
  for (const auto& l : recipe.layers) {
    const RealMatrix scaled = apply_pts(qb.merged.layer(l.layer), l.pts.exponent);
    qb.weights.push_back(
        quantize_weight(scaled, recipe.group_size, l.pts.exponent, recipe.scale_format, l.layer));
  }
  return qb;
}

QuantizedBlock calibrate_block(const BlockWeights& w, const RealMatrix& calib_x,
                               const CalibrationConfig& cfg) {
  return apply_recipe(w, calibrate_recipe(w, calib_x, cfg));
}

RealMatrix forward_fp32(const BlockWeights& w, const RealMatrix& x, double rope_base) {
  w.validate();
  if (x.cols() != w.dims.model_dim) throw ShapeError("forward: input width mismatch");
  return forward_double(w, x, {w.dims.head_dim, rope_base}, nullptr);
}

RealMatrix forward_merged(const QuantizedBlock& qb, const RealMatrix& x,
                          const ForwardOptions* tiled) {
  if (x.cols() != qb.merged.dims.model_dim) throw ShapeError("forward: input width mismatch");
  const CasScales& qkv = qb.recipe.layer("wq").cas;
  const RealMatrix xin = is_identity(qkv) ? x : apply_inverse_cas_to_activations(x, qkv);
  return forward_double(qb.merged, xin, qb.recipe.rope, &qb.recipe.heads, tiled);
}

ErrorMetrics compare_outputs(const RealMatrix& out, const RealMatrix& reference) {
  return {relative_frobenius_error(out, reference), max_abs_diff(out, reference)};
}

QuantizedForward forward_quantized(const QuantizedBlock& qb, const RealMatrix& x,
                                   const ForwardOptions& opts) {
  const BlockRecipe& r = qb.recipe;
  const BlockDims& d = r.dims;
  if (x.cols() != d.model_dim) throw ShapeError("forward: input width mismatch");

  const CasScales& qkv = r.layer("wq").cas;
  const RealMatrix xin = is_identity(qkv) ? x : apply_inverse_cas_to_activations(x, qkv);
  const auto xa = fp8_quantize_activations(xin);
  const RealMatrix q = int4fp8_gemm(xa, qb.weight("wq"));
  const RealMatrix k = int4fp8_gemm(xa, qb.weight("wk"));
  const RealMatrix v = int4fp8_gemm(xa, qb.weight("wv"));

  TileSchedule sched = opts.schedule;
  sched.causal = true;
  RealMatrix attn(x.rows(), d.attn_dim());
  for (std::size_t h = 0; h < d.n_heads; ++h) {
    const std::size_t c0 = h * d.head_dim;
    const CrsScales& crs = r.heads[h].crs;
    const RealMatrix qh = scale_columns(apply_rope(slice_cols(q, c0, d.head_dim), r.rope), crs.t);
    const RealMatrix kh = divide_columns(apply_rope(slice_cols(k, c0, d.head_dim), r.rope), crs.t);
    const RealMatrix q8 = fake_quantize_activations(qh);
    const RealMatrix k4 = fake_quantize_kv(kh);
    const RealMatrix v4 = fake_quantize_kv(slice_cols(v, c0, d.head_dim));
    assign_cols(attn, tiled_attention_forward(q8, k4, v4, sched, opts.policy), c0);
  }

  const RealMatrix hidden = int4fp8_gemm(fp8_quantize_activations(attn), qb.weight("wo"));
  const auto ha = fp8_quantize_activations(hidden);
  const RealMatrix gate = int4fp8_gemm(ha, qb.weight("w_gate"), {Activation::silu});
  const RealMatrix act = int4fp8_gemm(ha, qb.weight("w_up"), {Activation::none, &gate});
  QuantizedForward result;
  result.output = int4fp8_gemm(fp8_quantize_activations(act), qb.weight("w_down"));
  result.error = compare_outputs(result.output, forward_fp32(qb.original, x, r.rope.base));
  return result;
}

}  // namespace qlab
