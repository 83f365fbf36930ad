// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/checks.hpp"

#include <stdlib.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "qlab/attention_sim.hpp"
#include "qlab/commands.hpp"
#include "qlab/model_block.hpp"
#include "qlab/numerics.hpp"
#include "qlab/oracles.hpp"
#include "qlab/quantizer.hpp"
#include "qlab/report.hpp"
#include "qlab/rope_calib.hpp"
#include "qlab/smoothing.hpp"
#include "qlab/synth.hpp"
#include "qlab/tensorio.hpp"

namespace qlab::checks {
namespace {

namespace fs = std::filesystem;

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RealMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double std = 1.0) {
  std::normal_distribution<double> dist(0.0, std);
  RealMatrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log2(lo), std::log2(hi));
  return std::exp2(u(rng));
}

// 1 --------------------------------------------------------------------------

Verdict fp8_round_trip() {
  int codes = 0;
  for (int c = 0; c < 256; ++c) {
    const auto code = static_cast<std::uint8_t>(c);
    const double want = oracle::e4m3_value(code);
    const Fp8E4M3 f = Fp8E4M3::from_bits(code);
    if (f.is_nan()) {
      if (!std::isnan(fp8_decode(f))) return {false, fmt("code 0x%02x should decode to NaN", c)};
      continue;
    }
    if (fp8_decode(f) != want || std::signbit(fp8_decode(f)) != std::signbit(want)) {
      return {false, fmt("code 0x%02x decodes to %g, expected %g", c, fp8_decode(f), want)};
    }
    if (fp8_encode(fp8_decode(f)).bits() != code) {
      return {false, fmt("encode(decode(0x%02x)) = 0x%02x", c, fp8_encode(fp8_decode(f)).bits())};
    }
    ++codes;
  }
  // Linear sweep across the finite range and a bit past it, plus a
  // log-spaced sweep through the subnormals.
  constexpr int kSweep = 100000;
  double prev = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kSweep; ++i) {
    const double x = i < kSweep / 2
                         ? -480.0 + 960.0 * i / (kSweep / 2 - 1)
                         : std::ldexp(1.0, -12) * std::exp2(21.0 * (i - kSweep / 2) / (kSweep / 2 - 1));
    if (i == kSweep / 2) prev = 0.0;
    const Fp8E4M3 f = fp8_encode(x);
    if (f.bits() != oracle::e4m3_nearest(oracle::exact(x))) {
      return {false, fmt("encode(%.17g) = 0x%02x, oracle 0x%02x", x, f.bits(),
                         oracle::e4m3_nearest(oracle::exact(x)))};
    }
    if (fp8_decode(f) < prev) return {false, fmt("decode(encode(x)) decreases at x = %.17g", x)};
    prev = fp8_decode(f);
  }
  return {true, fmt("%d non-NaN codes round-trip; %d-point sweep monotone and nearest-even", codes,
                    kSweep)};
}

// 2 --------------------------------------------------------------------------

Verdict zero_scale_groups() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> len(1, 256);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double limit = kFp8UnderflowThreshold;
  for (int t = 0; t < 1000; ++t) {
    const double m = t == 0 ? std::nextafter(limit, 0.0) : log_uniform(rng, 1e-9, limit);
    std::vector<double> g(len(rng));
    for (double& v : g) v = m * unit(rng);
    g[0] = t % 2 ? m : -m;
    for (double v : g) {
      if (!(std::fabs(v) < limit)) return {false, "generator produced a value above the bound"};
    }
    const QuantGroup q = int4_symmetric_quantize(g);
    if (!q.scale.is_zero()) return {false, fmt("max %.6g gave nonzero scale", m)};
    for (double v : dequantize(q)) {
      if (v != 0.0) return {false, fmt("max %.6g dequantized to a nonzero value", m)};
    }
  }
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> g(len(rng));
    const double base = log_uniform(rng, 1e-9, 1.0);
    for (double& v : g) v = base * unit(rng);
    const double big = t == 0 ? limit : log_uniform(rng, limit, 1000.0);
    g[static_cast<std::size_t>(t) % g.size()] = t % 2 ? big : -big;
    const QuantGroup q = int4_symmetric_quantize(g);
    double mx = 0.0;
    for (double v : g) mx = std::max(mx, std::fabs(v));
    const std::uint8_t want = oracle::e4m3_toward_zero(oracle::exact(mx) / 7);
    if (q.scale.is_zero() || want == 0 || q.scale.bits != want) {
      return {false, fmt("max %.9g: scale bits 0x%02x, oracle 0x%02x", mx, q.scale.bits, want)};
    }
  }
  return {true, "1000 sub-threshold groups quantize to zero; 1000 groups at or above get the oracle scale"};
}

// 3 --------------------------------------------------------------------------

Verdict lut_equivalence() {
  int checked = 0;
  for (int s = 0; s < 256; ++s) {
    const Fp8E4M3 sigma = Fp8E4M3::from_bits(static_cast<std::uint8_t>(s));
    const auto lut = build_dequant_lut(sigma);
    for (int v = kInt4Min; v <= kInt4Max; ++v) {
      const std::uint8_t got = lut[static_cast<std::size_t>(v + 8)].bits();
      if (sigma.is_nan()) {
        if (!lut[static_cast<std::size_t>(v + 8)].is_nan()) return {false, fmt("NaN scale 0x%02x", s)};
        continue;
      }
      const double sv = oracle::e4m3_value(sigma.bits());
      // IEEE product sign for the zero cases.
      const bool neg_zero = (v < 0) != std::signbit(sv);
      const std::uint8_t want = oracle::e4m3_nearest(mpq_class(v) * oracle::exact(sv), neg_zero);
      if (got != want) return {false, fmt("scale 0x%02x code %d: lut 0x%02x, oracle 0x%02x", s, v, got, want)};
      ++checked;
    }
  }
  return {true, fmt("%d finite (scale, code) entries match the exact-rounding oracle", checked)};
}

// 4 --------------------------------------------------------------------------

Verdict pts_minimality() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> dim(1, 24);
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int overflow = 0, stable = 0, degenerate = 0;
  for (int t = 0; t < 200; ++t) {
    RealMatrix w(dim(rng), dim(rng));
    const int k = kind(rng);
    // Magnitudes spanning `range` octaves below `top`. Ranges under about 14
    // octaves reach underflow stability before the largest element enters
    // its overflow band; wider ones stop on overflow.
    const double top = k == 2   ? log_uniform(rng, 200.0, 448.0)
                       : k == 1 ? log_uniform(rng, 1e-22, 1e-10)
                                : log_uniform(rng, 1e-15, 448.0);
    const double range = k == 1 ? 60.0 * u(rng) : 16.0 * u(rng);
    for (double& v : w.flat()) {
      v = top * std::exp2(-range * u(rng)) * (u(rng) < 0.5 ? -1.0 : 1.0);
      if (k == 4 && u(rng) < 0.3) v = 0.0;
    }
    if (k == 3) w.flat()[0] = 447.9;
    if (k == 5) w.flat()[0] = std::ldexp(7.0, -static_cast<int>(u(rng) * 40.0));
    const auto want = oracle::pts_bruteforce(w);
    std::optional<PtsResult> got;
    try {
      got = compute_pts_exponent(w);
    } catch (const DataError&) {
    }
    if (want.has_value() != got.has_value()) return {false, fmt("trial %d: qualifying n disagrees", t)};
    if (!want) {
      ++degenerate;
      continue;
    }
    const bool got_overflow = got->stop_reason == PtsStop::overflow_risk;
    if (got->exponent != want->exponent || got_overflow != want->overflow) {
      return {false, fmt("trial %d: n = %d (%s), brute force n = %d (%s)", t, got->exponent,
                         got_overflow ? "overflow" : "stable", want->exponent,
                         want->overflow ? "overflow" : "stable")};
    }
    (want->overflow ? overflow : stable)++;
  }
  RealMatrix uniform(4, 8, std::ldexp(1.0, -12));
  const PtsResult r = compute_pts_exponent(uniform);
  if (r.exponent != 6 || r.stop_reason != PtsStop::underflow_stable) {
    return {false, fmt("uniform 2^-12 gave n = %d", r.exponent)};
  }
  return {true, fmt("200 matrices agree with the brute-force scan (%d overflow, %d stable, %d degenerate); "
                    "uniform 2^-12 -> n = 6", overflow, stable, degenerate)};
}

// 5 --------------------------------------------------------------------------

Verdict rpn_pair_bound() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 512);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = t % 2 ? 128 : 64;
    RealMatrix k = random_matrix(len(rng), d, rng, log_uniform(rng, 1e-3, 1e3));
    for (std::size_t c = 0; c < d / 2; ++c) {
      if (u(rng) < 0.1) {
        for (std::size_t r = 0; r < k.rows(); ++r) k(r, c) *= 50.0;
      }
      if (u(rng) < 0.05) {
        for (std::size_t r = 0; r < k.rows(); ++r) k(r, c) = k(r, c + d / 2) = 0.0;
      }
    }
    const RpnScales rpn = compute_rpn(k, 8.0);
    const RealMatrix scaled = divide_columns(k, rpn.s);
    const RealMatrix rotated = oracle::rope(scaled, 10000.0);
    for (const RealMatrix* m : {&scaled, &rotated}) {
      for (std::size_t r = 0; r < m->rows(); ++r) {
        for (std::size_t i = 0; i < d / 2; ++i) {
          worst = std::max(worst, std::hypot((*m)(r, i), (*m)(r, i + d / 2)));
        }
      }
    }
  }
  const double bound = 1.0 / 8.0 + 1e-9;
  return {worst <= bound, fmt("max scaled pair norm %.15f (bound 1/8 + 1e-9)", worst)};
}

// 6 --------------------------------------------------------------------------

Verdict score_invariance() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> len(16, 192);
  std::uniform_int_distribution<std::size_t> pick(0, 31);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = t % 2 ? 128 : 64;
    const std::size_t n = len(rng);
    const RealMatrix q = random_matrix(n, d, rng);
    RealMatrix k = random_matrix(n, d, rng);
    for (int o = 0; o < 4; ++o) {
      const std::size_t c = pick(rng) % (d / 2);
      for (std::size_t r = 0; r < n; ++r) k(r, c) += 30.0;
    }
    const RopeConfig cfg{d, 10000.0};
    const RpnScales rpn = compute_rpn(k);
    const RealMatrix k_rot = apply_rope(k, cfg);
    const CrsScales crs = compute_crs(apply_rope(divide_columns(k, rpn.s), cfg),
                                      select_outlier_pairs(k_rot, 8));
    const RealMatrix ks = smooth_keys(k, rpn, crs, cfg);
    const RealMatrix qs = compensate_queries(apply_rope(q, cfg), rpn, crs);
    const RealMatrix want = oracle::matmul_nt(oracle::rope(q, 10000.0), oracle::rope(k, 10000.0));
    worst = std::max(worst, oracle::relative_frobenius(oracle::matmul_nt(qs, ks), want));
  }
  return {worst <= 1e-6, fmt("worst relative Frobenius %.3e over 50 instances (bound 1e-6)", worst)};
}

// 7 --------------------------------------------------------------------------

Verdict cas_equalization() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dim(8, 96);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_eq = 0.0, worst_merge = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = dim(rng), cols = dim(rng);
    RealMatrix w = random_matrix(rows, cols, rng, log_uniform(rng, 1e-3, 10.0));
    for (std::size_t c = 0; c < cols; ++c) {
      const double s = u(rng) < 0.1 ? 100.0 : u(rng) < 0.1 ? 0.01 : 1.0;
      for (std::size_t r = 0; r < rows; ++r) w(r, c) *= s;
    }
    // Target: mean of the column absmeans, computed here directly.
    std::vector<double> absmean(cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) absmean[c] += std::fabs(w(r, c));
      absmean[c] /= static_cast<double>(rows);
    }
    double target = 0.0;
    for (double a : absmean) target += a;
    target /= static_cast<double>(cols);

    const CasScales cas = compute_cas(w);
    const RealMatrix ws = apply_cas(w, cas);
    for (std::size_t c = 0; c < cols; ++c) {
      double a = 0.0;
      for (std::size_t r = 0; r < rows; ++r) a += std::fabs(ws(r, c));
      a /= static_cast<double>(rows);
      worst_eq = std::max(worst_eq, std::fabs(a - target) / target);
    }
    const RealMatrix x = random_matrix(dim(rng), cols, rng);
    const RealMatrix lhs = oracle::matmul_nt(apply_inverse_cas_to_activations(x, cas), ws);
    worst_merge = std::max(worst_merge, oracle::relative_frobenius(lhs, oracle::matmul_nt(x, w)));
  }
  return {worst_eq <= 1e-6 && worst_merge <= 1e-6,
          fmt("absmean deviation %.3e, merge deviation %.3e (bounds 1e-6)", worst_eq, worst_merge)};
}

// 8 --------------------------------------------------------------------------

Verdict tiled_exact() {
  std::mt19937_64 rng(8);
  double worst_ref = 0.0, worst_pair = 0.0;
  int runs = 0;
  for (std::size_t n : {64, 128, 256, 1024}) {
    for (std::size_t d : {64, 128}) {
      const RealMatrix q = random_matrix(n, d, rng), k = random_matrix(n, d, rng),
                       v = random_matrix(n, d, rng);
      for (bool causal : {true, false}) {
        if (!causal && n > 256) continue;
        const RealMatrix ref = reference_attention(q, k, v, causal);
        std::vector<RealMatrix> outs;
        for (std::size_t bc : {std::size_t{16}, std::size_t{64}, n}) {
          TileSchedule s;
          s.block_cols = bc;
          s.causal = causal;
          outs.push_back(tiled_attention_forward(q, k, v, s, PrecisionPolicy::exact()));
          worst_ref = std::max(worst_ref, max_abs_diff(outs.back(), ref));
          ++runs;
        }
        for (std::size_t a = 0; a < outs.size(); ++a) {
          for (std::size_t b = a + 1; b < outs.size(); ++b) {
            worst_pair = std::max(worst_pair, max_abs_diff(outs[a], outs[b]));
          }
        }
      }
    }
  }
  return {worst_ref <= 1e-5 && worst_pair <= 1e-5,
          fmt("%d runs: max |tiled - reference| %.3e, max tile-size spread %.3e (bounds 1e-5)", runs,
              worst_ref, worst_pair)};
}

// 9 --------------------------------------------------------------------------

Verdict precision_envelope() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealMatrix q = gaussian_matrix(256, 64, 1.0, 3 * seed);
    const RealMatrix k = gaussian_matrix(256, 64, 1.0, 3 * seed + 1);
    const RealMatrix v = gaussian_matrix(256, 64, 1.0, 3 * seed + 2);
    const RealMatrix out = tiled_attention_forward(q, k, v, TileSchedule{}, PrecisionPolicy::mixed());
    worst = std::max(worst, oracle::relative_frobenius(out, oracle::attention(q, k, v, true, 0.125)));
  }
  return {worst <= kAttentionEnvelope,
          fmt("worst relative error %.5f over 10 draws (pinned bound %.3f)", worst, kAttentionEnvelope)};
}

// 10 -------------------------------------------------------------------------

Verdict smoothing_benefit() {
  struct Config {
    const char* name;
    SmoothingToggles toggles;
  };
  const Config configs[] = {{"none", SmoothingToggles::none()},
                            {"rpn+crs", {false, false, true, true}},
                            {"+cas", {true, false, true, true}},
                            {"+pts", {true, true, true, true}}};
  std::vector<std::vector<double>> errs(4);
  for (std::uint64_t seed = 0; seed < kSmoothingTrials; ++seed) {
    const SynthData data = generate_block(smoothing_suite_config(seed));
    for (std::size_t c = 0; c < 4; ++c) {
      CalibrationConfig cfg;
      cfg.toggles = configs[c].toggles;
      const QuantizedBlock qb = calibrate_block(data.weights, data.calibration, cfg);
      errs[c].push_back(forward_quantized(qb, data.input).error.relative_frobenius);
    }
  }
  std::vector<double> med;
  for (auto& e : errs) {
    std::sort(e.begin(), e.end());
    med.push_back(0.5 * (e[e.size() / 2 - 1] + e[e.size() / 2]));
  }
  const bool ok = med[0] >= med[1] && med[1] >= med[2] && med[2] >= med[3];
  std::ostringstream s;
  s << kSmoothingTrials << " trials, median error";
  for (std::size_t c = 0; c < 4; ++c) s << (c ? " >= " : " ") << configs[c].name << ' ' << fmt("%.5f", med[c]);
  return {ok, s.str()};
}

// 11 -------------------------------------------------------------------------

Verdict underflow_report() {
  // 8 rows x 4 groups of 128; every row has exactly one tiny group.
  std::mt19937_64 rng(11);
  RealMatrix w = random_matrix(8, 512, rng);
  for (std::size_t r = 0; r < 8; ++r) {
    const std::size_t g = r % 4;
    for (std::size_t c = g * 128; c < (g + 1) * 128; ++c) w(r, c) = std::ldexp(w(r, c), -12);
    for (std::size_t c = g * 128; c < (g + 1) * 128; ++c) {
      if (std::fabs(w(r, c)) >= kFp8UnderflowThreshold) w(r, c) = 0.001;
    }
  }
  const double frac = underflow_group_fraction(w, 128);
  if (frac != 0.25 || oracle::tiny_group_fraction(w, 128) != 0.25) {
    return {false, fmt("constructed tensor reports %.17g", frac)};
  }
  int layers = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    sc.dims = {128, 32, 2, 256};
    sc.weight_gain = 0.05;
    sc.tiny_row_fraction = 0.25;
    sc.tiny_row_scale = 1e-3;
    const SynthData data = generate_block(sc);
    CalibrationConfig cfg;
    cfg.group_size = 32;
    const BlockRecipe recipe = calibrate_recipe(data.weights, data.calibration, cfg);
    const BlockWeights merged = merge_recipe(data.weights, recipe);
    const BlockReport rep = make_report(data.weights, merged, recipe, 16);
    for (const LayerReport& l : rep.layers) {
      const RealMatrix& m = merged.layer(l.layer);
      const double before = oracle::tiny_group_fraction(m, 32);
      const double after = oracle::tiny_group_fraction(apply_pts(m, l.pts_exponent), 32);
      if (l.underflow_smoothed != before || l.underflow_after_pts != after) {
        return {false, fmt("seed %d %s: report fractions disagree with a direct count", int(seed), l.layer.c_str())};
      }
      if (l.underflow_after_pts > l.underflow_smoothed) {
        return {false, fmt("seed %d %s: %.4f after PTS > %.4f before", int(seed), l.layer.c_str(),
                           l.underflow_after_pts, l.underflow_smoothed)};
      }
      ++layers;
    }
  }
  return {true, fmt("constructed tensor reports 0.25; PTS never raised the fraction on %d layer trials", layers)};
}

// 12 -------------------------------------------------------------------------

Verdict dequant_cost_formula() {
  const std::uint64_t got = dequant_cost(16, 4096, 4096);
  if (got != 16842752ULL) return {false, fmt("dequant_cost(16, 4096, 4096) = %llu", (unsigned long long)got)};
  SynthConfig sc;
  sc.dims = {128, 32, 2, 256};
  const SynthData data = generate_block(sc);
  CalibrationConfig cfg;
  cfg.group_size = 32;
  const BlockRecipe recipe = calibrate_recipe(data.weights, data.calibration, cfg);
  const BlockReport rep = make_report(data.weights, merge_recipe(data.weights, recipe), recipe, 16);
  for (const LayerReport& l : rep.layers) {
    if (l.dequant_ops != (16 + l.cols) * l.rows) return {false, "report layer cost differs from (b + d_in) * d_out"};
  }
  return {true, "(16 + 4096) * 4096 = 16842752; every report layer uses (b + d_in) * d_out"};
}

// 13 -------------------------------------------------------------------------

Verdict tensorio_round_trip() {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> byte(0, 255), nib(-8, 7);
  Package p;
  std::vector<Fp8E4M3> all;
  for (int c = 0; c < 256; ++c) all.push_back(Fp8E4M3::from_bits(static_cast<std::uint8_t>(c)));
  p.add(make_fp8("fp8.all", {16, 16}, all));
  const RealMatrix f = random_matrix(5, 7, rng);
  p.add(make_fp32("fp32", f));
  std::vector<Bf16> b(33);
  for (auto& x : b) x = Bf16::from_bits(static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
  p.add(make_bf16("bf16", {3, 11}, b));
  std::vector<Fp16> h(9);
  for (auto& x : h) x = Fp16::from_bits(static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
  p.add(make_fp16("fp16", {9}, h));
  for (std::size_t n : {1, 7, 64, 129}) {
    std::vector<std::int8_t> codes(n);
    for (auto& c : codes) c = static_cast<std::int8_t>(nib(rng));
    Tensor t = make_int4("int4." + std::to_string(n), {n}, codes);
    if (t.payload != oracle::pack_nibbles(codes)) return {false, "int4 packing differs from the oracle layout"};
    if (decode_int4(t) != codes) return {false, "int4 decode differs"};
    p.add(std::move(t));
  }
  const auto bytes = serialize_package(p);
  const Package back = deserialize_package(bytes);
  if (!(back == p)) return {false, "deserialized package differs"};
  if (serialize_package(back) != bytes) return {false, "re-serialized bytes differ"};
  return {true, fmt("%zu tensors over all dtypes round-trip byte-identically (%zu bytes)", p.tensors.size(),
                    bytes.size())};
}

// 14 -------------------------------------------------------------------------

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "qlab-check-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw IoError(IoErrorCode::io_failure, "mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Verdict run_determinism() {
  TempDir dir;
  SynthConfig sc;
  sc.dims = {128, 64, 2, 256};
  sc.tokens = 64;
  sc.calib_tokens = 64;
  sc.key_outlier_pairs = 2;
  sc.key_outlier_scale = 10.0;
  sc.weight_outlier_channels = 2;
  sc.weight_outlier_scale = 10.0;
  const fs::path pkg = dir.path / "block.qlab", pkg2 = dir.path / "block2.qlab";
  cmd_gen(sc, pkg);
  cmd_gen(sc, pkg2);
  if (read_file_bytes(pkg) != read_file_bytes(pkg2)) return {false, "gen is not deterministic"};
  CalibrationConfig cfg;
  cfg.group_size = 64;
  cmd_calibrate(pkg, cfg, dir.path / "recipe.json");
  cmd_quantize(pkg, dir.path / "recipe.json", dir.path / "q.qlab");
  RunOptions opts;
  const auto m1 = cmd_run(dir.path / "q.qlab", opts, dir.path / "out1.qlab");
  const auto m2 = cmd_run(dir.path / "q.qlab", opts, dir.path / "out2.qlab");
  if (read_file_bytes(dir.path / "out1.qlab") != read_file_bytes(dir.path / "out2.qlab")) {
    return {false, "outputs differ between runs"};
  }
  if (m1.dump() != m2.dump()) return {false, "metrics differ between runs"};
  return {true, fmt("two runs give identical outputs and metrics (error %.5f)", m1["relative_frobenius"].get<double>())};
}

}  // namespace

SynthConfig smoothing_suite_config(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.dims = {256, 64, 4, 512};
  c.tokens = 128;
  c.calib_tokens = 128;
  c.input_std = 0.1;
  c.weight_gain = 0.12;
  c.qk_gain = 80.0;
  c.key_outlier_pairs = 4;
  c.key_outlier_scale = 20.0;
  c.weight_outlier_channels = 4;
  c.weight_outlier_scale = 10.0;
  return c;
}

const std::vector<Criterion>& acceptance_criteria() {
  static const std::vector<Criterion> all = {
      {1, "fp8-exhaustive-round-trip", fp8_round_trip},
      {2, "zero-scale-below-threshold", zero_scale_groups},
      {3, "lut-equivalence", lut_equivalence},
      {4, "pts-minimality", pts_minimality},
      {5, "rpn-pair-norm-bound", rpn_pair_bound},
      {6, "score-invariance", score_invariance},
      {7, "cas-equalization", cas_equalization},
      {8, "tiled-attention-exact", tiled_exact},
      {9, "mixed-precision-envelope", precision_envelope},
      {10, "smoothing-benefit", smoothing_benefit},
      {11, "underflow-fraction-report", underflow_report},
      {12, "dequant-cost-formula", dequant_cost_formula},
      {13, "tensorio-round-trip", tensorio_round_trip},
      {14, "run-determinism", run_determinism},
  };
  return all;
}

Outcome run_criterion(const Criterion& c) {
  Outcome o{c.id, c.name, {}, 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o.verdict = c.run();
  } catch (const std::exception& e) {
    o.verdict = {false, std::string("exception: ") + e.what()};
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

std::string format_outcome(const Outcome& o) {
  return fmt("%s %2d %-28s (%6.2f s)  ", o.verdict.passed ? "PASS" : "FAIL", o.id, o.name.c_str(),
             o.seconds) +
         o.verdict.detail;
}

}  // namespace qlab::checks
