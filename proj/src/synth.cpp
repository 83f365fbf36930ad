// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "qlab/error.hpp"

namespace qlab {
namespace {

RealMatrix gaussian(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  RealMatrix m(rows, cols);
  for (double& v : m.flat()) v = static_cast<float>(dist(rng));
  return m;
}

// `count` distinct indices from [0, n), ascending.
std::vector<std::size_t> pick(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  if (count > n) throw DataError("cannot pick " + std::to_string(count) + " of " + std::to_string(n));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> out;
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

void scale_col_set(RealMatrix& m, const std::vector<std::size_t>& cols, double s) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c : cols) m(r, c) = static_cast<float>(m(r, c) * s);
  }
}

void shrink_rows(RealMatrix& m, double fraction, double s, std::mt19937_64& rng) {
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m.rows())));
  for (std::size_t r : pick(m.rows(), count, rng)) {
    for (double& v : m.row(r)) v = static_cast<float>(v * s);
  }
}

}  // namespace

RealMatrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian(rows, cols, std, rng);
}

SynthData generate_block(const SynthConfig& cfg) {
  const BlockDims& d = cfg.dims;
  if (d.head_dim == 0 || d.head_dim % 2 != 0) throw DataError("head_dim must be even");
  std::mt19937_64 rng(cfg.seed);
  auto weight = [&](std::size_t out, std::size_t in, double gain = 1.0) {
    return gaussian(out, in, gain * cfg.weight_gain / std::sqrt(static_cast<double>(in)), rng);
  };

  SynthData s;
  BlockWeights& w = s.weights;
  w.dims = d;
  w.wq = weight(d.attn_dim(), d.model_dim, cfg.qk_gain);
  w.wk = weight(d.attn_dim(), d.model_dim, cfg.qk_gain);
  w.wv = weight(d.attn_dim(), d.model_dim);
  w.wo = weight(d.model_dim, d.attn_dim());
  w.w_up = weight(d.ffn_dim, d.model_dim);
  w.w_gate = weight(d.ffn_dim, d.model_dim);
  w.w_down = weight(d.model_dim, d.ffn_dim);
  s.calibration = gaussian(cfg.calib_tokens, d.model_dim, cfg.input_std, rng);
  s.input = gaussian(cfg.tokens, d.model_dim, cfg.input_std, rng);

  if (!cfg.weight_outlier_at.empty()) {
    for (std::size_t c : cfg.weight_outlier_at) {
      if (c >= std::min({d.model_dim, d.attn_dim(), d.ffn_dim})) {
        throw DataError("weight outlier channel " + std::to_string(c) + " out of range");
      }
    }
    s.weight_outlier_channels = cfg.weight_outlier_at;
    std::sort(s.weight_outlier_channels.begin(), s.weight_outlier_channels.end());
    for (RealMatrix* m : {&w.wo, &w.w_up, &w.w_gate, &w.w_down}) {
      scale_col_set(*m, s.weight_outlier_channels, cfg.weight_outlier_scale);
    }
  } else if (cfg.weight_outlier_channels > 0) {
    // Only layers whose input channels get absmean scaling. w_up and w_gate
    // read the same hidden state, so they share the channel set.
    s.weight_outlier_channels = pick(d.model_dim, cfg.weight_outlier_channels, rng);
    for (RealMatrix* m : {&w.w_up, &w.w_gate}) {
      scale_col_set(*m, s.weight_outlier_channels, cfg.weight_outlier_scale);
    }
    scale_col_set(w.wo, pick(d.attn_dim(), cfg.weight_outlier_channels, rng), cfg.weight_outlier_scale);
    scale_col_set(w.w_down, pick(d.ffn_dim, cfg.weight_outlier_channels, rng), cfg.weight_outlier_scale);
  }

  const std::size_t half = d.head_dim / 2;
  s.key_outlier_pairs.resize(d.n_heads);
  if (cfg.key_outlier_pairs > 0) {
    // Pairs from the slowest-rotating quarter, so the offset barely turns
    // across positions and shifts every score of a row by about the same amount.
    const std::size_t slow = std::max<std::size_t>(half / 4, cfg.key_outlier_pairs);
    if (cfg.key_outlier_pairs > half) throw DataError("too many key outlier pairs");
    const std::size_t c = pick(d.model_dim, 1, rng).front();
    s.offset_channel = c;
    const double level = cfg.input_std * std::sqrt(static_cast<double>(d.model_dim));
    for (RealMatrix* m : {&s.calibration, &s.input}) {
      for (std::size_t r = 0; r < m->rows(); ++r) (*m)(r, c) = static_cast<float>(level);
    }
    for (RealMatrix* m : {&w.wq, &w.wk, &w.wv, &w.w_up, &w.w_gate}) {
      for (std::size_t r = 0; r < m->rows(); ++r) (*m)(r, c) = 0.0;
    }
    const double weight =
        cfg.key_outlier_scale * cfg.qk_gain * cfg.weight_gain / std::sqrt(static_cast<double>(d.model_dim));
    for (std::size_t h = 0; h < d.n_heads; ++h) {
      for (std::size_t p : pick(slow, cfg.key_outlier_pairs, rng)) {
        s.key_outlier_pairs[h].push_back(half - slow + p);
      }
      for (std::size_t p : s.key_outlier_pairs[h]) {
        for (std::size_t ch : {p, p + half}) w.wk(h * d.head_dim + ch, c) = static_cast<float>(weight);
      }
    }
  }

  if (cfg.tiny_row_fraction > 0.0) {
    for (RealMatrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w_up, &w.w_gate, &w.w_down}) {
      shrink_rows(*m, cfg.tiny_row_fraction, cfg.tiny_row_scale, rng);
    }
  }
  return s;
}

}  // namespace qlab
