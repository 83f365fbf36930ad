// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/recipe.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "qlab/error.hpp"

namespace qlab {
namespace {

using nlohmann::json;

void expect_len(std::size_t got, std::size_t want, const std::string& what) {
  if (got != want) {
    throw DataError("recipe: " + what + " has length " + std::to_string(got) + ", expected " +
                    std::to_string(want));
  }
}

json layer_json(const SmoothingRecipe& l) {
  return {{"name", l.layer},
          {"cas",
           {{"mode", to_string(l.cas.mode)},
            {"target_absmean", l.cas.target_absmean},
            {"lambdas", l.cas.lambdas}}},
          {"pts",
           {{"exponent", l.pts.exponent},
            {"stop_reason", to_string(l.pts.stop_reason)},
            {"score_trace", l.pts.score_trace}}}};
}

SmoothingRecipe layer_from_json(const json& j) {
  SmoothingRecipe l;
  l.layer = j.at("name").get<std::string>();
  const json& cas = j.at("cas");
  l.cas.mode = parse_cas_mode(cas.at("mode").get<std::string>());
  l.cas.target_absmean = cas.at("target_absmean").get<double>();
  l.cas.lambdas = cas.at("lambdas").get<std::vector<double>>();
  const json& pts = j.at("pts");
  l.pts.exponent = pts.at("exponent").get<int>();
  l.pts.stop_reason = parse_pts_stop(pts.at("stop_reason").get<std::string>());
  l.pts.score_trace = pts.at("score_trace").get<std::vector<double>>();
  return l;
}

}  // namespace

const SmoothingRecipe& BlockRecipe::layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.layer == name) return l;
  }
  throw DataError("recipe: no layer named '" + std::string(name) + "'");
}

std::size_t BlockRecipe::layer_cols(std::string_view name) const {
  if (name == "wo") return dims.attn_dim();
  if (name == "w_down") return dims.ffn_dim;
  return dims.model_dim;
}

void BlockRecipe::validate() const {
  if (dims.head_dim == 0 || dims.head_dim % 2 != 0) throw DataError("recipe: head_dim must be even");
  if (rope.head_dim != dims.head_dim) throw DataError("recipe: rope head_dim disagrees with dims");
  expect_len(layers.size(), std::size(kLayerNames), "layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].layer != kLayerNames[i]) {
      throw DataError("recipe: layer " + std::to_string(i) + " should be " + kLayerNames[i]);
    }
    expect_len(layers[i].cas.lambdas.size(), layer_cols(layers[i].layer),
               layers[i].layer + ".cas.lambdas");
    if (std::ranges::any_of(layers[i].cas.lambdas, [](double v) { return !(v > 0.0); })) {
      throw DataError("recipe: " + layers[i].layer + " has a non-positive lambda");
    }
    expect_len(layers[i].pts.score_trace.size(),
               static_cast<std::size_t>(layers[i].pts.exponent) + 1,
               layers[i].layer + ".pts.score_trace");
  }
  expect_len(heads.size(), dims.n_heads, "heads");
  for (const auto& h : heads) {
    expect_len(h.rpn.s.size(), dims.head_dim, "rpn.s");
    expect_len(h.crs.t.size(), dims.head_dim, "crs.t");
    for (std::size_t p : h.crs.outlier_pairs) {
      if (p >= dims.head_dim / 2) throw DataError("recipe: outlier pair index out of range");
    }
  }
}

json recipe_to_json(const BlockRecipe& r) {
  json layers = json::array();
  for (const auto& l : r.layers) layers.push_back(layer_json(l));
  json heads = json::array();
  for (const auto& h : r.heads) {
    heads.push_back({{"rpn", {{"alpha", h.rpn.alpha}, {"s", h.rpn.s}}},
                     {"crs",
                      {{"beta", h.crs.beta},
                       {"outlier_pairs", h.crs.outlier_pairs},
                       {"t", h.crs.t}}}});
  }
  return {{"format", "qlab-recipe"},
          {"version", kRecipeVersion},
          {"dims",
           {{"model_dim", r.dims.model_dim},
            {"head_dim", r.dims.head_dim},
            {"n_heads", r.dims.n_heads},
            {"ffn_dim", r.dims.ffn_dim}}},
          {"rope", {{"head_dim", r.rope.head_dim}, {"base", r.rope.base}}},
          {"group_size", r.group_size},
          {"scale_format", to_string(r.scale_format)},
          {"layers", layers},
          {"heads", heads}};
}

BlockRecipe recipe_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "qlab-recipe") throw DataError("recipe: wrong format tag");
    const int version = j.at("version").get<int>();
    if (version != kRecipeVersion) {
      throw DataError("recipe: unsupported version " + std::to_string(version));
    }
    BlockRecipe r;
    const json& d = j.at("dims");
    r.dims = {d.at("model_dim").get<std::size_t>(), d.at("head_dim").get<std::size_t>(),
              d.at("n_heads").get<std::size_t>(), d.at("ffn_dim").get<std::size_t>()};
    r.rope = {j.at("rope").at("head_dim").get<std::size_t>(), j.at("rope").at("base").get<double>()};
    r.group_size = j.at("group_size").get<std::size_t>();
    r.scale_format = parse_scale_format(j.at("scale_format").get<std::string>());
    for (const json& l : j.at("layers")) r.layers.push_back(layer_from_json(l));
    for (const json& h : j.at("heads")) {
      HeadCalibration hc;
      hc.rpn.alpha = h.at("rpn").at("alpha").get<double>();
      hc.rpn.s = h.at("rpn").at("s").get<std::vector<double>>();
      hc.crs.beta = h.at("crs").at("beta").get<double>();
      hc.crs.outlier_pairs = h.at("crs").at("outlier_pairs").get<std::vector<std::size_t>>();
      hc.crs.t = h.at("crs").at("t").get<std::vector<double>>();
      r.heads.push_back(std::move(hc));
    }
    r.validate();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("recipe: ") + e.what());
  }
}

void write_recipe_file(const BlockRecipe& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << recipe_to_json(r).dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

BlockRecipe read_recipe_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return recipe_from_json(j);
}

}  // namespace qlab
