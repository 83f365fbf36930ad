// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/tensorio.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include <gtest/gtest.h>
#include <unistd.h>

#include "qlab/model_block.hpp"
#include "qlab/synth.hpp"

namespace qlab {
namespace {

using nlohmann::json;

// Splits serialized bytes into header JSON and payload, lets `edit` change
// the header, and reassembles them with the same payload.
std::vector<std::uint8_t> rewrite_header(const std::vector<std::uint8_t>& bytes,
                                         const std::function<void(json&)>& edit) {
  const std::string s(bytes.begin(), bytes.end());
  const std::size_t l1 = s.find('\n');
  const std::size_t l2 = s.find('\n', l1 + 1);
  const std::size_t len = std::stoul(s.substr(l1 + 1, l2 - l1 - 1));
  json header = json::parse(s.substr(l2 + 1, len));
  const std::size_t base = (l2 + 1 + len + 63) / 64 * 64;
  edit(header);
  const std::string text = header.dump();
  std::string out = s.substr(0, l1 + 1) + std::to_string(text.size()) + "\n" + text;
  out.resize((out.size() + 63) / 64 * 64, '\0');
  out += s.substr(base);
  return {out.begin(), out.end()};
}

IoErrorCode code_of(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_package(bytes);
  } catch (const IoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no IoError";
  return IoErrorCode::io_failure;
}

BlockRecipe small_recipe() {
  SynthConfig c;
  c.seed = 3;
  c.dims = {32, 8, 2, 64};
  c.tokens = 8;
  c.calib_tokens = 16;
  c.key_outlier_pairs = 1;
  c.key_outlier_scale = 10.0;
  const SynthData d = generate_block(c);
  CalibrationConfig cfg;
  cfg.group_size = 16;
  cfg.outlier_pairs = 2;
  return calibrate_recipe(d.weights, d.calibration, cfg);
}

Package sample_package() {
  Package p;
  p.add(make_fp32("a", {2, 3}, std::vector<double>{1, -2, 3.5, 0, 1e-30, -7}));
  p.add(make_bf16("b", {2}, std::vector<Bf16>{bf16_encode(1.5), bf16_encode(-3.0)}));
  p.add(make_fp16("c", {1, 1}, std::vector<Fp16>{fp16_encode(0.1)}));
  p.add(make_int4("d", {3, 3}, std::vector<std::int8_t>{-8, 7, 0, 1, -1, 2, -3, 4, 5}));
  p.metadata = {{"note", "x"}, {"n", 4}};
  return p;
}

TEST(TensorIo, EmptyPackageRoundTrips) {
  const Package p;
  EXPECT_EQ(deserialize_package(serialize_package(p)), p);
}

TEST(TensorIo, MixedPackageRoundTrips) {
  Package p = sample_package();
  p.recipes = {small_recipe()};
  const auto bytes = serialize_package(p);
  EXPECT_EQ(deserialize_package(bytes), p);
  EXPECT_EQ(serialize_package(deserialize_package(bytes)), bytes);
}

TEST(TensorIo, PayloadsAreAligned) {
  const auto bytes = serialize_package(sample_package());
  const json h = [&] {
    json out;
    rewrite_header(bytes, [&](json& j) { out = j; });
    return out;
  }();
  for (const json& t : h["tensors"]) EXPECT_EQ(t["offset"].get<std::size_t>() % kPayloadAlignment, 0u);
}

TEST(TensorIo, AllFp8CodesSurvive) {
  std::vector<Fp8E4M3> codes;
  for (int b = 0; b < 256; ++b) codes.push_back(Fp8E4M3::from_bits(static_cast<std::uint8_t>(b)));
  Package p;
  p.add(make_fp8("all", {16, 16}, codes));
  const Package q = deserialize_package(serialize_package(p));
  ASSERT_EQ(q.at("all").payload.size(), 256u);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(q.at("all").payload[b], b);
  const auto values = decode_values(q.at("all"));
  EXPECT_TRUE(std::isnan(values[0x7F]));
  EXPECT_EQ(values[0x7E], 448.0);
}

TEST(TensorIo, OddInt4CountZeroesTheSpareNibble) {
  Package p;
  Tensor t = make_int4("odd", {5}, std::vector<std::int8_t>{1, 2, 3, 4, -5});
  ASSERT_EQ(t.payload.size(), 3u);
  EXPECT_EQ(t.payload[2] >> 4, 0);
  p.add(t);
  auto bytes = serialize_package(p);
  const Package q = deserialize_package(bytes);
  EXPECT_EQ(decode_int4(q.at("odd")), (std::vector<std::int8_t>{1, 2, 3, 4, -5}));
}

TEST(TensorIo, Fp32ValuesAreRoundedOnce) {
  const Tensor t = make_fp32("x", {1}, std::vector<double>{0.1});
  EXPECT_EQ(decode_values(t)[0], static_cast<double>(0.1f));
  EXPECT_THROW(make_fp32("x", {2, 2}, std::vector<double>{1.0}), ShapeError);
  EXPECT_THROW(make_int4("x", {1}, std::vector<std::int8_t>{8}), DataError);
}

TEST(TensorIo, ToMatrix) {
  const RealMatrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(to_matrix(make_fp32("m", m)), m);
  EXPECT_THROW(to_matrix(make_fp32("v", {3}, std::vector<double>{1, 2, 3})), ShapeError);
}

TEST(TensorIo, AddReplacesByName) {
  Package p;
  p.add(make_fp32("x", {1}, std::vector<double>{1}));
  p.add(make_fp32("x", {1}, std::vector<double>{2}));
  ASSERT_EQ(p.tensors.size(), 1u);
  EXPECT_EQ(decode_values(p.at("x"))[0], 2.0);
  EXPECT_THROW(p.at("y"), DataError);
}

TEST(TensorIo, ErrorCodes) {
  const auto good = serialize_package(sample_package());

  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  EXPECT_EQ(code_of(bad), IoErrorCode::malformed_header);

  const std::string v2 = "QLAB-PACKAGE 2";
  bad = good;
  std::memcpy(bad.data(), v2.data(), v2.size());
  EXPECT_EQ(code_of(bad), IoErrorCode::version_mismatch);

  EXPECT_EQ(code_of(std::vector<std::uint8_t>(good.begin(), good.end() - 1)), IoErrorCode::truncated_payload);
  EXPECT_EQ(code_of(std::vector<std::uint8_t>(good.begin(), good.begin() + 30)), IoErrorCode::truncated_payload);

  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][1]["offset"] = 0; })),
            IoErrorCode::overlapping_regions);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][0]["dtype"] = "int3"; })),
            IoErrorCode::unknown_dtype);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][0]["offset"] = 8; })),
            IoErrorCode::malformed_header);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][0]["length"] = 4; })),
            IoErrorCode::malformed_header);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][1]["name"] = "a"; })),
            IoErrorCode::malformed_header);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h.erase("metadata"); })),
            IoErrorCode::malformed_header);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["version"] = 9; })),
            IoErrorCode::version_mismatch);
  EXPECT_EQ(code_of(rewrite_header(good, [](json& h) { h["tensors"][3]["offset"] = 1 << 20; })),
            IoErrorCode::truncated_payload);

  EXPECT_THROW(read_package("/nonexistent/qlab.pkg"), IoError);
}

TEST(TensorIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / ("qlab_tio_" + std::to_string(::getpid()));
  const Package p = sample_package();
  write_package(p, path);
  EXPECT_EQ(read_package(path), p);
  std::filesystem::remove(path);
}

TEST(TensorIo, DTypeNames) {
  for (DType d : {DType::fp32, DType::bf16, DType::fp16, DType::fp8e4m3, DType::int4packed}) {
    EXPECT_EQ(parse_dtype(to_string(d)), d);
  }
  EXPECT_EQ(payload_bytes(DType::int4packed, 7), 4u);
  EXPECT_EQ(payload_bytes(DType::fp32, 7), 28u);
}

TEST(Recipe, JsonRoundTrip) {
  const BlockRecipe r = small_recipe();
  EXPECT_EQ(recipe_from_json(recipe_to_json(r)), r);
  EXPECT_EQ(recipe_from_json(json::parse(recipe_to_json(r).dump())), r);
}

TEST(Recipe, RejectsBadDocuments) {
  const json good = recipe_to_json(small_recipe());
  json j = good;
  j["version"] = kRecipeVersion + 1;
  EXPECT_THROW(recipe_from_json(j), DataError);
  j = good;
  j["format"] = "other";
  EXPECT_THROW(recipe_from_json(j), DataError);

  BlockRecipe r = small_recipe();
  r.layers[0].cas.lambdas.pop_back();
  EXPECT_THROW(r.validate(), DataError);
  EXPECT_THROW(recipe_from_json(recipe_to_json(r)), DataError);

  r = small_recipe();
  r.heads[0].crs.outlier_pairs = {99};
  EXPECT_THROW(r.validate(), DataError);

  r = small_recipe();
  r.rope.head_dim = 6;
  EXPECT_THROW(r.validate(), DataError);
  EXPECT_THROW(r.layer("w_side"), DataError);
}

}  // namespace
}  // namespace qlab
