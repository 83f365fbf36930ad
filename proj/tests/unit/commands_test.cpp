// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "qlab/error.hpp"
#include "qlab/oracles.hpp"
#include "qlab/report.hpp"

namespace qlab {
namespace {

namespace fs = std::filesystem;

class CommandsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::string tmpl = (fs::temp_directory_path() / "qlab_cmd_XXXXXX").string();
    ASSERT_NE(::mkdtemp(tmpl.data()), nullptr);
    dir_ = tmpl;
    cfg_.seed = 21;
    cfg_.dims = {64, 16, 2, 128};
    cfg_.tokens = 16;
    cfg_.calib_tokens = 32;
    cfg_.input_std = 0.5;
    cfg_.weight_gain = 0.1;
    cfg_.key_outlier_pairs = 2;
    cfg_.key_outlier_scale = 20.0;
    cfg_.weight_outlier_channels = 2;
    cfg_.weight_outlier_scale = 10.0;
    cal_.group_size = 32;
    cal_.outlier_pairs = 2;
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const char* name) const { return dir_ / name; }

  void pipeline() {
    cmd_gen(cfg_, path("block.qlab"));
    cmd_calibrate(path("block.qlab"), cal_, path("recipe.json"));
    cmd_quantize(path("block.qlab"), path("recipe.json"), path("q.qlab"));
  }

  fs::path dir_;
  SynthConfig cfg_;
  CalibrationConfig cal_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST_F(CommandsTest, BlockPackageRoundTrips) {
  cmd_gen(cfg_, path("block.qlab"));
  const Package p = read_package(path("block.qlab"));
  const SynthData want = generate_block(cfg_);
  const SynthData got = load_block_package(p);
  EXPECT_EQ(got.weights, want.weights);
  EXPECT_EQ(got.calibration, want.calibration);
  EXPECT_EQ(got.input, want.input);
  EXPECT_EQ(synth_config_from_json(p.metadata.at("synth")), cfg_);
  EXPECT_FALSE(is_quantized_package(p));
}

TEST_F(CommandsTest, GenIsByteDeterministic) {
  cmd_gen(cfg_, path("a.qlab"));
  cmd_gen(cfg_, path("b.qlab"));
  EXPECT_EQ(slurp(path("a.qlab")), slurp(path("b.qlab")));
}

TEST_F(CommandsTest, QuantizedPackageReproducesTheBlock) {
  pipeline();
  const SynthData data = generate_block(cfg_);
  const QuantizedBlock direct = calibrate_block(data.weights, data.calibration, cal_);
  const QuantizedBlock loaded = load_quantized_package(read_package(path("q.qlab")));
  EXPECT_EQ(loaded.recipe, direct.recipe);
  EXPECT_EQ(loaded.original, direct.original);
  EXPECT_EQ(loaded.merged, direct.merged);
  ASSERT_EQ(loaded.weights.size(), direct.weights.size());
  for (std::size_t i = 0; i < loaded.weights.size(); ++i) {
    EXPECT_EQ(loaded.weights[i].codes, direct.weights[i].codes);
    EXPECT_EQ(loaded.weights[i].scale_bits, direct.weights[i].scale_bits);
    EXPECT_EQ(loaded.weights[i].pts_exponent, direct.weights[i].pts_exponent);
  }
}

TEST_F(CommandsTest, Bf16ScalesSurviveThePackage) {
  cal_.scale_format = ScaleFormat::bf16;
  pipeline();
  const Package p = read_package(path("q.qlab"));
  EXPECT_EQ(p.at("q.wq.scales").dtype, DType::bf16);
  const QuantizedBlock qb = load_quantized_package(p);
  const SynthData data = generate_block(cfg_);
  const QuantizedBlock direct = calibrate_block(data.weights, data.calibration, cal_);
  EXPECT_EQ(qb.weight("w_down").scale_bits, direct.weight("w_down").scale_bits);
}

TEST_F(CommandsTest, RunIsDeterministicAndWritesMetrics) {
  pipeline();
  RunOptions opts;
  const nlohmann::json m1 = cmd_run(path("q.qlab"), opts, path("o1.qlab"));
  const nlohmann::json m2 = cmd_run(path("q.qlab"), opts, path("o2.qlab"));
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(slurp(path("o1.qlab")), slurp(path("o2.qlab")));
  EXPECT_EQ(m1.at("schema_version"), kMetricsSchemaVersion);
  EXPECT_EQ(m1.at("policy"), "mixed");
  EXPECT_EQ(m1.at("tokens"), 16);
  const Package out = read_package(path("o1.qlab"));
  EXPECT_EQ(out.at("output").shape, (std::vector<std::size_t>{16, 64}));
  EXPECT_EQ(out.metadata.at("metrics"), m1);
}

TEST_F(CommandsTest, PassthroughExactMatchesReference) {
  pipeline();
  RunOptions opts;
  opts.passthrough = true;
  opts.forward.policy = PrecisionPolicy::exact();
  const nlohmann::json m = cmd_run(path("q.qlab"), opts, path("o.qlab"));
  EXPECT_LT(m.at("relative_frobenius").get<double>(), 1e-6);
}

TEST_F(CommandsTest, RunWithSeparateInput) {
  pipeline();
  SynthConfig other = cfg_;
  other.seed = 99;
  other.tokens = 5;
  cmd_gen(other, path("other.qlab"));
  RunOptions opts;
  opts.input = path("other.qlab");
  EXPECT_EQ(cmd_run(path("q.qlab"), opts, path("o.qlab")).at("tokens"), 5);
}

TEST_F(CommandsTest, ReportIsRecomputable) {
  pipeline();
  const nlohmann::json from_q = cmd_report(path("q.qlab"), cal_, 16, path("r.csv"));
  const nlohmann::json from_block = cmd_report(path("block.qlab"), cal_, 16, std::nullopt);
  EXPECT_EQ(from_q, from_block);
  EXPECT_EQ(from_q.at("schema_version"), kReportSchemaVersion);
  ASSERT_EQ(from_q.at("layers").size(), 7u);

  const QuantizedBlock qb = load_quantized_package(read_package(path("q.qlab")));
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    const nlohmann::json& l = from_q.at("layers")[i];
    const SmoothingRecipe& r = qb.recipe.layers[i];
    const RealMatrix& w = qb.merged.layer(r.layer);
    EXPECT_EQ(l.at("layer"), r.layer);
    EXPECT_EQ(l.at("pts_exponent"), r.pts.exponent);
    EXPECT_EQ(l.at("dequant_ops").get<std::uint64_t>(), (16 + w.cols()) * w.rows());
    EXPECT_DOUBLE_EQ(l.at("underflow_fraction_raw").get<double>(),
                     oracle::tiny_group_fraction(qb.original.layer(r.layer), 32));
    RealMatrix scaled = w;
    for (double& v : scaled.flat()) v = std::ldexp(v, r.pts.exponent);
    EXPECT_DOUBLE_EQ(l.at("underflow_fraction_after_pts").get<double>(),
                     oracle::tiny_group_fraction(scaled, 32));
    total += l.at("dequant_ops").get<std::uint64_t>();
  }
  EXPECT_EQ(from_q.at("dequant_ops_total").get<std::uint64_t>(), total);
  const std::string csv = slurp(path("r.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_EQ(csv.rfind("layer,rows,cols,", 0), 0u);
}

TEST_F(CommandsTest, WrongPackageKinds) {
  pipeline();
  EXPECT_THROW(cmd_run(path("block.qlab"), {}, path("o.qlab")), DataError);
  EXPECT_THROW(cmd_calibrate(path("q.qlab"), cal_, path("r2.json")), DataError);
  SynthConfig other = cfg_;
  other.dims.model_dim = 32;
  cmd_gen(other, path("small.qlab"));
  EXPECT_THROW(cmd_quantize(path("small.qlab"), path("recipe.json"), path("x.qlab")), DataError);
  EXPECT_THROW(cmd_gen(cfg_, dir_ / "missing" / "x.qlab"), IoError);
}

TEST(SynthJson, RoundTrip) {
  SynthConfig c;
  c.seed = 7;
  c.weight_outlier_at = {1, 4};
  c.tiny_row_fraction = 0.25;
  EXPECT_EQ(synth_config_from_json(synth_config_to_json(c)), c);
  nlohmann::json j = synth_config_to_json(c);
  j.erase("qk_gain");
  EXPECT_THROW(synth_config_from_json(j), DataError);
}

TEST(DequantCost, Formula) {
  EXPECT_EQ(dequant_cost(16, 256, 512), (16u + 256u) * 512u);
  EXPECT_EQ(dequant_cost(0, 1, 1), 1u);
}

}  // namespace
}  // namespace qlab
