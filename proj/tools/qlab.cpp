// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// qlab: generate synthetic blocks, calibrate, quantize, run and report.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 invariant failure.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qlab/checks.hpp"
#include "qlab/commands.hpp"
#include "qlab/error.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInvariant = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_index_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("not an index list: '" + s + "'");
    }
  }
  return out;
}

// "absmean", "constant[:lambda]" or "explicit:target"
qlab::CasTarget parse_cas_target(const std::string& s) {
  const auto colon = s.find(':');
  qlab::CasTarget t;
  try {
    t.mode = qlab::parse_cas_mode(s.substr(0, colon));
    t.value = colon == std::string::npos ? 1.0 : std::stod(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("bad CAS mode '" + s + "' (absmean, constant[:lambda], explicit:target)");
  }
  if (t.mode == qlab::CasMode::explicit_value && colon == std::string::npos) {
    throw UsageError("explicit CAS mode needs a target, e.g. explicit:0.02");
  }
  return t;
}

// Config file: a JSON object. Top-level keys apply to every command that
// has an option of that name; an object keyed by a command name holds keys
// for that command only. Values become "--key value" ahead of the real
// arguments, so flags given on the command line win.
std::vector<std::string> config_arguments(const std::string& path, CLI::App& cmd) {
  std::ifstream in(path);
  if (!in) throw qlab::DataError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw qlab::DataError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw qlab::DataError("config file must hold a JSON object");

  std::vector<std::string> args;
  auto emit = [&](const std::string& key, const json& v, bool strict) {
    if (cmd.get_option_no_throw("--" + key) == nullptr) {
      if (strict) throw UsageError("config: '" + cmd.get_name() + "' has no option --" + key);
      return;
    }
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back("--" + key);
      return;
    }
    std::string value;
    if (v.is_string()) {
      value = v.get<std::string>();
    } else if (v.is_array()) {
      for (const auto& e : v) value += (value.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
    } else if (v.is_number()) {
      value = v.dump();
    } else {
      throw UsageError("config: unsupported value for " + key);
    }
    args.push_back("--" + key);
    args.push_back(value);
  };
  for (const auto& [key, v] : j.items()) {
    if (!v.is_object()) emit(key, v, false);
  }
  if (j.contains(cmd.get_name())) {
    for (const auto& [key, v] : j.at(cmd.get_name()).items()) emit(key, v, true);
  }
  return args;
}

struct CalibrationFlags {
  qlab::CalibrationConfig cfg;
  std::string scale_format = "fp8";
  std::string cas_qkv = "constant:1", cas_o = "absmean", cas_up_gate = "absmean", cas_down = "absmean";
  bool no_cas = false, no_pts = false, no_rpn = false, no_crs = false;

  void attach(CLI::App* c) {
    c->add_option("--group-size", cfg.group_size, "INT4 group size along the input dimension")
        ->capture_default_str();
    c->add_option("--alpha", cfg.alpha, "RPN pair-norm scale")->capture_default_str();
    c->add_option("--beta", cfg.beta, "CRS channel scale")->capture_default_str();
    c->add_option("--outlier-pairs", cfg.outlier_pairs, "CRS outlier pairs per head")->capture_default_str();
    c->add_option("--scale-format", scale_format, "Weight group scale format")
        ->check(CLI::IsMember({"fp8", "bf16"}))
        ->capture_default_str();
    c->add_option("--rope-base", cfg.rope_base, "RoPE frequency base")->capture_default_str();
    c->add_option("--cas-qkv", cas_qkv, "CAS on the q/k/v inputs: absmean, constant[:lambda], explicit:target")
        ->capture_default_str();
    c->add_option("--cas-o", cas_o, "CAS on the output projection input")->capture_default_str();
    c->add_option("--cas-up-gate", cas_up_gate, "CAS on the up/gate input")->capture_default_str();
    c->add_option("--cas-down", cas_down, "CAS on the down projection input")->capture_default_str();
    c->add_flag("--no-cas", no_cas, "Disable channel absmean scaling");
    c->add_flag("--no-pts", no_pts, "Disable power-of-two tensor scaling");
    c->add_flag("--no-rpn", no_rpn, "Disable RoPE pair normalization");
    c->add_flag("--no-crs", no_crs, "Disable channel RoPE scaling");
  }

  qlab::CalibrationConfig resolve() const {
    qlab::CalibrationConfig c = cfg;
    c.scale_format = qlab::parse_scale_format(scale_format);
    c.cas_qkv = parse_cas_target(cas_qkv);
    c.cas_o = parse_cas_target(cas_o);
    c.cas_up_gate = parse_cas_target(cas_up_gate);
    c.cas_down = parse_cas_target(cas_down);
    c.toggles = {!no_cas, !no_pts, !no_rpn, !no_crs};
    return c;
  }
};

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw qlab::DataError("cannot open " + path);
  out << j.dump(2) << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"INT4 x FP8 post-training quantization lab"};
  app.name("qlab");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;  // read before parsing; see below
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config file; command-line flags override it");
  };

  // gen
  qlab::SynthConfig synth;
  std::string gen_out, outlier_at;
  CLI::App* gen = app.add_subcommand("gen", "Write a synthetic block package");
  add_config(gen);
  gen->add_option("-o,--out", gen_out, "Output package")->required();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--model-dim", synth.dims.model_dim)->capture_default_str();
  gen->add_option("--head-dim", synth.dims.head_dim)->capture_default_str();
  gen->add_option("--heads", synth.dims.n_heads)->capture_default_str();
  gen->add_option("--ffn-dim", synth.dims.ffn_dim)->capture_default_str();
  gen->add_option("--tokens", synth.tokens, "Evaluation input rows")->capture_default_str();
  gen->add_option("--calib-tokens", synth.calib_tokens, "Calibration input rows")->capture_default_str();
  gen->add_option("--input-std", synth.input_std)->capture_default_str();
  gen->add_option("--weight-gain", synth.weight_gain, "Weight std times sqrt(fan_in)")->capture_default_str();
  gen->add_option("--qk-gain", synth.qk_gain, "Extra gain on wq and wk")->capture_default_str();
  gen->add_option("--weight-outliers", synth.weight_outlier_channels,
                  "Random outlier input channels per layer")
      ->capture_default_str();
  gen->add_option("--weight-outlier-at", outlier_at, "Explicit outlier channels, e.g. 5,17");
  gen->add_option("--weight-outlier-scale", synth.weight_outlier_scale)->capture_default_str();
  gen->add_option("--key-outlier-pairs", synth.key_outlier_pairs, "Outlier RoPE pairs per head")
      ->capture_default_str();
  gen->add_option("--key-outlier-scale", synth.key_outlier_scale)->capture_default_str();
  gen->add_option("--tiny-row-fraction", synth.tiny_row_fraction)->capture_default_str();
  gen->add_option("--tiny-row-scale", synth.tiny_row_scale)->capture_default_str();

  // calibrate
  CalibrationFlags cal_flags;
  std::string cal_package, cal_out;
  CLI::App* cal = app.add_subcommand("calibrate", "Compute a smoothing recipe for a block package");
  add_config(cal);
  cal->add_option("package", cal_package, "Block package from gen")->required();
  cal->add_option("-o,--out", cal_out, "Output recipe (JSON)")->required();
  cal_flags.attach(cal);

  // quantize
  std::string q_package, q_recipe, q_out;
  CLI::App* quant = app.add_subcommand("quantize", "Apply a recipe and quantize every layer");
  add_config(quant);
  quant->add_option("package", q_package, "Block package from gen")->required();
  quant->add_option("-r,--recipe", q_recipe, "Recipe from calibrate")->required();
  quant->add_option("-o,--out", q_out, "Output quantized package")->required();

  // run
  std::string r_qpackage, r_input, r_out, r_metrics;
  std::string policy = "mixed", score_fmt, rowmax_fmt, p_fmt, out_fmt;
  double p_scale = 1.0, tau = 0.0;
  bool exact = false;
  qlab::RunOptions run_opts;
  CLI::App* runc = app.add_subcommand("run", "Run the quantized block and report its error");
  add_config(runc);
  runc->add_option("qpackage", r_qpackage, "Quantized package")->required();
  runc->add_option("-i,--input", r_input, "Package with an 'input' tensor (default: the qpackage's)");
  runc->add_option("-o,--out", r_out, "Output package")->required();
  runc->add_option("--metrics", r_metrics, "Metrics JSON path (default: stdout)");
  runc->add_option("--policy", policy, "Attention precision policy")
      ->check(CLI::IsMember({"mixed", "exact", "fp32", "fp16-scores"}))
      ->capture_default_str();
  const std::vector<std::string> formats{"fp8_e4m3", "bf16", "fp16", "fp32", "fp64"};
  auto* o_score = runc->add_option("--score-format", score_fmt, "Override: QK^T accumulation format")
                      ->check(CLI::IsMember(formats));
  auto* o_rowmax = runc->add_option("--rowmax-format", rowmax_fmt, "Override: running max and exp format")
                       ->check(CLI::IsMember(formats));
  auto* o_p = runc->add_option("--p-format", p_fmt, "Override: P format")->check(CLI::IsMember(formats));
  auto* o_pscale = runc->add_option("--p-scale", p_scale, "Override: scale applied to P before encoding");
  auto* o_out = runc->add_option("--output-format", out_fmt, "Override: attention output format")
                    ->check(CLI::IsMember(formats));
  auto* o_tau = runc->add_option("--tau", tau, "Score scale (default 1/sqrt(head_dim))");
  runc->add_flag("--exact", exact, "Run attention in double precision");
  runc->add_option("--block-rows", run_opts.forward.schedule.block_rows)->capture_default_str();
  runc->add_option("--block-cols", run_opts.forward.schedule.block_cols)->capture_default_str();
  runc->add_flag("--passthrough", run_opts.passthrough,
                 "Skip quantization: merged block in double precision, attention through the tiled kernel");

  // report
  CalibrationFlags rep_flags;
  std::string rep_package, rep_out, rep_csv;
  std::size_t batch = 16;
  CLI::App* rep = app.add_subcommand("report", "Underflow fractions, PTS exponents, outlier pairs, dequant cost");
  add_config(rep);
  rep->add_option("package", rep_package, "Block or quantized package")->required();
  rep->add_option("-o,--out", rep_out, "Report JSON path (default: stdout)");
  rep->add_option("--csv", rep_csv, "Also write per-layer rows as CSV");
  rep->add_option("--batch", batch, "Batch size b in (b + d_in) * d_out")->capture_default_str();
  rep_flags.attach(rep);

  // selftest
  std::string only;
  CLI::App* self = app.add_subcommand("selftest", "Run the acceptance suite");
  add_config(self);
  self->add_option("--only", only, "Comma-separated criterion ids");

  // The config file's values go in front of the real arguments, right after
  // the subcommand name.
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_file = args[i].substr(9);
  }
  const auto sub = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    return app.get_subcommand_no_throw(a) != nullptr;
  });
  if (!config_file.empty() && sub != args.end()) {
    const auto extra = config_arguments(config_file, *app.get_subcommand(*sub));
    args.insert(sub + 1, extra.begin(), extra.end());
  }
  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (gen->parsed()) {
    if (!outlier_at.empty()) synth.weight_outlier_at = parse_index_list(outlier_at);
    qlab::cmd_gen(synth, gen_out);
  } else if (cal->parsed()) {
    qlab::cmd_calibrate(cal_package, cal_flags.resolve(), cal_out);
  } else if (quant->parsed()) {
    qlab::cmd_quantize(q_package, q_recipe, q_out);
  } else if (runc->parsed()) {
    qlab::PrecisionPolicy& p = run_opts.forward.policy;
    p = qlab::parse_policy(policy);
    if (o_score->count()) p.score_format = qlab::parse_format(score_fmt);
    if (o_rowmax->count()) p.rowmax_format = qlab::parse_format(rowmax_fmt);
    if (o_p->count()) p.p_format = qlab::parse_format(p_fmt);
    if (o_pscale->count()) p.p_scale = p_scale;
    if (o_out->count()) p.output_format = qlab::parse_format(out_fmt);
    if (exact) p.exact_mode = true;
    if (o_tau->count()) run_opts.forward.schedule.tau = tau;
    if (!r_input.empty()) run_opts.input = r_input;
    write_json(qlab::cmd_run(r_qpackage, run_opts, r_out), r_metrics);
  } else if (rep->parsed()) {
    std::optional<std::filesystem::path> csv;
    if (!rep_csv.empty()) csv = rep_csv;
    write_json(qlab::cmd_report(rep_package, rep_flags.resolve(), batch, csv), rep_out);
  } else if (self->parsed()) {
    const auto ids = parse_index_list(only);
    int failed = 0;
    for (const auto& c : qlab::checks::acceptance_criteria()) {
      if (!ids.empty() && std::find(ids.begin(), ids.end(), static_cast<std::size_t>(c.id)) == ids.end()) {
        continue;
      }
      const auto o = qlab::checks::run_criterion(c);
      std::cout << qlab::checks::format_outcome(o) << std::endl;
      failed += o.verdict.passed ? 0 : 1;
    }
    if (failed > 0) {
      std::cerr << "qlab: " << failed << " criteria failed\n";
      return kExitInvariant;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "qlab: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "qlab: " << e.what() << '\n';
    return kExitData;
  }
}
