// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/report.hpp"

#include <sstream>

#include "qlab/smoothing.hpp"

namespace qlab {

std::uint64_t dequant_cost(std::uint64_t batch, std::uint64_t d_in, std::uint64_t d_out) {
  return (batch + d_in) * d_out;
}

BlockReport make_report(const BlockWeights& original, const BlockWeights& merged,
                        const BlockRecipe& recipe, std::size_t batch) {
  BlockReport rep;
  rep.group_size = recipe.group_size;
  rep.batch = batch;
  for (const auto& l : recipe.layers) {
    const RealMatrix& raw = original.layer(l.layer);
    const RealMatrix& m = merged.layer(l.layer);
    LayerReport lr;
    lr.layer = l.layer;
    lr.rows = m.rows();
    lr.cols = m.cols();
    lr.underflow_raw = underflow_group_fraction(raw, recipe.group_size);
    lr.underflow_smoothed = underflow_group_fraction(m, recipe.group_size);
    lr.underflow_after_pts =
        underflow_group_fraction(apply_pts(m, l.pts.exponent), recipe.group_size);
    lr.pts_exponent = l.pts.exponent;
    lr.pts_stop = l.pts.stop_reason;
    lr.dequant_ops = dequant_cost(batch, m.cols(), m.rows());
    rep.layers.push_back(lr);
  }
  for (const auto& h : recipe.heads) rep.outlier_pairs.push_back(h.crs.outlier_pairs);
  return rep;
}

nlohmann::json report_to_json(const BlockReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  std::uint64_t total = 0;
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"rows", l.rows},
                      {"cols", l.cols},
                      {"underflow_fraction_raw", l.underflow_raw},
                      {"underflow_fraction_smoothed", l.underflow_smoothed},
                      {"underflow_fraction_after_pts", l.underflow_after_pts},
                      {"pts_exponent", l.pts_exponent},
                      {"pts_stop_reason", to_string(l.pts_stop)},
                      {"dequant_ops", l.dequant_ops}});
    total += l.dequant_ops;
  }
  return {{"schema_version", kReportSchemaVersion},
          {"group_size", r.group_size},
          {"batch", r.batch},
          {"layers", layers},
          {"outlier_pairs", r.outlier_pairs},
          {"dequant_ops_total", total}};
}

std::string report_to_csv(const BlockReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,rows,cols,underflow_raw,underflow_smoothed,underflow_after_pts,pts_exponent,"
         "pts_stop_reason,dequant_ops\n";
  for (const auto& l : r.layers) {
    out << l.layer << ',' << l.rows << ',' << l.cols << ',' << l.underflow_raw << ','
        << l.underflow_smoothed << ',' << l.underflow_after_pts << ',' << l.pts_exponent << ','
        << to_string(l.pts_stop) << ',' << l.dequant_ops << '\n';
  }
  return out.str();
}

}  // namespace qlab
