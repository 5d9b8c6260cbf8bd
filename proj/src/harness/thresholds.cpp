// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/harness/thresholds.hpp"

#include <cstdlib>
#include <fstream>

#include "loraroute/error.hpp"

#ifndef LORAROUTE_THRESHOLDS_FILE
#define LORAROUTE_THRESHOLDS_FILE "data/thresholds.json"
#endif

namespace loraroute::harness {

std::filesystem::path default_thresholds_path() {
  if (const char* env = std::getenv("LOGO_THRESHOLDS"); env != nullptr && *env != '\0') {
    return env;
  }
  return LORAROUTE_THRESHOLDS_FILE;
}

Thresholds load_thresholds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open thresholds file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    Thresholds t;
    t.train_loss_reduction_min = j.at("train_loss_reduction_min").get<double>();
    t.heatmap_diagonal_fraction_min = j.at("heatmap_diagonal_fraction_min").get<double>();
    t.top3_hit_rate_min = j.at("top3_hit_rate_min").get<double>();
    t.routed_accuracy_gain_min_pp = j.at("routed_accuracy_gain_min_pp").get<double>();
    t.token_policy_spread_max_pp = j.at("token_policy_spread_max_pp").get<double>();
    t.k_gap_max_pp = j.at("k_gap_max_pp").get<double>();
    t.alignment_spearman_min = j.at("alignment_spearman_min").get<double>();
    if (j.contains("calibration")) t.calibration = j.at("calibration");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, "thresholds file " + path.string() + ": " + e.what());
  }
}

}  // namespace loraroute::harness
