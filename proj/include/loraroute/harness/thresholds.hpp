// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "json.hpp"

namespace loraroute::harness {

// Pass thresholds for the desk-scale experiments, measured once on the
// reference seeds and committed under data/thresholds.json.
struct Thresholds {
  double train_loss_reduction_min = 0.05;     // fractional drop of held-out task loss
  double heatmap_diagonal_fraction_min = 0.8;
  double top3_hit_rate_min = 0.8;
  double routed_accuracy_gain_min_pp = 20.0;
  double token_policy_spread_max_pp = 10.0;
  double k_gap_max_pp = 10.0;
  double alignment_spearman_min = 0.0;        // strict lower bound
  nlohmann::json calibration = nlohmann::json::object();  // measured values, informational
};

// LOGO_THRESHOLDS if set, otherwise the copy in the source tree.
std::filesystem::path default_thresholds_path();

// Throws kIo when unreadable and kMalformed for missing or non-numeric fields.
Thresholds load_thresholds(const std::filesystem::path& path);

}  // namespace loraroute::harness
