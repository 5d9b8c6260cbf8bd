// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/signals.hpp"

namespace loraroute {

inline constexpr std::size_t kDefaultTopK = 20;

struct RoutedAdapter {
  std::string id;
  double score = 0.0;
  double weight = 0.0;

  friend bool operator==(const RoutedAdapter&, const RoutedAdapter&) = default;
};

struct RoutingDecision {
  // Descending score; equal scores ordered by ascending id.
  std::vector<RoutedAdapter> selected;
  std::size_t k = kDefaultTopK;
  std::uint64_t pool_revision = 0;
  Scoring scoring = Scoring::kNorm;

  friend bool operator==(const RoutingDecision&, const RoutingDecision&) = default;
};

// Indices of the min(k, n) largest scores, ordered by descending score then
// ascending id. Throws kInvalidArgument on k == 0 or non-finite scores.
std::vector<std::size_t> top_k_indices(std::span<const double> scores,
                                       std::span<const std::string> ids, std::size_t k);

// Scores normalized to sum to one. All-zero input gives uniform weights.
// Throws kInvalidArgument on negative or non-finite scores.
Vector normalize_weights(std::span<const double> scores);

// Top-k selection plus weight normalization. Throws kEmptyInput on an empty report.
RoutingDecision select_topk(const SignalReport& report, std::size_t k);

// Output mixture: every (block, site) gets one hook adding
// sum_i weight_i * alpha_i * up_i * (down_i * h) over the selected adapters.
// Unselected adapters are not attached. Throws kStaleDecision when a selected
// id is no longer in the pool.
HookSet mixture_hooks(const AdapterPool& pool, const RoutingDecision& decision);

// Parameter fusion: one dense update per (block, site).
struct FusedDelta {
  std::size_t d_model = 0;
  std::size_t n_blocks = 0;
  std::vector<Matrix> updates;  // [block * kNumSites + site], d_model x d_model

  const Matrix& at(std::size_t block, Site site) const {
    return updates[block * kNumSites + static_cast<std::size_t>(site)];
  }
};

FusedDelta fuse_parameters(const AdapterPool& pool, const RoutingDecision& decision);
HookSet fused_hooks(std::shared_ptr<const FusedDelta> fused);

// {"pool_revision", "k", "scoring", "entries": [{"id", "score", "weight"}]}
nlohmann::json decision_to_json(const RoutingDecision& decision);
RoutingDecision decision_from_json(const nlohmann::json& record);

}  // namespace loraroute
