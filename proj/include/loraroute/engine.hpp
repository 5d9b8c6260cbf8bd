// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/routing.hpp"
#include "loraroute/signals.hpp"

namespace loraroute {

enum class MergeMode { kMixture, kFusion };

std::string_view merge_mode_name(MergeMode mode) noexcept;
MergeMode parse_merge_mode(std::string_view name);

struct EngineConfig {
  SignalConfig signal;
  std::size_t k = kDefaultTopK;
  MergeMode merge_mode = MergeMode::kMixture;
};

struct RouteTimings {
  double probe_ms = 0.0;
  double select_merge_ms = 0.0;
  // One entry per emitted token; entry 0 includes the merged-configuration prefill.
  std::vector<double> per_token_ms;
};

struct RouteResult {
  RoutingDecision decision;
  std::vector<Token> output_tokens;
  RouteTimings timings;
  // 1 for the probe plus every generation pass.
  std::uint64_t forward_pass_count = 0;
};

// Probe, select and normalize; no generation. Exactly one forward pass.
RoutingDecision route_only(const Backbone& backbone, const AdapterPool& pool,
                           std::span<const Token> tokens, const EngineConfig& config);

// Full per-request pipeline: probe with every adapter attached, pick the
// top-k, build the merged configuration, then prefill the prompt again under
// it and decode greedily. The probe's cached state is not reused because it
// was computed with all adapters attached.
RouteResult route_and_generate(const Backbone& backbone, const AdapterPool& pool,
                               std::span<const Token> tokens, const EngineConfig& config,
                               std::size_t max_new, const GenerateOptions& options = {});

// Hooks realizing `decision` in the given merge mode.
HookSet merged_hooks(const AdapterPool& pool, const RoutingDecision& decision, MergeMode mode);

// Decision record plus "output_tokens", "forward_pass_count" and "timings".
nlohmann::json route_result_to_json(const RouteResult& result, bool include_timings = true);

}  // namespace loraroute
