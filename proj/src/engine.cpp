// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/engine.hpp"

#include <chrono>
#include <memory>

#include "loraroute/error.hpp"

namespace loraroute {

std::string_view merge_mode_name(MergeMode mode) noexcept {
  return mode == MergeMode::kMixture ? "mixture" : "fusion";
}

MergeMode parse_merge_mode(std::string_view name) {
  if (name == "mixture") return MergeMode::kMixture;
  if (name == "fusion") return MergeMode::kFusion;
  throw Error(ErrorCode::kInvalidArgument, "unknown merge mode: " + std::string(name));
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void check_k(const EngineConfig& config) {
  if (config.k == 0) throw Error(ErrorCode::kInvalidArgument, "engine: k must be >= 1");
}

}  // namespace

HookSet merged_hooks(const AdapterPool& pool, const RoutingDecision& decision, MergeMode mode) {
  if (mode == MergeMode::kMixture) return mixture_hooks(pool, decision);
  return fused_hooks(std::make_shared<const FusedDelta>(fuse_parameters(pool, decision)));
}

RoutingDecision route_only(const Backbone& backbone, const AdapterPool& pool,
                           std::span<const Token> tokens, const EngineConfig& config) {
  check_k(config);
  const SignalReport report = probe(backbone, pool, tokens, config.signal);
  return select_topk(report, config.k);
}

RouteResult route_and_generate(const Backbone& backbone, const AdapterPool& pool,
                               std::span<const Token> tokens, const EngineConfig& config,
                               std::size_t max_new, const GenerateOptions& options) {
  check_k(config);
  const ModelConfig& mc = backbone.config();
  backbone.validate_tokens(tokens);
  if (tokens.size() + max_new > mc.max_seq_len) {
    throw Error(ErrorCode::kContextOverflow,
                "prompt length " + std::to_string(tokens.size()) + " + max_new " +
                    std::to_string(max_new) + " exceeds max_seq_len " +
                    std::to_string(mc.max_seq_len));
  }

  RouteResult result;
  auto start = Clock::now();
  const SignalReport report = probe(backbone, pool, tokens, config.signal);
  result.timings.probe_ms = elapsed_ms(start);

  start = Clock::now();
  result.decision = select_topk(report, config.k);
  const HookSet hooks = merged_hooks(pool, result.decision, config.merge_mode);
  result.timings.select_merge_ms = elapsed_ms(start);

  GenerateResult gen = backbone.generate(tokens, hooks, max_new, options);
  result.output_tokens = std::move(gen.tokens);
  result.timings.per_token_ms = std::move(gen.per_token_ms);
  result.forward_pass_count = 1 + gen.forward_passes;
  return result;
}

nlohmann::json route_result_to_json(const RouteResult& result, bool include_timings) {
  nlohmann::json record = decision_to_json(result.decision);
  record["output_tokens"] = result.output_tokens;
  record["forward_pass_count"] = result.forward_pass_count;
  if (include_timings) {
    record["timings"] = {{"probe_ms", result.timings.probe_ms},
                         {"select_merge_ms", result.timings.select_merge_ms},
                         {"per_token_ms", result.timings.per_token_ms}};
  }
  return record;
}

}  // namespace loraroute
