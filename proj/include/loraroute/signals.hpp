// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/numcore.hpp"

namespace loraroute {

// Which token's projection output is scored.
enum class TokenPolicy { kFirst, kLast, kMean };

enum class Scoring { kNorm, kInverseEntropy };

std::string_view token_policy_name(TokenPolicy policy) noexcept;
std::string_view scoring_name(Scoring scoring) noexcept;
// Accept "first|last|mean" and "norm|entropy|inverse_entropy"; throw kInvalidArgument.
TokenPolicy parse_token_policy(std::string_view name);
Scoring parse_scoring(std::string_view name);

// Signals are always read at the query projection.
struct SignalConfig {
  std::optional<std::size_t> target_block;  // unset: last block
  TokenPolicy token_policy = TokenPolicy::kLast;
  Scoring scoring = Scoring::kNorm;

  // Throws kInvalidArgument when the block is out of range.
  std::size_t resolve_target_block(const ModelConfig& config) const;
};

// Lower bound applied to the entropy before taking its reciprocal.
inline constexpr double kEntropyFloor = 1e-12;

double score_norm(std::span<const double> projection);
// 1 / max(H(softmax(o)), kEntropyFloor), H in nats.
double score_inverse_entropy(std::span<const double> projection);
double score_projection(Scoring scoring, std::span<const double> projection);

// Reduces per-token projection outputs (tokens x d_model) to one vector.
Vector pool_tokens(const Matrix& per_token, TokenPolicy policy);

struct SignalEntry {
  std::string id;
  Vector projection;
  double score = 0.0;
};

struct SignalReport {
  std::uint64_t pool_revision = 0;
  TokenPolicy token_policy = TokenPolicy::kLast;
  std::size_t target_block = 0;
  Scoring scoring = Scoring::kNorm;
  std::vector<SignalEntry> entries;  // ascending id
};

// One forward pass with every adapter attached at every Q and V site at its
// own alpha. Each adapter's delta at (target block, Q) is captured per token,
// reduced by the token policy and scored. Throws kEmptyPool.
SignalReport probe(const Backbone& backbone, const PoolSnapshot& pool,
                   std::span<const Token> tokens, const SignalConfig& config);
SignalReport probe(const Backbone& backbone, const AdapterPool& pool,
                   std::span<const Token> tokens, const SignalConfig& config);

// Line-oriented text form:
//   signal-report v1
//   pool_revision <n>
//   token_policy <first|last|mean>
//   target_block <j>
//   scoring <norm|inverse_entropy>
//   entries <N>
//   adapter <id> <score> [<d> <o_1> ... <o_d>]
// Projection vectors are written only when requested. Numbers round-trip exactly.
std::string format_signal_report(const SignalReport& report, bool include_projections);
SignalReport parse_signal_report(std::string_view text);

}  // namespace loraroute
