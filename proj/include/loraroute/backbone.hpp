// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "loraroute/numcore.hpp"

namespace loraroute {

using Token = std::uint32_t;

// Projections that accept adapter deltas. K, O and the FFN are not hookable.
enum class Site : std::uint8_t { kQ = 0, kV = 1 };
inline constexpr std::size_t kNumSites = 2;
inline constexpr Site kAllSites[kNumSites] = {Site::kQ, Site::kV};

std::string_view site_name(Site site) noexcept;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 80;
  std::size_t max_seq_len = 256;

  // Throws kInvalidConfig.
  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlockWeights {
  Vector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;  // d_model x d_model, y = W x
  Vector ln2_gain, ln2_bias;
  Matrix w1;  // d_ff x d_model
  Vector b1;
  Matrix w2;  // d_model x d_ff
  Vector b2;

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct BackboneWeights {
  Matrix token_embedding;     // vocab x d_model
  Matrix position_embedding;  // max_seq_len x d_model
  std::vector<BlockWeights> blocks;
  Vector final_gain, final_bias;
  Matrix unembedding;  // vocab x d_model

  friend bool operator==(const BackboneWeights&, const BackboneWeights&) = default;
};

// What a hook sees for one token at one projection. `input` is the
// projection's input (the layer-normed hidden state) and `base_output` the
// frozen projection W * input before any delta is added.
struct HookCall {
  std::size_t block;
  Site site;
  std::size_t position;
  std::span<const double> input;
  std::span<const double> base_output;
};

// A hook adds its delta for the token into `delta` (pre-zeroed, d_model wide).
// Deltas of all hooks at a site are summed and added to the projection output
// before attention is computed.
using HookFn = std::function<void(const HookCall&, std::span<double> delta)>;

struct ProjectionHook {
  std::size_t block = 0;
  Site site = Site::kQ;
  HookFn fn;
};

using HookSet = std::vector<ProjectionHook>;

struct HiddenTrace {
  std::vector<Matrix> block_inputs;  // per block: tokens x d_model, residual entering the block
  Matrix final_hidden;               // tokens x d_model, after the final layer norm
  Matrix logits;                     // tokens x vocab_size
};

struct GenerateOptions {
  std::optional<Token> stop_token;
};

struct GenerateResult {
  std::vector<Token> tokens;
  // Wall-clock per emitted token; entry 0 includes the prefill.
  std::vector<double> per_token_ms;
  std::uint64_t forward_passes = 0;
};

class DecodeSession;

// Minimal pre-norm decoder-only transformer with frozen weights.
class Backbone {
 public:
  Backbone(ModelConfig config, BackboneWeights weights);
  Backbone(const Backbone& other);
  Backbone& operator=(const Backbone& other);
  Backbone(Backbone&& other) noexcept;
  Backbone& operator=(Backbone&& other) noexcept;

  // Deterministic weights: symmetric uniform, 1/sqrt(fan_in) for projections,
  // with the attention output and second FFN matrix further scaled by
  // 1/sqrt(2 * n_blocks). Token embeddings use 1, positions 0.1.
  static Backbone initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const BackboneWeights& weights() const noexcept { return weights_; }

  // One forward pass over the whole sequence with causal attention.
  HiddenTrace forward(std::span<const Token> tokens, const HookSet& hooks = {}) const;

  // Greedy decoding with a KV cache. Requires prompt.size() + max_new <= max_seq_len.
  GenerateResult generate(std::span<const Token> prompt, const HookSet& hooks,
                          std::size_t max_new, const GenerateOptions& options = {}) const;

  // Instrumentation: number of forward passes (prefill or decode step) executed
  // against this backbone so far.
  std::uint64_t forward_passes() const noexcept { return forward_passes_.load(); }

  // Throws kEmptyInput, kTokenOutOfRange or kSequenceTooLong.
  void validate_tokens(std::span<const Token> tokens) const;

  std::vector<std::uint8_t> serialize() const;
  static Backbone deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Backbone load(const std::filesystem::path& path);

  // FNV-1a of the serialized form.
  std::uint64_t content_hash() const;

 private:
  friend class DecodeSession;

  ModelConfig config_;
  BackboneWeights weights_;
  mutable std::atomic<std::uint64_t> forward_passes_{0};
};

// Incremental forward state (per-block key/value cache). Each append() is one
// forward pass. Borrows the backbone and hooks; both must outlive the session.
class DecodeSession {
 public:
  DecodeSession(const Backbone& backbone, const HookSet& hooks, bool record_trace = false);

  // Runs `tokens` at the next positions and returns their logits rows.
  Matrix append(std::span<const Token> tokens);

  std::size_t length() const noexcept { return length_; }

  // Only meaningful when constructed with record_trace.
  HiddenTrace take_trace();

 private:
  void run_hooks(std::size_t block, Site site, std::size_t position,
                 std::span<const double> input, std::span<double> output);

  const Backbone& backbone_;
  std::vector<std::vector<const HookFn*>> hooks_by_site_;  // [block * kNumSites + site]
  bool record_trace_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per block, length_ x d_model
  std::vector<std::vector<double>> values_;  // per block, length_ x d_model
  std::vector<std::vector<double>> trace_inputs_;
  std::vector<double> trace_final_;
  std::vector<double> trace_logits_;
  Vector delta_scratch_;
};

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> out);

inline constexpr double kLayerNormEpsilon = 1e-5;

std::size_t argmax(std::span<const double> v);

}  // namespace loraroute
