// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/backbone.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "loraroute/error.hpp"

namespace loraroute {

std::string_view site_name(Site site) noexcept { return site == Site::kQ ? "Q" : "V"; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (d_model == 0 || n_blocks == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 ||
      max_seq_len == 0) {
    fail("model config: all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    fail("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
}

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = uniform_symmetric(rng, scale);
  return m;
}

}  // namespace

Backbone::Backbone(ModelConfig config, BackboneWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::kShapeMismatch, "backbone weights: bad shape for " + what);
  };
  auto is = [](const Matrix& m, std::size_t r, std::size_t c) {
    return m.rows() == r && m.cols() == c;
  };
  check(is(weights_.token_embedding, config_.vocab_size, d), "token_embedding");
  check(is(weights_.position_embedding, config_.max_seq_len, d), "position_embedding");
  check(is(weights_.unembedding, config_.vocab_size, d), "unembedding");
  check(weights_.final_gain.size() == d && weights_.final_bias.size() == d, "final norm");
  check(weights_.blocks.size() == config_.n_blocks, "block count");
  for (const auto& b : weights_.blocks) {
    check(b.ln1_gain.size() == d && b.ln1_bias.size() == d && b.ln2_gain.size() == d &&
              b.ln2_bias.size() == d,
          "block layer norm");
    check(is(b.wq, d, d) && is(b.wk, d, d) && is(b.wv, d, d) && is(b.wo, d, d),
          "attention projections");
    check(is(b.w1, config_.d_ff, d) && b.b1.size() == config_.d_ff && is(b.w2, d, config_.d_ff) &&
              b.b2.size() == d,
          "feed-forward");
  }
}

Backbone::Backbone(const Backbone& other) : config_(other.config_), weights_(other.weights_) {}

Backbone& Backbone::operator=(const Backbone& other) {
  config_ = other.config_;
  weights_ = other.weights_;
  forward_passes_ = 0;
  return *this;
}

Backbone::Backbone(Backbone&& other) noexcept
    : config_(other.config_),
      weights_(std::move(other.weights_)),
      forward_passes_(other.forward_passes_.load()) {}

Backbone& Backbone::operator=(Backbone&& other) noexcept {
  config_ = other.config_;
  weights_ = std::move(other.weights_);
  forward_passes_ = other.forward_passes_.load();
  return *this;
}

Backbone Backbone::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(d));
  // Output projections of both residual branches are shrunk by 1/sqrt(2 * n_blocks).
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_blocks));

  BackboneWeights w;
  w.token_embedding = random_matrix(rng, config.vocab_size, d, 1.0);
  w.position_embedding = random_matrix(rng, config.max_seq_len, d, 0.1);
  w.blocks.reserve(config.n_blocks);
  for (std::size_t j = 0; j < config.n_blocks; ++j) {
    BlockWeights b;
    b.ln1_gain.assign(d, 1.0);
    b.ln1_bias.assign(d, 0.0);
    b.wq = random_matrix(rng, d, d, proj_scale);
    b.wk = random_matrix(rng, d, d, proj_scale);
    b.wv = random_matrix(rng, d, d, proj_scale);
    b.wo = random_matrix(rng, d, d, proj_scale * residual_scale);
    b.ln2_gain.assign(d, 1.0);
    b.ln2_bias.assign(d, 0.0);
    b.w1 = random_matrix(rng, config.d_ff, d, proj_scale);
    b.b1.assign(config.d_ff, 0.0);
    b.w2 = random_matrix(rng, d, config.d_ff,
                         residual_scale / std::sqrt(static_cast<double>(config.d_ff)));
    b.b2.assign(d, 0.0);
    w.blocks.push_back(std::move(b));
  }
  w.final_gain.assign(d, 1.0);
  w.final_bias.assign(d, 0.0);
  w.unembedding = random_matrix(rng, config.vocab_size, d, proj_scale);
  return Backbone(config, std::move(w));
}

void Backbone::validate_tokens(std::span<const Token> tokens) const {
  if (tokens.empty()) throw Error(ErrorCode::kEmptyInput, "token sequence is empty");
  if (tokens.size() > config_.max_seq_len) {
    throw Error(ErrorCode::kSequenceTooLong,
                "sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                    std::to_string(config_.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                      " is outside vocab_size " + std::to_string(config_.vocab_size));
    }
  }
}

HiddenTrace Backbone::forward(std::span<const Token> tokens, const HookSet& hooks) const {
  validate_tokens(tokens);
  DecodeSession session(*this, hooks, /*record_trace=*/true);
  session.append(tokens);
  return session.take_trace();
}

GenerateResult Backbone::generate(std::span<const Token> prompt, const HookSet& hooks,
                                  std::size_t max_new, const GenerateOptions& options) const {
  validate_tokens(prompt);
  if (prompt.size() + max_new > config_.max_seq_len) {
    throw Error(ErrorCode::kContextOverflow,
                "prompt length " + std::to_string(prompt.size()) + " + max_new " +
                    std::to_string(max_new) + " exceeds max_seq_len " +
                    std::to_string(config_.max_seq_len));
  }
  GenerateResult result;
  if (max_new == 0) return result;

  using Clock = std::chrono::steady_clock;
  DecodeSession session(*this, hooks);
  auto start = Clock::now();
  Matrix logits = session.append(prompt);
  ++result.forward_passes;
  for (std::size_t step = 0; step < max_new; ++step) {
    const auto next = static_cast<Token>(argmax(logits.row(logits.rows() - 1)));
    result.tokens.push_back(next);
    const bool stop = (options.stop_token && next == *options.stop_token) || step + 1 == max_new;
    if (!stop) {
      logits = session.append(std::span<const Token>(&next, 1));
      ++result.forward_passes;
    }
    const auto now = Clock::now();
    result.per_token_ms.push_back(std::chrono::duration<double, std::milli>(now - start).count());
    start = now;
    if (stop) break;
  }
  return result;
}

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> out) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

DecodeSession::DecodeSession(const Backbone& backbone, const HookSet& hooks, bool record_trace)
    : backbone_(backbone),
      hooks_by_site_(backbone.config().n_blocks * kNumSites),
      record_trace_(record_trace),
      keys_(backbone.config().n_blocks),
      values_(backbone.config().n_blocks),
      trace_inputs_(record_trace ? backbone.config().n_blocks : 0),
      delta_scratch_(backbone.config().d_model) {
  const auto& cfg = backbone.config();
  for (const auto& hook : hooks) {
    if (hook.block >= cfg.n_blocks) {
      throw Error(ErrorCode::kInvalidArgument, "hook block " + std::to_string(hook.block) +
                                                   " out of range for " +
                                                   std::to_string(cfg.n_blocks) + " blocks");
    }
    if (!hook.fn) throw Error(ErrorCode::kInvalidArgument, "hook has no callback");
    hooks_by_site_[hook.block * kNumSites + static_cast<std::size_t>(hook.site)].push_back(
        &hook.fn);
  }
  for (std::size_t j = 0; j < cfg.n_blocks; ++j) {
    keys_[j].reserve(cfg.max_seq_len * cfg.d_model);
    values_[j].reserve(cfg.max_seq_len * cfg.d_model);
  }
}

void DecodeSession::run_hooks(std::size_t block, Site site, std::size_t position,
                              std::span<const double> input, std::span<double> output) {
  const auto& fns = hooks_by_site_[block * kNumSites + static_cast<std::size_t>(site)];
  if (fns.empty()) return;
  std::fill(delta_scratch_.begin(), delta_scratch_.end(), 0.0);
  const HookCall call{block, site, position, input, output};
  for (const HookFn* fn : fns) (*fn)(call, delta_scratch_);
  for (std::size_t i = 0; i < output.size(); ++i) output[i] += delta_scratch_[i];
}

Matrix DecodeSession::append(std::span<const Token> tokens) {
  const auto& cfg = backbone_.config();
  const auto& w = backbone_.weights();
  if (tokens.empty()) throw Error(ErrorCode::kEmptyInput, "append: no tokens");
  if (length_ + tokens.size() > cfg.max_seq_len) {
    throw Error(ErrorCode::kSequenceTooLong,
                "sequence length " + std::to_string(length_ + tokens.size()) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (Token t : tokens) {
    if (t >= cfg.vocab_size) {
      throw Error(ErrorCode::kTokenOutOfRange, "token " + std::to_string(t) +
                                                   " is outside vocab_size " +
                                                   std::to_string(cfg.vocab_size));
    }
  }
  backbone_.forward_passes_.fetch_add(1);

  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    const auto tok = w.token_embedding.row(tokens[i]);
    const auto pos = w.position_embedding.row(length_ + i);
    for (std::size_t c = 0; c < d; ++c) row[c] = tok[c] + pos[c];
  }

  Matrix normed(n, d), query(n, d), context(n, d), projected(n, d);
  Matrix ffn_in(n, d);
  Vector hidden(cfg.d_ff), ffn_out(d), scores(length_ + n);
  for (std::size_t j = 0; j < cfg.n_blocks; ++j) {
    const BlockWeights& bw = w.blocks[j];
    if (record_trace_) {
      trace_inputs_[j].insert(trace_inputs_[j].end(), x.data().begin(), x.data().end());
    }
    auto& keys = keys_[j];
    auto& values = values_[j];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t position = length_ + i;
      layer_norm(x.row(i), bw.ln1_gain, bw.ln1_bias, normed.row(i));
      matvec_into(bw.wq, normed.row(i), query.row(i));
      run_hooks(j, Site::kQ, position, normed.row(i), query.row(i));

      keys.resize(keys.size() + d);
      matvec_into(bw.wk, normed.row(i), std::span<double>(keys).last(d));
      values.resize(values.size() + d);
      auto value_row = std::span<double>(values).last(d);
      matvec_into(bw.wv, normed.row(i), value_row);
      run_hooks(j, Site::kV, position, normed.row(i), value_row);
    }

    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t position = length_ + i;
      auto ctx = context.row(i);
      std::fill(ctx.begin(), ctx.end(), 0.0);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const auto q = query.row(i).subspan(h * hd, hd);
        double peak = -INFINITY;
        for (std::size_t t = 0; t <= position; ++t) {
          scores[t] = dot(q, std::span<const double>(keys).subspan(t * d + h * hd, hd)) * attn_scale;
          peak = std::max(peak, scores[t]);
        }
        double total = 0.0;
        for (std::size_t t = 0; t <= position; ++t) {
          scores[t] = std::exp(scores[t] - peak);
          total += scores[t];
        }
        auto ctx_head = ctx.subspan(h * hd, hd);
        for (std::size_t t = 0; t <= position; ++t) {
          axpy(scores[t] / total, std::span<const double>(values).subspan(t * d + h * hd, hd),
               ctx_head);
        }
      }
      matvec_into(bw.wo, ctx, projected.row(i));
      axpy(1.0, projected.row(i), x.row(i));

      layer_norm(x.row(i), bw.ln2_gain, bw.ln2_bias, ffn_in.row(i));
      matvec_into(bw.w1, ffn_in.row(i), hidden);
      for (std::size_t c = 0; c < cfg.d_ff; ++c) hidden[c] = std::max(hidden[c] + bw.b1[c], 0.0);
      matvec_into(bw.w2, hidden, ffn_out);
      auto xr = x.row(i);
      for (std::size_t c = 0; c < d; ++c) xr[c] += ffn_out[c] + bw.b2[c];
    }
  }

  Matrix logits(n, cfg.vocab_size);
  Vector final_row(d);
  for (std::size_t i = 0; i < n; ++i) {
    layer_norm(x.row(i), w.final_gain, w.final_bias, final_row);
    matvec_into(w.unembedding, final_row, logits.row(i));
    if (record_trace_) trace_final_.insert(trace_final_.end(), final_row.begin(), final_row.end());
  }
  if (record_trace_) {
    trace_logits_.insert(trace_logits_.end(), logits.data().begin(), logits.data().end());
  }
  length_ += n;
  return logits;
}

HiddenTrace DecodeSession::take_trace() {
  const auto& cfg = backbone_.config();
  HiddenTrace trace;
  for (auto& rows : trace_inputs_) {
    trace.block_inputs.emplace_back(length_, cfg.d_model, std::move(rows));
  }
  trace.final_hidden = Matrix(length_, cfg.d_model, std::move(trace_final_));
  trace.logits = Matrix(length_, cfg.vocab_size, std::move(trace_logits_));
  trace_inputs_.clear();
  trace_final_.clear();
  trace_logits_.clear();
  return trace;
}

}  // namespace loraroute
