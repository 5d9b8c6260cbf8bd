// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/signals.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "loraroute/error.hpp"

namespace loraroute {

std::string_view token_policy_name(TokenPolicy policy) noexcept {
  switch (policy) {
    case TokenPolicy::kFirst: return "first";
    case TokenPolicy::kLast: return "last";
    case TokenPolicy::kMean: return "mean";
  }
  return "last";
}

std::string_view scoring_name(Scoring scoring) noexcept {
  return scoring == Scoring::kNorm ? "norm" : "inverse_entropy";
}

TokenPolicy parse_token_policy(std::string_view name) {
  if (name == "first") return TokenPolicy::kFirst;
  if (name == "last") return TokenPolicy::kLast;
  if (name == "mean") return TokenPolicy::kMean;
  throw Error(ErrorCode::kInvalidArgument, "unknown token policy: " + std::string(name));
}

Scoring parse_scoring(std::string_view name) {
  if (name == "norm" || name == "l2") return Scoring::kNorm;
  if (name == "entropy" || name == "inverse_entropy") return Scoring::kInverseEntropy;
  throw Error(ErrorCode::kInvalidArgument, "unknown scoring: " + std::string(name));
}

std::size_t SignalConfig::resolve_target_block(const ModelConfig& config) const {
  const std::size_t block = target_block.value_or(config.n_blocks - 1);
  if (block >= config.n_blocks) {
    throw Error(ErrorCode::kInvalidArgument, "target block " + std::to_string(block) +
                                                 " out of range for " +
                                                 std::to_string(config.n_blocks) + " blocks");
  }
  return block;
}

double score_norm(std::span<const double> projection) { return l2_norm(projection); }

double score_inverse_entropy(std::span<const double> projection) {
  const Vector p = softmax(projection);
  return 1.0 / std::max(shannon_entropy(p), kEntropyFloor);
}

double score_projection(Scoring scoring, std::span<const double> projection) {
  return scoring == Scoring::kNorm ? score_norm(projection) : score_inverse_entropy(projection);
}

Vector pool_tokens(const Matrix& per_token, TokenPolicy policy) {
  if (per_token.rows() == 0) {
    throw Error(ErrorCode::kEmptyInput, "pool_tokens: no token positions captured");
  }
  switch (policy) {
    case TokenPolicy::kFirst: {
      const auto r = per_token.row(0);
      return {r.begin(), r.end()};
    }
    case TokenPolicy::kLast: {
      const auto r = per_token.row(per_token.rows() - 1);
      return {r.begin(), r.end()};
    }
    case TokenPolicy::kMean: {
      Vector out(per_token.cols(), 0.0);
      for (std::size_t t = 0; t < per_token.rows(); ++t) axpy(1.0, per_token.row(t), out);
      for (double& x : out) x /= static_cast<double>(per_token.rows());
      return out;
    }
  }
  return {};
}

SignalReport probe(const Backbone& backbone, const PoolSnapshot& pool,
                   std::span<const Token> tokens, const SignalConfig& config) {
  if (pool.adapters.empty()) throw Error(ErrorCode::kEmptyPool, "probe: adapter pool is empty");
  const ModelConfig& mc = backbone.config();
  const std::size_t target = config.resolve_target_block(mc);
  backbone.validate_tokens(tokens);
  for (const auto& a : pool.adapters) {
    if (a->d_model() != mc.d_model || a->n_blocks() != mc.n_blocks) {
      throw Error(ErrorCode::kShapeMismatch, "probe: adapter " + a->id() +
                                                 " does not match the backbone shape");
    }
  }

  const std::size_t n = pool.adapters.size();
  std::vector<Matrix> captured(n, Matrix(tokens.size(), mc.d_model));

  HookSet hooks;
  for (std::size_t j = 0; j < mc.n_blocks; ++j) {
    for (Site site : kAllSites) {
      if (j == target && site == Site::kQ) {
        hooks.push_back({j, site, [&pool, &captured](const HookCall& call, std::span<double> delta) {
                           for (std::size_t i = 0; i < pool.adapters.size(); ++i) {
                             auto o = captured[i].row(call.position);
                             std::fill(o.begin(), o.end(), 0.0);
                             pool.adapters[i]->accumulate_delta(call.block, call.site, call.input,
                                                                1.0, o);
                             axpy(1.0, o, delta);
                           }
                         }});
      } else {
        hooks.push_back({j, site, [&pool](const HookCall& call, std::span<double> delta) {
                           for (const auto& a : pool.adapters) {
                             a->accumulate_delta(call.block, call.site, call.input, 1.0, delta);
                           }
                         }});
      }
    }
  }

  DecodeSession session(backbone, hooks);
  session.append(tokens);

  SignalReport report;
  report.pool_revision = pool.revision;
  report.token_policy = config.token_policy;
  report.target_block = target;
  report.scoring = config.scoring;
  report.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SignalEntry e;
    e.id = pool.adapters[i]->id();
    e.projection = pool_tokens(captured[i], config.token_policy);
    e.score = score_projection(config.scoring, e.projection);
    report.entries.push_back(std::move(e));
  }
  return report;
}

SignalReport probe(const Backbone& backbone, const AdapterPool& pool,
                   std::span<const Token> tokens, const SignalConfig& config) {
  return probe(backbone, pool.snapshot(), tokens, config);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kMalformed, "signal report: bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kMalformed, "signal report: bad integer '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string format_signal_report(const SignalReport& report, bool include_projections) {
  std::ostringstream out;
  out << "signal-report v1\n";
  out << "pool_revision " << report.pool_revision << '\n';
  out << "token_policy " << token_policy_name(report.token_policy) << '\n';
  out << "target_block " << report.target_block << '\n';
  out << "scoring " << scoring_name(report.scoring) << '\n';
  out << "entries " << report.entries.size() << '\n';
  for (const auto& e : report.entries) {
    if (e.id.find_first_of(" \t\r\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "signal report: id contains whitespace: " + e.id);
    }
    out << "adapter " << e.id << ' ' << format_double(e.score);
    if (include_projections) {
      out << ' ' << e.projection.size();
      for (double x : e.projection) out << ' ' << format_double(x);
    }
    out << '\n';
  }
  return out.str();
}

SignalReport parse_signal_report(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto fail = [](const std::string& msg) -> void {
    throw Error(ErrorCode::kMalformed, "signal report: " + msg);
  };
  auto expect_key = [&](const std::string& key) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) fail("expected '" + key + "'");
    return v;
  };
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "signal-report" || version != "v1") {
    fail("missing 'signal-report v1' header");
  }
  SignalReport r;
  r.pool_revision = parse_uint(expect_key("pool_revision"));
  r.token_policy = parse_token_policy(expect_key("token_policy"));
  r.target_block = parse_uint(expect_key("target_block"));
  r.scoring = parse_scoring(expect_key("scoring"));
  const std::uint64_t count = parse_uint(expect_key("entries"));
  std::string line;
  std::getline(in, line);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) fail("missing adapter line");
    std::istringstream ls(line);
    std::string tag, id, score;
    if (!(ls >> tag >> id >> score) || tag != "adapter") fail("bad adapter line: " + line);
    SignalEntry e;
    e.id = id;
    e.score = parse_double(score);
    std::string dim;
    if (ls >> dim) {
      const std::uint64_t d = parse_uint(dim);
      e.projection.reserve(d);
      std::string x;
      for (std::uint64_t c = 0; c < d; ++c) {
        if (!(ls >> x)) fail("projection shorter than declared for " + id);
        e.projection.push_back(parse_double(x));
      }
    }
    r.entries.push_back(std::move(e));
  }
  return r;
}

}  // namespace loraroute
