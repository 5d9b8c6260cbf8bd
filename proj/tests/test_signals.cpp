// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "loraroute/signals.hpp"
#include "test_util.hpp"

namespace loraroute {
namespace {

using testing::error_code_of;
using testing::random_tokens;
using testing::random_vector;
using testing::tiny_config;

// Reference values computed at 60 significant digits by tests/oracles/entropy_oracle.py.
constexpr double kInvLn2 = 1.4426950408889634074;
constexpr double kInvLn4 = 0.72134752044448170368;
constexpr double kInvLn8 = 0.48089834696298780245;
constexpr double kInvLn64 = 0.24044917348149390123;
constexpr double kEntropyOf50And0 = 9.8366242246159806934e-21;

TEST(ScoreNorm, Examples) {
  EXPECT_EQ(score_norm(Vector{3, 4}), 5.0);
  EXPECT_EQ(score_norm(Vector{0, 0, 0, 0}), 0.0);
  EXPECT_EQ(score_norm(Vector{6, 8}), 2.0 * score_norm(Vector{3, 4}));
}

TEST(ScoreInverseEntropy, ConstantVectorsHitLowerBound) {
  const std::pair<std::size_t, double> cases[] = {{2, kInvLn2}, {4, kInvLn4}, {8, kInvLn8}, {64, kInvLn64}};
  for (const auto& [d, expected] : cases) {
    for (double c : {0.0, -2.5, 13.0}) {
      EXPECT_NEAR(score_inverse_entropy(Vector(d, c)), expected, 1e-9) << "d=" << d;
    }
  }
}

TEST(ScoreInverseEntropy, OneHotHitsFloor) {
  ASSERT_LT(kEntropyOf50And0, kEntropyFloor);
  const double s = score_inverse_entropy(Vector{50, 0});
  EXPECT_FALSE(std::isnan(s));
  EXPECT_EQ(s, 1.0 / kEntropyFloor);
  EXPECT_EQ(score_inverse_entropy(Vector{800, 0, -800}), 1.0 / kEntropyFloor);
}

TEST(ScoreInverseEntropy, WithinBounds) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + uniform_index(rng, 63);
    const double s = score_inverse_entropy(random_vector(rng, d, 1.0 + 30.0 * uniform01(rng)));
    EXPECT_GE(s, 1.0 / std::log(static_cast<double>(d)) - 1e-9);
    EXPECT_LE(s, 1.0 / kEntropyFloor);
  }
}

TEST(PoolTokens, Policies) {
  const Matrix single(1, 3, {1, 2, 3});
  for (TokenPolicy p : {TokenPolicy::kFirst, TokenPolicy::kLast, TokenPolicy::kMean})
    EXPECT_EQ(pool_tokens(single, p), (Vector{1, 2, 3}));
  const Matrix same(4, 2, {5, -1, 5, -1, 5, -1, 5, -1});
  EXPECT_EQ(pool_tokens(same, TokenPolicy::kMean), (Vector{5, -1}));
  const Matrix two(2, 2, {1, 0, 3, 4});
  EXPECT_EQ(pool_tokens(two, TokenPolicy::kFirst), (Vector{1, 0}));
  EXPECT_EQ(pool_tokens(two, TokenPolicy::kLast), (Vector{3, 4}));
  EXPECT_EQ(pool_tokens(two, TokenPolicy::kMean), (Vector{2, 2}));
  EXPECT_EQ(error_code_of([] { pool_tokens(Matrix(0, 2), TokenPolicy::kLast); }),
            ErrorCode::kEmptyInput);
}

TEST(PoolTokens, ParseNames) {
  EXPECT_EQ(parse_token_policy("mean"), TokenPolicy::kMean);
  EXPECT_EQ(parse_scoring("entropy"), Scoring::kInverseEntropy);
  EXPECT_EQ(parse_scoring("inverse_entropy"), Scoring::kInverseEntropy);
  EXPECT_EQ(error_code_of([] { parse_token_policy("middle"); }), ErrorCode::kInvalidArgument);
}

class ProbeTest : public ::testing::Test {
 protected:
  ModelConfig config = tiny_config();
  Backbone backbone = Backbone::initialize(config, 21);

  void fill(AdapterPool& pool, std::size_t n, std::uint64_t seed = 0) {
    for (std::size_t i = 0; i < n; ++i)
      pool.add(random_adapter("a" + std::to_string(100 + i), config, 2, 1.0, seed + i));
  }
};

TEST_F(ProbeTest, ExactlyOneForwardPassForAnyPoolSize) {
  const std::vector<Token> tokens{1, 5, 9, 2};
  for (std::size_t n : {1, 4, 16, 64}) {
    AdapterPool pool(config);
    fill(pool, n);
    const auto before = backbone.forward_passes();
    const SignalReport r = probe(backbone, pool, tokens, SignalConfig{});
    EXPECT_EQ(backbone.forward_passes() - before, 1u) << "N=" << n;
    EXPECT_EQ(r.entries.size(), n);
  }
}

TEST_F(ProbeTest, ReportShapeAndDefaults) {
  AdapterPool pool(config);
  fill(pool, 3);
  const SignalReport r = probe(backbone, pool, std::vector<Token>{4, 4, 7}, SignalConfig{});
  EXPECT_EQ(r.target_block, config.n_blocks - 1);
  EXPECT_EQ(r.token_policy, TokenPolicy::kLast);
  EXPECT_EQ(r.scoring, Scoring::kNorm);
  EXPECT_EQ(r.pool_revision, pool.revision());
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    EXPECT_EQ(r.entries[i].id, pool.ids()[i]);
    EXPECT_EQ(r.entries[i].projection.size(), config.d_model);
    EXPECT_TRUE(std::isfinite(r.entries[i].score));
    EXPECT_GE(r.entries[i].score, 0.0);
  }
  SignalConfig bad;
  bad.target_block = config.n_blocks;
  EXPECT_EQ(error_code_of([&] { probe(backbone, pool, std::vector<Token>{1}, bad); }),
            ErrorCode::kInvalidArgument);
  AdapterPool empty(config);
  EXPECT_EQ(error_code_of([&] { probe(backbone, empty, std::vector<Token>{1}, SignalConfig{}); }),
            ErrorCode::kEmptyPool);
}

TEST_F(ProbeTest, IdenticalCopiesScoreEqually) {
  const auto a = random_adapter("x", config, 3, 1.0, 5, 0.5);
  AdapterPool pool(config);
  for (int i = 0; i < 5; ++i) pool.add(a.with_id("copy" + std::to_string(i)));
  for (Scoring s : {Scoring::kNorm, Scoring::kInverseEntropy}) {
    SignalConfig cfg;
    cfg.scoring = s;
    const SignalReport r = probe(backbone, pool, std::vector<Token>{3, 8, 1, 1}, cfg);
    for (const auto& e : r.entries) EXPECT_NEAR(e.score, r.entries[0].score, 1e-12);
  }
}

TEST_F(ProbeTest, ZeroDownAtTargetScoresZero) {
  auto factors = random_adapter("z", config, 2, 1.0, 9).all_factors();
  const std::size_t target = config.n_blocks - 1;
  auto& f = factors[target * kNumSites + static_cast<std::size_t>(Site::kQ)];
  f.down = Matrix(f.down.rows(), f.down.cols());
  AdapterPool pool(config);
  pool.add(LoraAdapter("z", config.d_model, config.n_blocks, 2, 1.0, factors));
  fill(pool, 2);
  const SignalReport r = probe(backbone, pool, std::vector<Token>{2, 3}, SignalConfig{});
  EXPECT_EQ(r.entries.back().id, "z");
  EXPECT_EQ(r.entries.back().score, 0.0);
}

TEST_F(ProbeTest, FirstAndLastDifferOnTwoTokenInput) {
  AdapterPool pool(config);
  fill(pool, 2);
  SignalConfig first;
  first.token_policy = TokenPolicy::kFirst;
  SignalConfig last;
  const std::vector<Token> tokens{0, 17};
  const SignalReport rf = probe(backbone, pool, tokens, first);
  const SignalReport rl = probe(backbone, pool, tokens, last);
  EXPECT_NE(rf.entries[0].projection, rl.entries[0].projection);
  EXPECT_NE(rf.entries[0].score, rl.entries[0].score);
  // A one-token input makes the policies coincide.
  const std::vector<Token> one{17};
  SignalConfig mean;
  mean.token_policy = TokenPolicy::kMean;
  const auto p1 = probe(backbone, pool, one, first).entries[0].projection;
  EXPECT_EQ(p1, probe(backbone, pool, one, last).entries[0].projection);
  EXPECT_EQ(p1, probe(backbone, pool, one, mean).entries[0].projection);
}

TEST_F(ProbeTest, DeterministicAtFixedRevision) {
  AdapterPool pool(config);
  fill(pool, 6);
  std::mt19937_64 rng(3);
  const auto tokens = random_tokens(rng, 9, config.vocab_size);
  SignalConfig cfg;
  cfg.token_policy = TokenPolicy::kMean;
  const SignalReport a = probe(backbone, pool, tokens, cfg);
  const SignalReport b = probe(backbone, pool, tokens, cfg);
  EXPECT_EQ(format_signal_report(a, true), format_signal_report(b, true));
}

TEST_F(ProbeTest, ScaleMonotonicityOnCapturedProjections) {
  AdapterPool pool(config);
  fill(pool, 8, 40);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = random_tokens(rng, 5, config.vocab_size);
    const SignalReport r = probe(backbone, pool, tokens, SignalConfig{});
    const std::size_t i = uniform_index(rng, r.entries.size());
    const double c = 1.0 + 4.0 * uniform01(rng);
    Vector scaled = r.entries[i].projection;
    for (double& x : scaled) x *= c;
    const double s = score_norm(scaled);
    EXPECT_NEAR(s, c * r.entries[i].score, 1e-12 * s);
    std::size_t rank_before = 0, rank_after = 0;
    for (std::size_t j = 0; j < r.entries.size(); ++j) {
      if (j == i) continue;
      rank_before += r.entries[j].score > r.entries[i].score;
      rank_after += r.entries[j].score > s;
    }
    EXPECT_LE(rank_after, rank_before);
  }
}

TEST_F(ProbeTest, PoolCompositionOnlyMattersDownstreamOfBlockZero) {
  AdapterPool small(config);
  fill(small, 2);
  AdapterPool large(config);
  fill(large, 2);
  large.add(random_adapter("zz", config, 2, 1.0, 999, 1.0));
  const std::vector<Token> tokens{6, 2, 11};
  SignalConfig block0;
  block0.target_block = 0;
  const auto s0 = probe(backbone, small, tokens, block0);
  const auto l0 = probe(backbone, large, tokens, block0);
  EXPECT_EQ(s0.entries[0].projection, l0.entries[0].projection);
  const auto sl = probe(backbone, small, tokens, SignalConfig{});
  const auto ll = probe(backbone, large, tokens, SignalConfig{});
  EXPECT_NE(sl.entries[0].projection, ll.entries[0].projection);
}

TEST(SignalReportText, RoundTrip) {
  SignalReport r;
  r.pool_revision = 42;
  r.token_policy = TokenPolicy::kMean;
  r.target_block = 3;
  r.scoring = Scoring::kInverseEntropy;
  r.entries = {{"alpha", {0.1, -1.0 / 3.0, 1e-300}, 0.7071067811865476},
               {"beta", {5e300, 0.0, -0.0}, 1.0 / kEntropyFloor}};
  const SignalReport back = parse_signal_report(format_signal_report(r, true));
  EXPECT_EQ(back.pool_revision, 42u);
  EXPECT_EQ(back.token_policy, TokenPolicy::kMean);
  EXPECT_EQ(back.target_block, 3u);
  EXPECT_EQ(back.scoring, Scoring::kInverseEntropy);
  ASSERT_EQ(back.entries.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.entries[i].id, r.entries[i].id);
    EXPECT_EQ(back.entries[i].score, r.entries[i].score);
    EXPECT_EQ(back.entries[i].projection, r.entries[i].projection);
  }
  const SignalReport brief = parse_signal_report(format_signal_report(r, false));
  EXPECT_TRUE(brief.entries[0].projection.empty());
  EXPECT_EQ(brief.entries[1].score, r.entries[1].score);
  EXPECT_EQ(error_code_of([] { parse_signal_report("signal-report v9\n"); }), ErrorCode::kMalformed);
}

}  // namespace
}  // namespace loraroute
