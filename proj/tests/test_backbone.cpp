// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/binary_io.hpp"
#include "test_util.hpp"

namespace loraroute {
namespace {

using testing::error_code_of;
using testing::max_abs_diff;
using testing::random_tokens;
using testing::tiny_config;

void expect_traces_near(const HiddenTrace& a, const HiddenTrace& b, double tol) {
  ASSERT_EQ(a.block_inputs.size(), b.block_inputs.size());
  for (std::size_t j = 0; j < a.block_inputs.size(); ++j)
    EXPECT_LE(max_abs_diff(a.block_inputs[j], b.block_inputs[j]), tol) << "block " << j;
  EXPECT_LE(max_abs_diff(a.final_hidden, b.final_hidden), tol);
  EXPECT_LE(max_abs_diff(a.logits, b.logits), tol);
}

// A position-dependent delta that depends on the hook input nonlinearly.
HookFn squared_input_hook(double scale) {
  return [scale](const HookCall& call, std::span<double> delta) {
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta[i] += scale * call.input[i] * call.input[(i + 1) % delta.size()];
  };
}

TEST(Backbone, InitIsDeterministicAndSeedSensitive) {
  const auto c = tiny_config();
  EXPECT_EQ(Backbone::initialize(c, 7).serialize(), Backbone::initialize(c, 7).serialize());
  EXPECT_NE(Backbone::initialize(c, 1).weights(), Backbone::initialize(c, 2).weights());
}

TEST(Backbone, RejectsIndivisibleHeads) {
  ModelConfig c = tiny_config();
  c.d_model = 8;
  c.n_heads = 3;
  EXPECT_EQ(error_code_of([&] { Backbone::initialize(c, 1); }), ErrorCode::kInvalidConfig);
  c.n_heads = 2;
  c.n_blocks = 0;
  EXPECT_EQ(error_code_of([&] { Backbone::initialize(c, 1); }), ErrorCode::kInvalidConfig);
}

TEST(Backbone, TraceShapes) {
  const auto c = tiny_config();
  const Backbone b = Backbone::initialize(c, 3);
  const std::vector<Token> tokens{1, 2, 3, 4, 5};
  const HiddenTrace t = b.forward(tokens);
  ASSERT_EQ(t.block_inputs.size(), c.n_blocks);
  for (const Matrix& m : t.block_inputs) {
    EXPECT_EQ(m.rows(), tokens.size());
    EXPECT_EQ(m.cols(), c.d_model);
  }
  EXPECT_EQ(t.logits.rows(), tokens.size());
  EXPECT_EQ(t.logits.cols(), c.vocab_size);
  EXPECT_TRUE(all_finite(t.logits.data()));
}

TEST(Backbone, RejectsBadTokens) {
  const auto c = tiny_config();
  const Backbone b = Backbone::initialize(c, 3);
  EXPECT_EQ(error_code_of([&] { b.forward(std::vector<Token>{}); }), ErrorCode::kEmptyInput);
  EXPECT_EQ(error_code_of([&] { b.forward(std::vector<Token>{1, static_cast<Token>(c.vocab_size)}); }),
            ErrorCode::kTokenOutOfRange);
  EXPECT_EQ(error_code_of([&] { b.forward(std::vector<Token>(c.max_seq_len + 1, 0)); }),
            ErrorCode::kSequenceTooLong);
}

TEST(Backbone, EmptyAndZeroHooksMatchBase) {
  const Backbone b = Backbone::initialize(tiny_config(), 5);
  const std::vector<Token> tokens{3, 1, 4, 1, 5, 9};
  const HiddenTrace base = b.forward(tokens);
  expect_traces_near(base, b.forward(tokens, HookSet{}), 0.0);
  HookSet zero;
  for (std::size_t j = 0; j < 2; ++j)
    for (Site s : kAllSites) zero.push_back({j, s, [](const HookCall&, std::span<double>) {}});
  expect_traces_near(base, b.forward(tokens, zero), 1e-12);
}

TEST(Backbone, HookAdditivity) {
  const Backbone b = Backbone::initialize(tiny_config(), 5);
  std::mt19937_64 rng(1);
  for (Site site : kAllSites) {
    for (std::size_t block = 0; block < 2; ++block) {
      const auto tokens = random_tokens(rng, 7, 24);
      const HookFn f = squared_input_hook(0.3);
      const HookFn g = [](const HookCall& call, std::span<double> delta) {
        for (std::size_t i = 0; i < delta.size(); ++i)
          delta[i] += 0.1 * call.base_output[i] * static_cast<double>(call.position + 1);
      };
      const HookSet pair{{block, site, f}, {block, site, g}};
      const HookSet summed{{block, site, [&](const HookCall& call, std::span<double> delta) {
                              f(call, delta);
                              g(call, delta);
                            }}};
      expect_traces_near(b.forward(tokens, pair), b.forward(tokens, summed), 1e-12);
    }
  }
}

TEST(Backbone, Causality) {
  const Backbone b = Backbone::initialize(tiny_config(), 9);
  std::mt19937_64 rng(2);
  const HookSet hooks{{1, Site::kQ, squared_input_hook(0.2)}};
  for (int trial = 0; trial < 10; ++trial) {
    const auto tokens = random_tokens(rng, 12, 24);
    const HiddenTrace full = b.forward(tokens, hooks);
    for (std::size_t p = 1; p <= tokens.size(); ++p) {
      const HiddenTrace prefix = b.forward(std::span(tokens).first(p), hooks);
      for (std::size_t i = 0; i < p; ++i)
        EXPECT_LE(max_abs_diff(prefix.logits.row(i), full.logits.row(i)), 1e-12);
    }
  }
}

TEST(Backbone, DecodeSessionMatchesFullForward) {
  const Backbone b = Backbone::initialize(tiny_config(), 9);
  std::mt19937_64 rng(4);
  const HookSet hooks{{0, Site::kV, squared_input_hook(0.5)}};
  const auto tokens = random_tokens(rng, 10, 24);
  const HiddenTrace full = b.forward(tokens, hooks);
  DecodeSession session(b, hooks);
  const Matrix head = session.append(std::span(tokens).first(4));
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_LE(max_abs_diff(head.row(i), full.logits.row(i)), 1e-12);
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    const Matrix row = session.append(std::span(tokens).subspan(i, 1));
    EXPECT_LE(max_abs_diff(row.row(0), full.logits.row(i)), 1e-12);
  }
  EXPECT_EQ(session.length(), tokens.size());
}

TEST(Backbone, GenerateBoundsAndDeterminism) {
  const auto c = tiny_config();
  const Backbone b = Backbone::initialize(c, 11);
  const std::vector<Token> prompt{2, 7, 1};
  const GenerateResult none = b.generate(prompt, {}, 0);
  EXPECT_TRUE(none.tokens.empty());
  EXPECT_TRUE(none.per_token_ms.empty());

  const GenerateResult a = b.generate(prompt, {}, 9);
  const GenerateResult again = b.generate(prompt, {}, 9);
  EXPECT_EQ(a.tokens, again.tokens);
  EXPECT_EQ(a.tokens.size(), 9u);
  EXPECT_EQ(a.per_token_ms.size(), a.tokens.size());
  for (Token t : a.tokens) EXPECT_LT(t, c.vocab_size);

  // Greedy: each emitted token is the argmax of a full forward over the running sequence.
  std::vector<Token> seq = prompt;
  for (Token t : a.tokens) {
    const HiddenTrace tr = b.forward(seq);
    EXPECT_EQ(t, argmax(tr.logits.row(seq.size() - 1)));
    seq.push_back(t);
  }

  const GenerateResult stopped = b.generate(prompt, {}, 9, GenerateOptions{a.tokens[2]});
  EXPECT_LE(stopped.tokens.size(), 3u);
  EXPECT_EQ(stopped.tokens.back(), a.tokens[2]);

  EXPECT_EQ(error_code_of([&] { b.generate(prompt, {}, c.max_seq_len); }),
            ErrorCode::kContextOverflow);
}

TEST(Backbone, ForwardPassCounter) {
  const Backbone b = Backbone::initialize(tiny_config(), 11);
  const std::vector<Token> prompt{2, 7, 1};
  const auto before = b.forward_passes();
  b.forward(prompt);
  EXPECT_EQ(b.forward_passes(), before + 1);
  const GenerateResult r = b.generate(prompt, {}, 5);
  EXPECT_EQ(r.forward_passes, 5u);  // prefill emits token 1; four decode passes emit the rest
  EXPECT_EQ(b.forward_passes(), before + 1 + r.forward_passes);
}

TEST(Backbone, ContentHashUnchangedByUse) {
  const Backbone b = Backbone::initialize(tiny_config(), 13);
  const auto hash = b.content_hash();
  const auto adapter = std::make_shared<const LoraAdapter>(random_adapter("a", b.config(), 2, 1.0, 3));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    const auto tokens = random_tokens(rng, 6, 24);
    b.forward(tokens, adapter_hooks(adapter));
    b.generate(tokens, adapter_hooks(adapter), 4);
  }
  EXPECT_EQ(b.content_hash(), hash);
}

TEST(BackboneFormat, RoundTripBitwise) {
  const Backbone b = Backbone::initialize(tiny_config(), 17);
  const auto bytes = b.serialize();
  ASSERT_GE(bytes.size(), 5u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LGBK");
  const Backbone back = Backbone::deserialize(bytes);
  EXPECT_EQ(back.config(), b.config());
  EXPECT_EQ(back.weights(), b.weights());
  EXPECT_EQ(back.serialize(), bytes);

  const auto path = std::filesystem::temp_directory_path() / "loraroute_test_backbone.lgbk";
  b.save(path);
  EXPECT_EQ(Backbone::load(path).serialize(), bytes);
  std::filesystem::remove(path);
}

TEST(BackboneFormat, CorruptionErrors) {
  const auto bytes = Backbone::initialize(tiny_config(), 17).serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(error_code_of([&] { Backbone::deserialize(bad_magic); }), ErrorCode::kBadMagic);
  auto bad_version = bytes;
  bad_version[4] = 255;
  EXPECT_EQ(error_code_of([&] { Backbone::deserialize(bad_version); }),
            ErrorCode::kUnsupportedVersion);
  for (std::size_t cut : {std::size_t{5}, std::size_t{20}, bytes.size() - 1}) {
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + cut);
    EXPECT_EQ(error_code_of([&] { Backbone::deserialize(truncated); }), ErrorCode::kTruncated)
        << cut;
  }
  EXPECT_EQ(error_code_of([] { Backbone::load("/nonexistent/dir/model.lgbk"); }), ErrorCode::kIo);
}

}  // namespace
}  // namespace loraroute
