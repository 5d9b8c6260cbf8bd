// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

// Model file layout (all integers and floats little-endian):
//   "LGBK"            magic
//   u8                format version (1)
//   u32 x 6           d_model, n_blocks, n_heads, d_ff, vocab_size, max_seq_len
//   f64 payload       token_embedding, position_embedding,
//                     per block: ln1_gain, ln1_bias, wq, wk, wv, wo,
//                                ln2_gain, ln2_bias, w1, b1, w2, b2
//                     final_gain, final_bias, unembedding
// Matrices are row-major. No trailing bytes are permitted.

#include "loraroute/backbone.hpp"
#include "loraroute/binary_io.hpp"
#include "loraroute/error.hpp"

namespace loraroute {

namespace {

constexpr std::string_view kMagic = "LGBK";
constexpr std::uint8_t kVersion = 1;

// Computed in long double so that corrupted headers cannot overflow.
long double payload_doubles(const ModelConfig& c) {
  const long double d = c.d_model;
  const long double ff = c.d_ff;
  const long double per_block = 4 * d + 4 * d * d + 2 * ff * d + ff + d;
  return 2.0L * c.vocab_size * d + c.max_seq_len * d + c.n_blocks * per_block + 2 * d;
}

void read_matrix(ByteReader& in, Matrix& m, std::size_t rows, std::size_t cols) {
  m = Matrix(rows, cols);
  in.f64s(m.data());
}

void read_vector(ByteReader& in, Vector& v, std::size_t n) {
  v.assign(n, 0.0);
  in.f64s(v);
}

}  // namespace

std::vector<std::uint8_t> Backbone::serialize() const {
  ByteWriter out;
  out.magic(kMagic);
  out.u8(kVersion);
  for (std::size_t v : {config_.d_model, config_.n_blocks, config_.n_heads, config_.d_ff,
                        config_.vocab_size, config_.max_seq_len}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.f64s(weights_.token_embedding.data());
  out.f64s(weights_.position_embedding.data());
  for (const auto& b : weights_.blocks) {
    out.f64s(b.ln1_gain);
    out.f64s(b.ln1_bias);
    out.f64s(b.wq.data());
    out.f64s(b.wk.data());
    out.f64s(b.wv.data());
    out.f64s(b.wo.data());
    out.f64s(b.ln2_gain);
    out.f64s(b.ln2_bias);
    out.f64s(b.w1.data());
    out.f64s(b.b1);
    out.f64s(b.w2.data());
    out.f64s(b.b2);
  }
  out.f64s(weights_.final_gain);
  out.f64s(weights_.final_bias);
  out.f64s(weights_.unembedding.data());
  return std::move(out).buffer();
}

Backbone Backbone::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(kMagic, "model file");
  const std::uint8_t version = in.u8();
  if (version != kVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "model file: unsupported format version " + std::to_string(version));
  }
  ModelConfig c;
  c.d_model = in.u32();
  c.n_blocks = in.u32();
  c.n_heads = in.u32();
  c.d_ff = in.u32();
  c.vocab_size = in.u32();
  c.max_seq_len = in.u32();
  c.validate();
  // Reject before allocating when the header promises more than is present.
  const long double needed = payload_doubles(c);
  if (needed * 8 > static_cast<long double>(in.remaining())) {
    throw Error(ErrorCode::kTruncated,
                "model file: payload needs " + std::to_string(static_cast<double>(needed * 8)) +
                    " bytes, " + std::to_string(in.remaining()) + " present");
  }

  const std::size_t d = c.d_model;
  BackboneWeights w;
  read_matrix(in, w.token_embedding, c.vocab_size, d);
  read_matrix(in, w.position_embedding, c.max_seq_len, d);
  w.blocks.resize(c.n_blocks);
  for (auto& b : w.blocks) {
    read_vector(in, b.ln1_gain, d);
    read_vector(in, b.ln1_bias, d);
    read_matrix(in, b.wq, d, d);
    read_matrix(in, b.wk, d, d);
    read_matrix(in, b.wv, d, d);
    read_matrix(in, b.wo, d, d);
    read_vector(in, b.ln2_gain, d);
    read_vector(in, b.ln2_bias, d);
    read_matrix(in, b.w1, c.d_ff, d);
    read_vector(in, b.b1, c.d_ff);
    read_matrix(in, b.w2, d, c.d_ff);
    read_vector(in, b.b2, d);
  }
  read_vector(in, w.final_gain, d);
  read_vector(in, w.final_bias, d);
  read_matrix(in, w.unembedding, c.vocab_size, d);
  in.expect_end("model file");
  return Backbone(c, std::move(w));
}

void Backbone::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

Backbone Backbone::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

std::uint64_t Backbone::content_hash() const { return fnv1a64(serialize()); }

}  // namespace loraroute
