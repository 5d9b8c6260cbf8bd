// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "loraroute/binary_io.hpp"
#include "loraroute/numcore.hpp"
#include "test_util.hpp"

namespace loraroute {
namespace {

using testing::error_code_of;
using testing::random_matrix;
using testing::random_vector;

TEST(Matvec, IdentityReturnsInput) {
  const Vector v{1, 2, 3};
  EXPECT_EQ(matvec(Matrix::identity(3), v), v);
}

TEST(Matvec, ZeroMatrixGivesZeros) {
  EXPECT_EQ(matvec(Matrix(2, 3), Vector{4, -5, 6}), (Vector{0, 0}));
}

TEST(Matvec, HandArithmetic) {
  const Matrix m(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matvec(m, Vector{1, 1}), (Vector{3, 7}));
}

TEST(Matvec, MismatchNamesBothShapes) {
  try {
    matvec(Matrix(2, 3), Vector{1, 2});
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("vector 2"), std::string::npos) << msg;
  }
}

TEST(Matvec, AgreesWithNaiveLoopUpTo256) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1, 7, 64, 256}) {
    const std::size_t cols = n == 1 ? 5 : n - 1;
    const Matrix m = random_matrix(rng, n, cols);
    const Vector v = random_vector(rng, cols);
    const Vector got = matvec(m, v);
    for (std::size_t r = 0; r < n; ++r) {
      double ref = 0.0;
      for (std::size_t c = 0; c < cols; ++c) ref += m(r, c) * v[c];
      EXPECT_NEAR(got[r], ref, 1e-12);
    }
  }
}

TEST(Matvec, TransposedAccumulateMatchesExplicitTranspose) {
  std::mt19937_64 rng(5);
  const Matrix m = random_matrix(rng, 6, 4);
  const Vector v = random_vector(rng, 6);
  Vector out(4, 1.0);
  matvec_transposed_accumulate(m, v, out);
  Matrix t(4, 6);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) t(c, r) = m(r, c);
  const Vector ref = matvec(t, v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], 1.0 + ref[i], 1e-12);
}

TEST(Matmul, AssociatesWithMatvec) {
  std::mt19937_64 rng(9);
  const Matrix a = random_matrix(rng, 5, 3);
  const Matrix b = random_matrix(rng, 3, 4);
  const Vector h = random_vector(rng, 4);
  const Vector lhs = matvec(matmul(a, b), h);
  const Vector rhs = matvec(a, matvec(b, h));
  EXPECT_LE(testing::max_abs_diff(lhs, rhs), 1e-12);
  EXPECT_EQ(error_code_of([&] { matmul(a, a); }), ErrorCode::kDimensionMismatch);
}

TEST(L2Norm, Examples) {
  EXPECT_EQ(l2_norm(Vector{3, 4}), 5.0);
  EXPECT_EQ(l2_norm(Vector{0, 0, 0}), 0.0);
  EXPECT_EQ(l2_norm(Vector{1, 1, 1, 1}), 2.0);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Vector{0, 0}), (Vector{0.5, 0.5}));
  for (double c : {-3.0, 0.0, 17.5}) {
    for (double p : softmax(Vector{c, c, c, c})) EXPECT_NEAR(p, 0.25, 1e-15);
  }
  const Vector p = softmax(Vector{std::log(1.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneForLargeInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector v = random_vector(rng, 1 + uniform_index(rng, 64), 1e4);
    const Vector p = softmax(v);
    double s = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v = random_vector(rng, 1 + uniform_index(rng, 32), 20.0);
    const double c = uniform_symmetric(rng, 100.0);
    Vector shifted = v;
    for (double& x : shifted) x += c;
    EXPECT_LE(testing::max_abs_diff(softmax(v), softmax(shifted)), 1e-12);
  }
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(shannon_entropy(Vector{0.5, 0.5}), 0.69314718055994530942, 1e-15);
  EXPECT_EQ(shannon_entropy(Vector{1, 0, 0}), 0.0);
  EXPECT_NEAR(shannon_entropy(Vector{0.25, 0.25, 0.25, 0.25}), 1.3862943611198906188, 1e-15);
}

TEST(Entropy, RejectsNonProbability) {
  EXPECT_EQ(error_code_of([] { shannon_entropy(Vector{0.5, 0.6}); }), ErrorCode::kNotProbability);
  EXPECT_EQ(error_code_of([] { shannon_entropy(Vector{-0.1, 1.1}); }), ErrorCode::kNotProbability);
  EXPECT_EQ(error_code_of([] { shannon_entropy(Vector{NAN, 1.0}); }), ErrorCode::kNotProbability);
}

TEST(Entropy, BoundedByLogDimensionWithMaximumAtUniform) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + uniform_index(rng, 50);
    const Vector p = softmax(random_vector(rng, d, 5.0));
    const double h = shannon_entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(d)) + 1e-12);
  }
  for (std::size_t d : {2, 3, 10, 64}) {
    const Vector u(d, 1.0 / static_cast<double>(d));
    EXPECT_NEAR(shannon_entropy(u), std::log(static_cast<double>(d)), 1e-12);
  }
}

TEST(Cosine, SelfAndAntipodal) {
  std::mt19937_64 rng(19);
  const Vector x = random_vector(rng, 32);
  Vector neg = x;
  for (double& v : neg) v = -v;
  EXPECT_NEAR(cosine_similarity(x, x), 1.0, 1e-9);
  EXPECT_NEAR(cosine_similarity(x, neg), -1.0, 1e-9);
  EXPECT_EQ(cosine_similarity(x, Vector(32, 0.0)), 0.0);
}

TEST(Rng, UniformIndexInRangeAndCoversSupport) {
  std::mt19937_64 rng(23);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) ++seen[uniform_index(rng, 7)];
  for (int c : seen) EXPECT_GT(c, 800);
}

TEST(BinaryIo, RoundTripAndTruncation) {
  ByteWriter w;
  w.magic("TEST");
  w.u8(3);
  w.u32(0xDEADBEEF);
  w.u64(1ULL << 40);
  w.f64(-0.125);
  w.str("abc");
  const auto bytes = w.buffer();
  ByteReader r(bytes);
  r.expect_magic("TEST", "test");
  EXPECT_EQ(r.u8(), 3);
  EXPECT_EQ(r.u32(), 0xDEADBEEFu);
  EXPECT_EQ(r.u64(), 1ULL << 40);
  EXPECT_EQ(r.f64(), -0.125);
  EXPECT_EQ(r.str(), "abc");
  r.expect_end("test");

  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 2);
  ByteReader short_reader(cut);
  short_reader.expect_magic("TEST", "test");
  short_reader.u8();
  short_reader.u32();
  short_reader.u64();
  short_reader.f64();
  EXPECT_EQ(error_code_of([&] { short_reader.str(); }), ErrorCode::kTruncated);

  ByteReader wrong(bytes);
  EXPECT_EQ(error_code_of([&] { wrong.expect_magic("NOPE", "test"); }), ErrorCode::kBadMagic);
}

}  // namespace
}  // namespace loraroute
