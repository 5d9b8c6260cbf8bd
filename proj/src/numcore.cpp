// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "loraroute/error.hpp"

namespace loraroute {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNotProbability: return "not_probability";
    case ErrorCode::kTokenOutOfRange: return "token_out_of_range";
    case ErrorCode::kSequenceTooLong: return "sequence_too_long";
    case ErrorCode::kContextOverflow: return "context_overflow";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kUnknownId: return "unknown_id";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kMalformed: return "malformed";
    case ErrorCode::kEmptyPool: return "empty_pool";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kStaleDecision: return "stale_decision";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vector matvec(const Matrix& m, std::span<const double> v) {
  Vector out(m.rows());
  matvec_into(m, v, out);
  return out;
}

void matvec_into(const Matrix& m, std::span<const double> v, std::span<double> out) {
  if (m.cols() != v.size() || out.size() != m.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matvec: matrix " + m.shape_string() + " vs vector " + std::to_string(v.size()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), v);
}

void matvec_transposed_accumulate(const Matrix& m, std::span<const double> v,
                                  std::span<double> out) {
  if (m.rows() != v.size() || out.size() != m.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matvec_transposed: matrix " + m.shape_string() + " vs vector " +
                    std::to_string(v.size()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(v[r], m.row(r), out);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul: " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) axpy(a(i, k), b.row(k), dst);
  }
  return out;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

Vector softmax(std::span<const double> v) {
  Vector out(v.size());
  if (v.empty()) return out;
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

double shannon_entropy(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw Error(ErrorCode::kNotProbability, "entropy: entry is negative or non-finite");
    }
    total += x;
  }
  if (p.empty() || std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kNotProbability,
                "entropy: entries sum to " + std::to_string(total) + ", expected 1");
  }
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine_similarity: lengths " +
                                                   std::to_string(a.size()) + " vs " +
                                                   std::to_string(b.size()));
  }
  const double denom = l2_norm(a) * l2_norm(b);
  if (denom == 0.0) return 0.0;
  return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % n;
}

}  // namespace loraroute
