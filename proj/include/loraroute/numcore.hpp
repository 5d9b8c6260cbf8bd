// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace loraroute {

// All numerics in this project are 64-bit. Vectors are plain std::vector and
// functions take spans so that matrix rows can be passed without copies.
using Vector = std::vector<double>;

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  // "rows x cols", used in error messages.
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

// y = m * v. Throws kDimensionMismatch naming both shapes.
Vector matvec(const Matrix& m, std::span<const double> v);
// out = m * v without allocating; out.size() must equal m.rows().
void matvec_into(const Matrix& m, std::span<const double> v, std::span<double> out);
// out += m^T * v; out.size() must equal m.cols().
void matvec_transposed_accumulate(const Matrix& m, std::span<const double> v,
                                  std::span<double> out);

Matrix matmul(const Matrix& a, const Matrix& b);

// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);

double l2_norm(std::span<const double> v);

// Max-subtracted softmax; output sums to one.
Vector softmax(std::span<const double> v);

// -sum p ln p in nats with 0 ln 0 = 0. Throws kNotProbability unless every
// entry is non-negative and the sum is within 1e-9 of one.
double shannon_entropy(std::span<const double> p);

bool all_finite(std::span<const double> v) noexcept;

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw. Used instead
// of std::uniform_real_distribution so streams are identical across standard
// library implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_symmetric(std::mt19937_64& rng, double scale) {
  return (2.0 * uniform01(rng) - 1.0) * scale;
}

// Uniform integer in [0, n) by rejection.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

}  // namespace loraroute
