// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

// Adapter file layout (little-endian):
//   "LGAD"          magic
//   u8              format version (1)
//   u32 + bytes     adapter id (UTF-8)
//   u32             d_model
//   u32             n_blocks
//   u32             rank
//   u8              factor order (0: update = alpha * A * B, A is d_model x rank)
//   f64             alpha
//   per block, per site (Q then V): A payload, then B payload (f64, row-major)
//   u32 + bytes     task label (UTF-8, may be empty)
//   u8              per-site alpha override flag; if 1, n_blocks * 2 f64 follow

#include <cmath>

#include "loraroute/adapters.hpp"
#include "loraroute/binary_io.hpp"
#include "loraroute/error.hpp"

namespace loraroute {

namespace {

constexpr std::string_view kMagic = "LGAD";
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFactorOrderUpDown = 0;

void require_positive_finite(double alpha, const std::string& id) {
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "adapter " + id + ": alpha must be finite and > 0, got " + std::to_string(alpha));
  }
}

}  // namespace

LoraAdapter::LoraAdapter(std::string id, std::size_t d_model, std::size_t n_blocks,
                         std::size_t rank, double alpha, std::vector<LoraFactors> factors,
                         std::string task_label, std::vector<double> site_alpha)
    : id_(std::move(id)),
      d_model_(d_model),
      n_blocks_(n_blocks),
      rank_(rank),
      alpha_(alpha),
      factors_(std::move(factors)),
      task_label_(std::move(task_label)),
      site_alpha_(std::move(site_alpha)) {
  if (id_.empty()) throw Error(ErrorCode::kInvalidArgument, "adapter id must be non-empty");
  if (rank_ == 0 || d_model_ == 0 || n_blocks_ == 0) {
    throw Error(ErrorCode::kInvalidArgument, "adapter " + id_ + ": rank and shape must be >= 1");
  }
  require_positive_finite(alpha_, id_);
  if (factors_.size() != n_blocks_ * kNumSites) {
    throw Error(ErrorCode::kShapeMismatch, "adapter " + id_ + ": expected " +
                                               std::to_string(n_blocks_ * kNumSites) +
                                               " factor pairs, got " +
                                               std::to_string(factors_.size()));
  }
  for (const auto& f : factors_) {
    if (f.up.rows() != d_model_ || f.up.cols() != rank_ || f.down.rows() != rank_ ||
        f.down.cols() != d_model_) {
      throw Error(ErrorCode::kShapeMismatch,
                  "adapter " + id_ + ": factor shapes " + f.up.shape_string() + " / " +
                      f.down.shape_string() + " inconsistent with d_model " +
                      std::to_string(d_model_) + ", rank " + std::to_string(rank_));
    }
    if (!all_finite(f.up.data()) || !all_finite(f.down.data())) {
      throw Error(ErrorCode::kInvalidArgument, "adapter " + id_ + ": non-finite factor entry");
    }
  }
  if (!site_alpha_.empty()) {
    if (site_alpha_.size() != n_blocks_ * kNumSites) {
      throw Error(ErrorCode::kShapeMismatch, "adapter " + id_ + ": per-site alpha count mismatch");
    }
    for (double a : site_alpha_) require_positive_finite(a, id_);
  }
}

std::size_t LoraAdapter::index(std::size_t block, Site site) const {
  if (block >= n_blocks_) {
    throw Error(ErrorCode::kInvalidArgument, "adapter " + id_ + ": block " +
                                                 std::to_string(block) + " out of range");
  }
  return block * kNumSites + static_cast<std::size_t>(site);
}

double LoraAdapter::alpha(std::size_t block, Site site) const {
  const std::size_t i = index(block, site);
  return site_alpha_.empty() ? alpha_ : site_alpha_[i];
}

const LoraFactors& LoraAdapter::factors(std::size_t block, Site site) const {
  return factors_[index(block, site)];
}

void LoraAdapter::accumulate_delta(std::size_t block, Site site, std::span<const double> h,
                                   double scale, std::span<double> out) const {
  if (h.size() != d_model_ || out.size() != d_model_) {
    throw Error(ErrorCode::kShapeMismatch,
                "adapter " + id_ + ": input length " + std::to_string(h.size()) +
                    " / output length " + std::to_string(out.size()) + " vs d_model " +
                    std::to_string(d_model_));
  }
  const LoraFactors& f = factors(block, site);
  double low[64];
  std::vector<double> heap;
  std::span<double> t(low, rank_);
  if (rank_ > 64) {
    heap.resize(rank_);
    t = heap;
  }
  for (std::size_t k = 0; k < rank_; ++k) t[k] = dot(f.down.row(k), h);
  const double s = scale * alpha(block, site);
  for (std::size_t i = 0; i < d_model_; ++i) out[i] += s * dot(f.up.row(i), t);
}

Vector LoraAdapter::delta_apply(std::size_t block, Site site, std::span<const double> h) const {
  Vector out(d_model_, 0.0);
  accumulate_delta(block, site, h, 1.0, out);
  return out;
}

Matrix LoraAdapter::dense_delta(std::size_t block, Site site) const {
  const LoraFactors& f = factors(block, site);
  Matrix m = matmul(f.up, f.down);
  const double a = alpha(block, site);
  for (double& x : m.data()) x *= a;
  return m;
}

LoraAdapter LoraAdapter::with_id(std::string id) const {
  return LoraAdapter(std::move(id), d_model_, n_blocks_, rank_, alpha_, factors_, task_label_,
                     site_alpha_);
}

LoraAdapter LoraAdapter::with_alpha(double alpha) const {
  return LoraAdapter(id_, d_model_, n_blocks_, rank_, alpha, factors_, task_label_, {});
}

std::vector<std::uint8_t> LoraAdapter::serialize() const {
  ByteWriter out;
  out.magic(kMagic);
  out.u8(kVersion);
  out.str(id_);
  out.u32(static_cast<std::uint32_t>(d_model_));
  out.u32(static_cast<std::uint32_t>(n_blocks_));
  out.u32(static_cast<std::uint32_t>(rank_));
  out.u8(kFactorOrderUpDown);
  out.f64(alpha_);
  for (const auto& f : factors_) {
    out.f64s(f.up.data());
    out.f64s(f.down.data());
  }
  out.str(task_label_);
  out.u8(site_alpha_.empty() ? 0 : 1);
  out.f64s(site_alpha_);
  return std::move(out).buffer();
}

LoraAdapter LoraAdapter::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(kMagic, "adapter file");
  const std::uint8_t version = in.u8();
  if (version != kVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "adapter file: unsupported format version " + std::to_string(version));
  }
  std::string id = in.str();
  const std::size_t d_model = in.u32();
  const std::size_t n_blocks = in.u32();
  const std::size_t rank = in.u32();
  const std::uint8_t order = in.u8();
  if (order != kFactorOrderUpDown) {
    throw Error(ErrorCode::kMalformed,
                "adapter file: unsupported factor order flag " + std::to_string(order));
  }
  const double alpha = in.f64();
  const long double needed = 2.0L * n_blocks * kNumSites * d_model * rank * 8;
  if (needed > static_cast<long double>(in.remaining())) {
    throw Error(ErrorCode::kTruncated, "adapter file: factor payload exceeds remaining " +
                                           std::to_string(in.remaining()) + " bytes");
  }
  std::vector<LoraFactors> factors(n_blocks * kNumSites);
  for (auto& f : factors) {
    f.up = Matrix(d_model, rank);
    in.f64s(f.up.data());
    f.down = Matrix(rank, d_model);
    in.f64s(f.down.data());
  }
  std::string label = in.str();
  std::vector<double> site_alpha;
  const std::uint8_t has_overrides = in.u8();
  if (has_overrides > 1) {
    throw Error(ErrorCode::kMalformed, "adapter file: bad per-site alpha flag");
  }
  if (has_overrides == 1) {
    site_alpha.resize(n_blocks * kNumSites);
    in.f64s(site_alpha);
  }
  in.expect_end("adapter file");
  return LoraAdapter(std::move(id), d_model, n_blocks, rank, alpha, std::move(factors),
                     std::move(label), std::move(site_alpha));
}

void LoraAdapter::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

LoraAdapter LoraAdapter::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

LoraAdapter random_adapter(std::string id, const ModelConfig& config, std::size_t rank,
                           double alpha, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::vector<LoraFactors> factors(config.n_blocks * kNumSites);
  for (auto& f : factors) {
    f.up = Matrix(config.d_model, rank);
    for (double& x : f.up.data()) x = uniform_symmetric(rng, scale);
    f.down = Matrix(rank, config.d_model);
    for (double& x : f.down.data()) x = uniform_symmetric(rng, scale);
  }
  return LoraAdapter(std::move(id), config.d_model, config.n_blocks, rank, alpha,
                     std::move(factors));
}

HookSet adapter_hooks(std::shared_ptr<const LoraAdapter> adapter, double scale) {
  HookSet hooks;
  for (std::size_t j = 0; j < adapter->n_blocks(); ++j) {
    for (Site site : kAllSites) {
      hooks.push_back({j, site, [adapter, scale](const HookCall& call, std::span<double> delta) {
                         adapter->accumulate_delta(call.block, call.site, call.input, scale,
                                                   delta);
                       }});
    }
  }
  return hooks;
}

}  // namespace loraroute
