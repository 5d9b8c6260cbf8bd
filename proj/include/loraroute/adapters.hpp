// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loraroute/backbone.hpp"
#include "loraroute/numcore.hpp"

namespace loraroute {

// Low-rank factors of one (block, site). The update is alpha * up * down, so
// `up` is d_model x rank and `down` is rank x d_model.
struct LoraFactors {
  Matrix up;
  Matrix down;

  friend bool operator==(const LoraFactors&, const LoraFactors&) = default;
};

// Immutable once constructed.
class LoraAdapter {
 public:
  // `factors` is indexed by block * kNumSites + site. `site_alpha`, when
  // non-empty, overrides alpha per (block, site) with the same indexing.
  LoraAdapter(std::string id, std::size_t d_model, std::size_t n_blocks, std::size_t rank,
              double alpha, std::vector<LoraFactors> factors, std::string task_label = {},
              std::vector<double> site_alpha = {});

  const std::string& id() const noexcept { return id_; }
  std::size_t d_model() const noexcept { return d_model_; }
  std::size_t n_blocks() const noexcept { return n_blocks_; }
  std::size_t rank() const noexcept { return rank_; }
  double alpha() const noexcept { return alpha_; }
  double alpha(std::size_t block, Site site) const;
  const std::string& task_label() const noexcept { return task_label_; }
  const std::vector<double>& site_alpha() const noexcept { return site_alpha_; }
  const std::vector<LoraFactors>& all_factors() const noexcept { return factors_; }
  const LoraFactors& factors(std::size_t block, Site site) const;

  // out += scale * alpha(block, site) * up * (down * h). Evaluated right to
  // left; the dense update is never formed.
  void accumulate_delta(std::size_t block, Site site, std::span<const double> h, double scale,
                        std::span<double> out) const;

  Vector delta_apply(std::size_t block, Site site, std::span<const double> h) const;

  // alpha * up * down as a dense d_model x d_model matrix.
  Matrix dense_delta(std::size_t block, Site site) const;

  LoraAdapter with_id(std::string id) const;
  LoraAdapter with_alpha(double alpha) const;

  std::vector<std::uint8_t> serialize() const;
  static LoraAdapter deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static LoraAdapter load(const std::filesystem::path& path);

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;

 private:
  std::size_t index(std::size_t block, Site site) const;

  std::string id_;
  std::size_t d_model_;
  std::size_t n_blocks_;
  std::size_t rank_;
  double alpha_;
  std::vector<LoraFactors> factors_;
  std::string task_label_;
  std::vector<double> site_alpha_;
};

// Random adapter for tests and tooling: both factors uniform in [-scale, scale].
LoraAdapter random_adapter(std::string id, const ModelConfig& config, std::size_t rank,
                           double alpha, std::uint64_t seed, double scale = 0.1);

// Hooks attaching one adapter at every (block, site) with its deltas scaled by `scale`.
HookSet adapter_hooks(std::shared_ptr<const LoraAdapter> adapter, double scale = 1.0);

// Adapters at a fixed pool revision, in ascending id order.
struct PoolSnapshot {
  std::uint64_t revision = 0;
  std::vector<std::shared_ptr<const LoraAdapter>> adapters;
};

// Thread-safe id-keyed adapter set; readers share, writers are exclusive.
class AdapterPool {
 public:
  AdapterPool(std::size_t d_model, std::size_t n_blocks);
  explicit AdapterPool(const ModelConfig& config)
      : AdapterPool(config.d_model, config.n_blocks) {}

  // Throws kDuplicateId or kShapeMismatch.
  void add(LoraAdapter adapter);
  void add(std::shared_ptr<const LoraAdapter> adapter);
  // Throws kUnknownId.
  void remove(std::string_view id);

  bool contains(std::string_view id) const;
  std::shared_ptr<const LoraAdapter> find(std::string_view id) const;
  std::vector<std::string> ids() const;
  std::size_t size() const;
  std::uint64_t revision() const;
  PoolSnapshot snapshot() const;

  std::size_t d_model() const noexcept { return d_model_; }
  std::size_t n_blocks() const noexcept { return n_blocks_; }

 private:
  std::size_t d_model_;
  std::size_t n_blocks_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const LoraAdapter>, std::less<>> entries_;
  std::uint64_t revision_ = 0;
};

// Pool manifest: one adapter file path per line; blank lines and lines whose
// first non-space character is '#' are ignored. Relative paths resolve
// against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest,
                    const std::vector<std::filesystem::path>& adapter_files);
// Adds every adapter listed in `manifest` to `pool`.
void load_manifest_into(AdapterPool& pool, const std::filesystem::path& manifest);

}  // namespace loraroute
