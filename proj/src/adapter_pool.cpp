// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <mutex>

#include "loraroute/adapters.hpp"
#include "loraroute/error.hpp"

namespace loraroute {

AdapterPool::AdapterPool(std::size_t d_model, std::size_t n_blocks)
    : d_model_(d_model), n_blocks_(n_blocks) {}

void AdapterPool::add(LoraAdapter adapter) {
  add(std::make_shared<const LoraAdapter>(std::move(adapter)));
}

void AdapterPool::add(std::shared_ptr<const LoraAdapter> adapter) {
  if (!adapter) throw Error(ErrorCode::kInvalidArgument, "pool add: null adapter");
  if (adapter->d_model() != d_model_ || adapter->n_blocks() != n_blocks_) {
    throw Error(ErrorCode::kShapeMismatch,
                "pool add: adapter " + adapter->id() + " shaped for d_model " +
                    std::to_string(adapter->d_model()) + ", " +
                    std::to_string(adapter->n_blocks()) + " blocks; pool expects " +
                    std::to_string(d_model_) + ", " + std::to_string(n_blocks_));
  }
  std::unique_lock lock(mutex_);
  if (entries_.contains(adapter->id())) {
    throw Error(ErrorCode::kDuplicateId, "pool add: duplicate adapter id " + adapter->id());
  }
  const std::string id = adapter->id();
  entries_.emplace(id, std::move(adapter));
  ++revision_;
}

void AdapterPool::remove(std::string_view id) {
  std::unique_lock lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    throw Error(ErrorCode::kUnknownId, "pool remove: unknown adapter id " + std::string(id));
  }
  entries_.erase(it);
  ++revision_;
}

bool AdapterPool::contains(std::string_view id) const {
  std::shared_lock lock(mutex_);
  return entries_.find(id) != entries_.end();
}

std::shared_ptr<const LoraAdapter> AdapterPool::find(std::string_view id) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : it->second;
}

std::vector<std::string> AdapterPool::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

std::size_t AdapterPool::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::uint64_t AdapterPool::revision() const {
  std::shared_lock lock(mutex_);
  return revision_;
}

PoolSnapshot AdapterPool::snapshot() const {
  std::shared_lock lock(mutex_);
  PoolSnapshot snap;
  snap.revision = revision_;
  snap.adapters.reserve(entries_.size());
  for (const auto& [_, adapter] : entries_) snap.adapters.push_back(adapter);
  return snap;
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + manifest.string());
  std::vector<std::filesystem::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::filesystem::path p = line.substr(first, last - first + 1);
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(std::move(p));
  }
  return paths;
}

void write_manifest(const std::filesystem::path& manifest,
                    const std::vector<std::filesystem::path>& adapter_files) {
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open manifest " + manifest.string());
  for (const auto& p : adapter_files) out << p.string() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for manifest " + manifest.string());
}

void load_manifest_into(AdapterPool& pool, const std::filesystem::path& manifest) {
  for (const auto& path : read_manifest(manifest)) pool.add(LoraAdapter::load(path));
}

}  // namespace loraroute
