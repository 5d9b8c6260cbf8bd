// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/numcore.hpp"

namespace loraroute::harness {

// A task owns a contiguous band of token ids. Inputs draw mostly from the band
// (otherwise from a shared filler range) and the label of an in-band token is
// its image under a fixed permutation of the band.
struct SyntheticTask {
  std::string id;
  Token band_begin = 0;
  std::size_t band_size = 0;
  Token filler_begin = 0;
  std::size_t filler_count = 0;
  double noise = 0.0;        // probability of a filler token at non-final positions
  std::vector<Token> rule;   // rule[i] is the successor of band_begin + i

  bool in_band(Token t) const noexcept {
    return t >= band_begin && t < band_begin + band_size;
  }
  // Throws kInvalidArgument for tokens outside the band.
  Token next(Token t) const;
  // Categorical distribution over a vocab of the given size.
  Vector token_distribution(std::size_t vocab_size) const;
};

struct TaskSample {
  std::vector<Token> tokens;  // last token always in band
  Token target = 0;           // rule applied to the last token
};

TaskSample sample_task(const SyntheticTask& task, std::size_t length, std::mt19937_64& rng);
std::vector<TaskSample> sample_task_set(const SyntheticTask& task, std::size_t count,
                                        std::size_t length, std::uint64_t seed);

struct TaskSuite {
  std::size_t vocab_size = 0;
  std::vector<SyntheticTask> tasks;

  // Throws kUnknownId.
  const SyntheticTask& find(const std::string& id) const;
};

// Task t owns [t * band_size, (t + 1) * band_size); ids from n_tasks * band_size
// up to vocab_size are filler. Throws kInvalidArgument if the bands do not fit
// or no filler remains while noise > 0.
TaskSuite make_task_suite(std::size_t n_tasks, std::size_t band_size, std::size_t vocab_size,
                          double noise, std::uint64_t seed);

std::string task_id(std::size_t index);

nlohmann::json suite_to_json(const TaskSuite& suite);
TaskSuite suite_from_json(const nlohmann::json& record);
void save_suite(const TaskSuite& suite, const std::filesystem::path& path);
TaskSuite load_suite(const std::filesystem::path& path);

}  // namespace loraroute::harness
