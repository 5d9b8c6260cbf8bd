// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/harness/synthetic.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include "loraroute/error.hpp"

namespace loraroute::harness {

Token SyntheticTask::next(Token t) const {
  if (!in_band(t)) {
    throw Error(ErrorCode::kInvalidArgument,
                "task " + id + ": token " + std::to_string(t) + " is outside its band");
  }
  return rule[t - band_begin];
}

Vector SyntheticTask::token_distribution(std::size_t vocab_size) const {
  Vector p(vocab_size, 0.0);
  const double filler_mass = filler_count > 0 ? noise : 0.0;
  for (std::size_t i = 0; i < band_size; ++i) {
    p[band_begin + i] = (1.0 - filler_mass) / static_cast<double>(band_size);
  }
  for (std::size_t i = 0; i < filler_count; ++i) {
    p[filler_begin + i] = filler_mass / static_cast<double>(filler_count);
  }
  return p;
}

TaskSample sample_task(const SyntheticTask& task, std::size_t length, std::mt19937_64& rng) {
  if (length == 0) throw Error(ErrorCode::kInvalidArgument, "sample length must be >= 1");
  TaskSample s;
  s.tokens.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const bool last = i + 1 == length;
    if (!last && task.filler_count > 0 && uniform01(rng) < task.noise) {
      s.tokens.push_back(task.filler_begin + static_cast<Token>(uniform_index(rng, task.filler_count)));
    } else {
      s.tokens.push_back(task.band_begin + static_cast<Token>(uniform_index(rng, task.band_size)));
    }
  }
  s.target = task.next(s.tokens.back());
  return s;
}

std::vector<TaskSample> sample_task_set(const SyntheticTask& task, std::size_t count,
                                        std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TaskSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_task(task, length, rng));
  return out;
}

const SyntheticTask& TaskSuite::find(const std::string& id) const {
  for (const auto& t : tasks) {
    if (t.id == id) return t;
  }
  throw Error(ErrorCode::kUnknownId, "unknown task id " + id);
}

std::string task_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "task%02zu", index);
  return buf;
}

TaskSuite make_task_suite(std::size_t n_tasks, std::size_t band_size, std::size_t vocab_size,
                          double noise, std::uint64_t seed) {
  if (n_tasks == 0 || band_size < 2) {
    throw Error(ErrorCode::kInvalidArgument, "task suite: need >= 1 task and band size >= 2");
  }
  if (n_tasks * band_size > vocab_size) {
    throw Error(ErrorCode::kInvalidArgument,
                "task suite: " + std::to_string(n_tasks) + " bands of " +
                    std::to_string(band_size) + " tokens do not fit a vocab of " +
                    std::to_string(vocab_size));
  }
  const std::size_t filler_begin = n_tasks * band_size;
  const std::size_t filler_count = vocab_size - filler_begin;
  if (noise < 0.0 || noise >= 1.0 || (noise > 0.0 && filler_count == 0)) {
    throw Error(ErrorCode::kInvalidArgument, "task suite: noise needs filler tokens and [0, 1)");
  }

  std::mt19937_64 rng(seed);
  TaskSuite suite;
  suite.vocab_size = vocab_size;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    SyntheticTask task;
    task.id = task_id(t);
    task.band_begin = static_cast<Token>(t * band_size);
    task.band_size = band_size;
    task.filler_begin = static_cast<Token>(filler_begin);
    task.filler_count = filler_count;
    task.noise = noise;
    task.rule.resize(band_size);
    std::iota(task.rule.begin(), task.rule.end(), task.band_begin);
    for (std::size_t i = band_size - 1; i > 0; --i) {
      std::swap(task.rule[i], task.rule[uniform_index(rng, i + 1)]);
    }
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

nlohmann::json suite_to_json(const TaskSuite& suite) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : suite.tasks) {
    tasks.push_back({{"id", t.id},
                     {"band_begin", t.band_begin},
                     {"band_size", t.band_size},
                     {"filler_begin", t.filler_begin},
                     {"filler_count", t.filler_count},
                     {"noise", t.noise},
                     {"rule", t.rule}});
  }
  return {{"vocab_size", suite.vocab_size}, {"tasks", std::move(tasks)}};
}

TaskSuite suite_from_json(const nlohmann::json& record) {
  try {
    TaskSuite suite;
    suite.vocab_size = record.at("vocab_size").get<std::size_t>();
    for (const auto& j : record.at("tasks")) {
      SyntheticTask t;
      t.id = j.at("id").get<std::string>();
      t.band_begin = j.at("band_begin").get<Token>();
      t.band_size = j.at("band_size").get<std::size_t>();
      t.filler_begin = j.at("filler_begin").get<Token>();
      t.filler_count = j.at("filler_count").get<std::size_t>();
      t.noise = j.at("noise").get<double>();
      t.rule = j.at("rule").get<std::vector<Token>>();
      if (t.rule.size() != t.band_size) {
        throw Error(ErrorCode::kMalformed, "task " + t.id + ": rule length != band size");
      }
      suite.tasks.push_back(std::move(t));
    }
    return suite;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, std::string("task suite: ") + e.what());
  }
}

void save_suite(const TaskSuite& suite, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << suite_to_json(suite).dump(2) << '\n';
}

TaskSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open task file " + path.string());
  try {
    return suite_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kMalformed, std::string("task file: ") + e.what());
  }
}

}  // namespace loraroute::harness
