// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/engine.hpp"
#include "loraroute/harness/synthetic.hpp"
#include "loraroute/harness/trainer.hpp"
#include "loraroute/signals.hpp"

namespace loraroute::harness {

// A labelled grid. The CSV form puts `row_axis` and the column labels on the
// first line so external plotters can name both axes.
struct ExperimentReport {
  std::string kind;  // heatmap | selection_counts | alignment | ablation | timing
  std::string row_axis;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix values;
  nlohmann::json metadata = nlohmann::json::object();
};

std::string report_to_csv(const ExperimentReport& report);
nlohmann::json report_to_json(const ExperimentReport& report);
// CSV for heatmap, selection_counts and ablation; JSON for alignment and timing.
void write_report(const ExperimentReport& report, const std::filesystem::path& path);

// The seeded desk-scale configuration the committed thresholds were measured on.
struct ReferenceSetup {
  ModelConfig model;
  std::uint64_t backbone_seed = 7;
  std::size_t n_tasks = 8;
  std::size_t band_size = 2;
  double noise = 0.0;
  std::uint64_t suite_seed = 11;
  ToyTrainingConfig training = [] {
    ToyTrainingConfig c;
    c.seed = 100;
    return c;
  }();
};

struct ReferenceBundle {
  Backbone backbone;
  TaskSuite suite;
  std::unique_ptr<AdapterPool> pool;  // one trained adapter per task, labelled with its task id
};

ReferenceBundle build_reference(const ReferenceSetup& setup);

// Where a sample set for a task comes from.
struct SampleSpec {
  std::size_t count = 50;
  std::size_t length = 8;
  std::uint64_t seed = 1;
};

// Per-column min-max normalization to [0, 1]; constant columns become 0.
Matrix normalize_columns(const Matrix& grid);

// Rows are tasks (input datasets), columns the pool's adapters in id order.
// Each cell is the mean signal score over the task's samples, min-max
// normalized per adapter column. The raw means are kept in metadata["raw"].
// Throws kInvalidArgument with fewer than 2 tasks or 2 adapters.
ExperimentReport signal_heatmap(const Backbone& backbone, const AdapterPool& pool,
                                std::span<const SyntheticTask> tasks, const SignalConfig& config,
                                const SampleSpec& samples);

// Fraction of adapter columns whose own task's row holds the column maximum.
// Adapters are matched to rows by task label; unmatched columns are ignored.
double diagonal_max_fraction(const ExperimentReport& heatmap, const AdapterPool& pool);

// Rows are adapters, columns selection ranks 1..min(k, N); cells count how
// often the adapter was selected at that rank.
ExperimentReport selection_counts(const Backbone& backbone, const AdapterPool& pool,
                                  const SyntheticTask& task, const EngineConfig& config,
                                  const SampleSpec& samples);

// Mean-pooled final hidden state of the base model.
Vector task_embedding(const Backbone& backbone, std::span<const Token> tokens);

// For every (sample, selected adapter) pair records the merging weight and the
// cosine similarity between the sample's embedding and the centroid embedding
// of the adapter's task. Pairs are bucketed by weight in 0.05-wide buckets;
// rows are non-empty buckets, columns count/min/q1/median/q3/max. Metadata
// carries the Spearman correlation between bucket index and bucket median and
// the number of pairs skipped for unlabelled adapters.
ExperimentReport alignment_analysis(const Backbone& backbone, const AdapterPool& pool,
                                    const TaskSuite& suite, std::span<const SyntheticTask> tasks,
                                    const EngineConfig& config, const SampleSpec& samples);

enum class AblationAxis { kTokenPolicy, kTopK, kTargetBlock };
AblationAxis parse_ablation_axis(std::string_view name);
std::string_view ablation_axis_name(AblationAxis axis) noexcept;

// Exact-match accuracy (%) of route_and_generate's first token against the
// task rule, pooled over `tasks`.
double routed_accuracy(const Backbone& backbone, const AdapterPool& pool,
                       std::span<const SyntheticTask> tasks, const EngineConfig& config,
                       const SampleSpec& samples);
// Same for the backbone with no adapters.
double base_accuracy(const Backbone& backbone, std::span<const SyntheticTask> tasks,
                     const SampleSpec& samples);
// Fraction of samples whose own task's adapter (by label) is among route_only's top k.
double routing_hit_rate(const Backbone& backbone, const AdapterPool& pool,
                        std::span<const SyntheticTask> tasks, const EngineConfig& config,
                        const SampleSpec& samples);

// One row per axis value with the routed accuracy (%); metadata["spread"]
// is max - min.
ExperimentReport ablate(const Backbone& backbone, const AdapterPool& pool,
                        std::span<const SyntheticTask> tasks, const EngineConfig& config,
                        AblationAxis axis, std::span<const std::string> values,
                        const SampleSpec& samples);

struct TimingOptions {
  std::size_t prompt_length = 16;
  std::size_t repeats = 5;
  std::uint64_t seed = 7;
};

// Rows are generation lengths; columns routed_ms_per_token and
// base_ms_per_token. The routed figure charges probe and selection time to
// the request, i.e. (probe + select + sum of token times) / length. Each value
// is the median over `repeats` runs. Lengths must be ascending.
ExperimentReport timing_sweep(const Backbone& backbone, const AdapterPool& pool,
                              const SyntheticTask& task, std::span<const std::size_t> lengths,
                              const EngineConfig& config, const TimingOptions& options);

// Spearman rank correlation with average ranks for ties; 0 when undefined.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace loraroute::harness
