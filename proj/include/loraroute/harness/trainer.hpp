// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/harness/synthetic.hpp"

namespace loraroute::harness {

enum class Optimizer { kSgd, kNormalized, kAdam };

struct ToyTrainingConfig {
  std::size_t rank = 4;
  std::size_t steps = 120;
  double learning_rate = 0.0015;
  std::size_t batch_size = 8;
  std::size_t seq_len = 8;
  double alpha = 1.0;
  // The up factor starts uniform in [-init_scale, init_scale]; down starts at zero.
  double init_scale = 0.5;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;  // L2 coefficient added to every factor gradient
  double clip_norm = 0.0;     // global gradient norm cap; 0 disables
  // kSgd is heavy-ball momentum 0.9. kNormalized is the same with every factor's
  // gradient rescaled to unit norm. kAdam uses beta (0.9, 0.999), eps 1e-8.
  Optimizer optimizer = Optimizer::kNormalized;
};

// Mean next-token cross-entropy over every in-band position of `samples`,
// where the label of an in-band token is task.next(token). Evaluated with
// Backbone::forward under `hooks`.
double task_loss(const Backbone& backbone, const SyntheticTask& task,
                 std::span<const TaskSample> samples, const HookSet& hooks = {});

struct LoraGradient {
  double loss = 0.0;
  std::vector<LoraFactors> grad;  // same indexing and shapes as the adapter's factors
};

// Loss as in task_loss with `adapter` attached at scale 1, and its analytic
// gradient with respect to every up/down factor. The backbone is frozen.
LoraGradient lora_loss_and_gradient(const Backbone& backbone, const LoraAdapter& adapter,
                                    const SyntheticTask& task,
                                    std::span<const TaskSample> samples);

// Optimizes the LoRA factors only. The adapter id and task label are task.id.
// Throws kInvalidArgument for steps == 0 or rank > d_model and kDivergence
// when the loss or a parameter becomes non-finite.
LoraAdapter train_toy_adapter(const Backbone& backbone, const SyntheticTask& task,
                              const ToyTrainingConfig& config);

// Trains one adapter per task and adds it to `pool`. Task t is trained with
// seed config.seed + t.band_begin.
void train_suite_into(AdapterPool& pool, const Backbone& backbone, const TaskSuite& suite,
                      const ToyTrainingConfig& config);

}  // namespace loraroute::harness
