// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/harness/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "loraroute/error.hpp"

namespace loraroute::harness {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Distinct, reproducible sample seeds per task row.
std::uint64_t row_seed(std::uint64_t base, std::size_t row) {
  return base * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL * (row + 1);
}

std::vector<TaskSample> samples_for(const SyntheticTask& task, std::size_t row,
                                    const SampleSpec& sampling) {
  if (sampling.count == 0) throw Error(ErrorCode::kEmptyInput, "sample count must be >= 1");
  return sample_task_set(task, sampling.count, sampling.length, row_seed(sampling.seed, row));
}

double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile(std::move(v), 0.5);
}

Vector average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Vector ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

ReferenceBundle build_reference(const ReferenceSetup& setup) {
  ReferenceBundle out{Backbone::initialize(setup.model, setup.backbone_seed),
                      make_task_suite(setup.n_tasks, setup.band_size, setup.model.vocab_size,
                                      setup.noise, setup.suite_seed),
                      std::make_unique<AdapterPool>(setup.model)};
  train_suite_into(*out.pool, out.backbone, out.suite, setup.training);
  return out;
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << report.row_axis;
  for (const auto& c : report.col_labels) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < report.values.rows(); ++r) {
    out << report.row_labels[r];
    for (std::size_t c = 0; c < report.values.cols(); ++c) {
      out << ',' << format_double(report.values(r, c));
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < report.values.rows(); ++r) {
    nlohmann::json row = {{report.row_axis, report.row_labels[r]}};
    for (std::size_t c = 0; c < report.values.cols(); ++c) {
      row[report.col_labels[c]] = report.values(r, c);
    }
    rows.push_back(std::move(row));
  }
  return {{"kind", report.kind},
          {"axes", {{"rows", report.row_axis}, {"columns", report.col_labels}}},
          {"rows", std::move(rows)},
          {"metadata", report.metadata}};
}

void write_report(const ExperimentReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  if (report.kind == "alignment" || report.kind == "timing") {
    out << report_to_json(report).dump(2) << '\n';
  } else {
    out << report_to_csv(report);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Matrix normalize_columns(const Matrix& grid) {
  Matrix out(grid.rows(), grid.cols());
  for (std::size_t c = 0; c < grid.cols(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t r = 0; r < grid.rows(); ++r) {
      lo = std::min(lo, grid(r, c));
      hi = std::max(hi, grid(r, c));
    }
    const double span = hi - lo;
    for (std::size_t r = 0; r < grid.rows(); ++r) {
      out(r, c) = span > 0.0 ? (grid(r, c) - lo) / span : 0.0;
    }
  }
  return out;
}

ExperimentReport signal_heatmap(const Backbone& backbone, const AdapterPool& pool,
                                std::span<const SyntheticTask> tasks, const SignalConfig& config,
                                const SampleSpec& samples) {
  const PoolSnapshot snap = pool.snapshot();
  if (tasks.size() < 2 || snap.adapters.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "heatmap needs >= 2 tasks and >= 2 adapters");
  }
  ExperimentReport report;
  report.kind = "heatmap";
  report.row_axis = "task";
  for (const auto& a : snap.adapters) report.col_labels.push_back(a->id());
  Matrix raw(tasks.size(), snap.adapters.size());
  for (std::size_t r = 0; r < tasks.size(); ++r) {
    report.row_labels.push_back(tasks[r].id);
    const auto set = samples_for(tasks[r], r, samples);
    for (const auto& s : set) {
      const SignalReport sig = probe(backbone, snap, s.tokens, config);
      for (std::size_t c = 0; c < sig.entries.size(); ++c) raw(r, c) += sig.entries[c].score;
    }
    for (std::size_t c = 0; c < raw.cols(); ++c) raw(r, c) /= static_cast<double>(set.size());
  }
  report.values = normalize_columns(raw);
  nlohmann::json raw_rows = nlohmann::json::array();
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    raw_rows.push_back(std::vector<double>(raw.row(r).begin(), raw.row(r).end()));
  }
  report.metadata = {{"raw", std::move(raw_rows)},
                     {"scoring", scoring_name(config.scoring)},
                     {"token_policy", token_policy_name(config.token_policy)},
                     {"target_block", config.resolve_target_block(backbone.config())},
                     {"samples_per_task", samples.count}};
  return report;
}

double diagonal_max_fraction(const ExperimentReport& heatmap, const AdapterPool& pool) {
  std::size_t matched = 0;
  std::size_t hits = 0;
  for (std::size_t c = 0; c < heatmap.col_labels.size(); ++c) {
    const auto adapter = pool.find(heatmap.col_labels[c]);
    if (!adapter) continue;
    const auto it = std::find(heatmap.row_labels.begin(), heatmap.row_labels.end(),
                              adapter->task_label());
    if (it == heatmap.row_labels.end()) continue;
    const auto own = static_cast<std::size_t>(it - heatmap.row_labels.begin());
    ++matched;
    bool is_max = true;
    for (std::size_t r = 0; r < heatmap.values.rows(); ++r) {
      if (r != own && heatmap.values(r, c) >= heatmap.values(own, c)) is_max = false;
    }
    if (is_max) ++hits;
  }
  return matched == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(matched);
}

ExperimentReport selection_counts(const Backbone& backbone, const AdapterPool& pool,
                                  const SyntheticTask& task, const EngineConfig& config,
                                  const SampleSpec& samples) {
  const PoolSnapshot snap = pool.snapshot();
  if (snap.adapters.empty()) throw Error(ErrorCode::kEmptyPool, "adapter pool is empty");
  const std::size_t ranks = std::min(config.k, snap.adapters.size());
  ExperimentReport report;
  report.kind = "selection_counts";
  report.row_axis = "adapter";
  std::map<std::string, std::size_t, std::less<>> row_of;
  for (const auto& a : snap.adapters) {
    row_of.emplace(a->id(), report.row_labels.size());
    report.row_labels.push_back(a->id());
  }
  for (std::size_t r = 1; r <= ranks; ++r) report.col_labels.push_back("rank" + std::to_string(r));
  report.values = Matrix(snap.adapters.size(), ranks);
  for (const auto& s : samples_for(task, 0, samples)) {
    const RoutingDecision d = select_topk(probe(backbone, snap, s.tokens, config.signal), config.k);
    for (std::size_t rank = 0; rank < d.selected.size(); ++rank) {
      report.values(row_of.at(d.selected[rank].id), rank) += 1.0;
    }
  }
  report.metadata = {{"task", task.id}, {"k", config.k}, {"samples", samples.count}};
  return report;
}

Vector task_embedding(const Backbone& backbone, std::span<const Token> tokens) {
  const HiddenTrace trace = backbone.forward(tokens);
  const Matrix& h = trace.final_hidden;
  Vector e(h.cols(), 0.0);
  for (std::size_t t = 0; t < h.rows(); ++t) axpy(1.0, h.row(t), e);
  for (double& x : e) x /= static_cast<double>(h.rows());
  return e;
}

ExperimentReport alignment_analysis(const Backbone& backbone, const AdapterPool& pool,
                                    const TaskSuite& suite, std::span<const SyntheticTask> tasks,
                                    const EngineConfig& config, const SampleSpec& samples) {
  const PoolSnapshot snap = pool.snapshot();
  if (snap.adapters.empty()) throw Error(ErrorCode::kEmptyPool, "adapter pool is empty");

  // Centroid embedding of each labelled adapter's task, from a separate sample draw.
  std::map<std::string, Vector, std::less<>> centroid;
  for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
    const auto& t = suite.tasks[i];
    SampleSpec ref = samples;
    ref.seed = samples.seed ^ 0x5A5A5A5A5A5A5A5AULL;
    Vector c(backbone.config().d_model, 0.0);
    const auto set = samples_for(t, i, ref);
    for (const auto& s : set) axpy(1.0, task_embedding(backbone, s.tokens), c);
    for (double& x : c) x /= static_cast<double>(set.size());
    centroid.emplace(t.id, std::move(c));
  }

  constexpr double kBucketWidth = 0.05;
  const auto n_buckets = static_cast<std::size_t>(std::llround(1.0 / kBucketWidth));
  std::vector<std::vector<double>> buckets(n_buckets);
  std::size_t skipped = 0;
  std::size_t pairs = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (const auto& s : samples_for(tasks[ti], ti, samples)) {
      const Vector emb = task_embedding(backbone, s.tokens);
      const RoutingDecision d =
          select_topk(probe(backbone, snap, s.tokens, config.signal), config.k);
      for (const auto& sel : d.selected) {
        const auto adapter = pool.find(sel.id);
        const auto it = adapter ? centroid.find(adapter->task_label()) : centroid.end();
        if (it == centroid.end()) {
          ++skipped;
          continue;
        }
        const auto b = std::min(n_buckets - 1, static_cast<std::size_t>(sel.weight / kBucketWidth));
        buckets[b].push_back(cosine_similarity(emb, it->second));
        ++pairs;
      }
    }
  }

  ExperimentReport report;
  report.kind = "alignment";
  report.row_axis = "weight_bucket";
  report.col_labels = {"lower", "count", "min", "q1", "median", "q3", "max"};
  std::vector<std::vector<double>> rows;
  Vector bucket_index;
  Vector bucket_median;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (buckets[b].empty()) continue;
    auto v = buckets[b];
    std::sort(v.begin(), v.end());
    const double lower = static_cast<double>(b) * kBucketWidth;
    char label[48];
    std::snprintf(label, sizeof(label), "[%.2f,%.2f)", lower, lower + kBucketWidth);
    report.row_labels.emplace_back(label);
    rows.push_back({lower, static_cast<double>(v.size()), v.front(), quantile(v, 0.25),
                    quantile(v, 0.5), quantile(v, 0.75), v.back()});
    bucket_index.push_back(static_cast<double>(b));
    bucket_median.push_back(rows.back()[4]);
  }
  report.values = Matrix(rows.size(), report.col_labels.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), report.values.row(r).begin());
  }
  report.metadata = {{"bucket_width", kBucketWidth},
                     {"pairs", pairs},
                     {"skipped_unlabeled", skipped},
                     {"spearman_bucket_vs_median", spearman(bucket_index, bucket_median)},
                     {"k", config.k},
                     {"scoring", scoring_name(config.signal.scoring)}};
  return report;
}

AblationAxis parse_ablation_axis(std::string_view name) {
  if (name == "token_policy") return AblationAxis::kTokenPolicy;
  if (name == "k") return AblationAxis::kTopK;
  if (name == "target_block") return AblationAxis::kTargetBlock;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown ablation axis '" + std::string(name) + "' (token_policy|k|target_block)");
}

std::string_view ablation_axis_name(AblationAxis axis) noexcept {
  switch (axis) {
    case AblationAxis::kTokenPolicy: return "token_policy";
    case AblationAxis::kTopK: return "k";
    case AblationAxis::kTargetBlock: return "target_block";
  }
  return "?";
}

double routed_accuracy(const Backbone& backbone, const AdapterPool& pool,
                       std::span<const SyntheticTask> tasks, const EngineConfig& config,
                       const SampleSpec& samples) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (const auto& s : samples_for(tasks[ti], ti, samples)) {
      const RouteResult r = route_and_generate(backbone, pool, s.tokens, config, 1);
      correct += r.output_tokens.front() == s.target ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double base_accuracy(const Backbone& backbone, std::span<const SyntheticTask> tasks,
                     const SampleSpec& samples) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (const auto& s : samples_for(tasks[ti], ti, samples)) {
      const GenerateResult g = backbone.generate(s.tokens, {}, 1);
      correct += g.tokens.front() == s.target ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double routing_hit_rate(const Backbone& backbone, const AdapterPool& pool,
                        std::span<const SyntheticTask> tasks, const EngineConfig& config,
                        const SampleSpec& samples) {
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (const auto& s : samples_for(tasks[ti], ti, samples)) {
      const RoutingDecision d = route_only(backbone, pool, s.tokens, config);
      const bool hit = std::any_of(d.selected.begin(), d.selected.end(), [&](const auto& sel) {
        const auto a = pool.find(sel.id);
        return a && a->task_label() == tasks[ti].id;
      });
      hits += hit ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

ExperimentReport ablate(const Backbone& backbone, const AdapterPool& pool,
                        std::span<const SyntheticTask> tasks, const EngineConfig& config,
                        AblationAxis axis, std::span<const std::string> values,
                        const SampleSpec& samples) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "ablation needs >= 1 axis value");
  std::vector<EngineConfig> configs;
  for (const auto& v : values) {
    EngineConfig c = config;
    switch (axis) {
      case AblationAxis::kTokenPolicy:
        c.signal.token_policy = parse_token_policy(v);
        break;
      case AblationAxis::kTopK: {
        std::size_t k = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), k);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size() || k == 0) {
          throw Error(ErrorCode::kInvalidArgument, "k must be a positive integer, got '" + v + "'");
        }
        c.k = k;
        break;
      }
      case AblationAxis::kTargetBlock: {
        std::size_t j = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), j);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
          throw Error(ErrorCode::kInvalidArgument, "target block must be an integer, got '" + v + "'");
        }
        c.signal.target_block = j;
        c.signal.resolve_target_block(backbone.config());
        break;
      }
    }
    configs.push_back(c);
  }

  ExperimentReport report;
  report.kind = "ablation";
  report.row_axis = std::string(ablation_axis_name(axis));
  report.col_labels = {"accuracy_pct"};
  report.values = Matrix(values.size(), 1);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    report.row_labels.push_back(values[i]);
    const double acc = routed_accuracy(backbone, pool, tasks, configs[i], samples);
    report.values(i, 0) = acc;
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  report.metadata = {{"axis", report.row_axis},
                     {"spread_pp", hi - lo},
                     {"samples_per_task", samples.count},
                     {"tasks", tasks.size()}};
  return report;
}

ExperimentReport timing_sweep(const Backbone& backbone, const AdapterPool& pool,
                              const SyntheticTask& task, std::span<const std::size_t> lengths,
                              const EngineConfig& config, const TimingOptions& options) {
  if (lengths.empty() || options.repeats == 0) {
    throw Error(ErrorCode::kInvalidArgument, "timing sweep needs lengths and repeats >= 1");
  }
  const std::size_t max_len = backbone.config().max_seq_len;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0 || (i > 0 && lengths[i] <= lengths[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "timing lengths must be positive and ascending");
    }
    if (options.prompt_length + lengths[i] > max_len) {
      throw Error(ErrorCode::kContextOverflow,
                  "prompt " + std::to_string(options.prompt_length) + " + length " +
                      std::to_string(lengths[i]) + " exceeds max_seq_len " +
                      std::to_string(max_len));
    }
  }
  std::mt19937_64 rng(options.seed);
  const TaskSample prompt = sample_task(task, options.prompt_length, rng);

  ExperimentReport report;
  report.kind = "timing";
  report.row_axis = "generated_tokens";
  report.col_labels = {"routed_ms_per_token", "base_ms_per_token"};
  report.values = Matrix(lengths.size(), 2);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::size_t len = lengths[i];
    std::vector<double> routed;
    std::vector<double> base;
    for (std::size_t rep = 0; rep < options.repeats; ++rep) {
      const RouteResult r = route_and_generate(backbone, pool, prompt.tokens, config, len);
      double total = r.timings.probe_ms + r.timings.select_merge_ms;
      for (double t : r.timings.per_token_ms) total += t;
      routed.push_back(total / static_cast<double>(len));

      const GenerateResult g = backbone.generate(prompt.tokens, {}, len);
      double base_total = 0.0;
      for (double t : g.per_token_ms) base_total += t;
      base.push_back(base_total / static_cast<double>(len));
    }
    report.row_labels.push_back(std::to_string(len));
    report.values(i, 0) = median_of(routed);
    report.values(i, 1) = median_of(base);
  }
  report.metadata = {{"prompt_length", options.prompt_length},
                     {"repeats", options.repeats},
                     {"k", config.k},
                     {"merge_mode", merge_mode_name(config.merge_mode)}};
  if (lengths.size() >= 2) {
    const std::size_t last = lengths.size() - 1;
    bool dominated = true;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      dominated = dominated && report.values(i, 0) >= report.values(i, 1);
    }
    report.metadata["amortized"] = report.values(last, 0) < report.values(0, 0);
    report.metadata["routed_at_or_above_base"] = dominated;
  }
  return report;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "spearman: lengths " + std::to_string(x.size()) +
                                                   " and " + std::to_string(y.size()));
  }
  if (x.size() < 2) return 0.0;
  const Vector rx = average_ranks(x);
  const Vector ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace loraroute::harness
