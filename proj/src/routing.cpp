// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loraroute/error.hpp"

namespace loraroute {

std::vector<std::size_t> top_k_indices(std::span<const double> scores,
                                       std::span<const std::string> ids, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "top-k: k must be >= 1");
  if (scores.size() != ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "top-k: score and id counts differ");
  }
  if (!all_finite(scores)) throw Error(ErrorCode::kInvalidArgument, "top-k: non-finite score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    before);
  order.resize(take);
  return order;
}

Vector normalize_weights(std::span<const double> scores) {
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::kInvalidArgument, "normalize_weights: scores must be finite and >= 0");
    }
    total += s;
  }
  Vector w(scores.size());
  if (total == 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(scores.size()));
    return w;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) w[i] = scores[i] / total;
  return w;
}

RoutingDecision select_topk(const SignalReport& report, std::size_t k) {
  if (report.entries.empty()) throw Error(ErrorCode::kEmptyInput, "select_topk: empty report");
  std::vector<double> scores;
  std::vector<std::string> ids;
  for (const auto& e : report.entries) {
    scores.push_back(e.score);
    ids.push_back(e.id);
  }
  const auto picked = top_k_indices(scores, ids, k);
  std::vector<double> picked_scores;
  for (std::size_t i : picked) picked_scores.push_back(scores[i]);
  const Vector weights = normalize_weights(picked_scores);

  RoutingDecision d;
  d.k = k;
  d.pool_revision = report.pool_revision;
  d.scoring = report.scoring;
  for (std::size_t r = 0; r < picked.size(); ++r) {
    d.selected.push_back({ids[picked[r]], scores[picked[r]], weights[r]});
  }
  return d;
}

namespace {

struct Weighted {
  std::shared_ptr<const LoraAdapter> adapter;
  double weight;
};

std::vector<Weighted> resolve(const AdapterPool& pool, const RoutingDecision& decision) {
  std::vector<Weighted> out;
  for (const auto& s : decision.selected) {
    auto adapter = pool.find(s.id);
    if (!adapter) {
      throw Error(ErrorCode::kStaleDecision,
                  "adapter " + s.id + " selected at pool revision " +
                      std::to_string(decision.pool_revision) + " is no longer in the pool");
    }
    out.push_back({std::move(adapter), s.weight});
  }
  return out;
}

}  // namespace

HookSet mixture_hooks(const AdapterPool& pool, const RoutingDecision& decision) {
  auto selected = std::make_shared<const std::vector<Weighted>>(resolve(pool, decision));
  HookSet hooks;
  for (std::size_t j = 0; j < pool.n_blocks(); ++j) {
    for (Site site : kAllSites) {
      hooks.push_back({j, site, [selected](const HookCall& call, std::span<double> delta) {
                         for (const auto& [adapter, weight] : *selected) {
                           adapter->accumulate_delta(call.block, call.site, call.input, weight,
                                                     delta);
                         }
                       }});
    }
  }
  return hooks;
}

FusedDelta fuse_parameters(const AdapterPool& pool, const RoutingDecision& decision) {
  const auto selected = resolve(pool, decision);
  FusedDelta fused;
  fused.d_model = pool.d_model();
  fused.n_blocks = pool.n_blocks();
  fused.updates.assign(fused.n_blocks * kNumSites, Matrix(fused.d_model, fused.d_model));
  for (std::size_t j = 0; j < fused.n_blocks; ++j) {
    for (Site site : kAllSites) {
      Matrix& dst = fused.updates[j * kNumSites + static_cast<std::size_t>(site)];
      for (const auto& [adapter, weight] : selected) {
        axpy(weight, adapter->dense_delta(j, site).data(), dst.data());
      }
    }
  }
  return fused;
}

HookSet fused_hooks(std::shared_ptr<const FusedDelta> fused) {
  HookSet hooks;
  for (std::size_t j = 0; j < fused->n_blocks; ++j) {
    for (Site site : kAllSites) {
      hooks.push_back({j, site, [fused](const HookCall& call, std::span<double> delta) {
                         const Matrix& m = fused->at(call.block, call.site);
                         for (std::size_t r = 0; r < m.rows(); ++r) {
                           delta[r] += dot(m.row(r), call.input);
                         }
                       }});
    }
  }
  return hooks;
}

nlohmann::json decision_to_json(const RoutingDecision& decision) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& s : decision.selected) {
    entries.push_back({{"id", s.id}, {"score", s.score}, {"weight", s.weight}});
  }
  return {{"pool_revision", decision.pool_revision},
          {"k", decision.k},
          {"scoring", scoring_name(decision.scoring)},
          {"entries", std::move(entries)}};
}

RoutingDecision decision_from_json(const nlohmann::json& record) {
  try {
    RoutingDecision d;
    d.pool_revision = record.at("pool_revision").get<std::uint64_t>();
    d.k = record.at("k").get<std::size_t>();
    d.scoring = parse_scoring(record.at("scoring").get<std::string>());
    for (const auto& e : record.at("entries")) {
      d.selected.push_back(
          {e.at("id").get<std::string>(), e.at("score").get<double>(), e.at("weight").get<double>()});
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, std::string("routing decision record: ") + e.what());
  }
}

}  // namespace loraroute
